import multiprocessing as mp
import signal
import logging


def _worker_init():
    """Reset signal handlers to default for child process"""
    signal.signal(signal.SIGINT, signal.SIG_DFL)
    signal.signal(signal.SIGTERM, signal.SIG_DFL)


class ClipPool:
    """Fan per-clip / per-video jobs out to worker processes.

    With ``workers <= 1`` jobs run inline in the calling process. Results come
    back in job order either way, so reductions over them are reproducible.
    """

    def __init__(self, workers=1):
        self.workers = max(int(workers), 1)
        self.pool = None

    def start(self):
        if self.workers > 1 and self.pool is None:
            self.pool = mp.Pool(processes=self.workers, initializer=_worker_init)
            logging.info(f"Started {self.workers} worker processes")
        return self

    def map(self, func, jobs):
        jobs = list(jobs)
        if self.pool is None:
            return [func(job) for job in jobs]
        return self.pool.map(func, jobs)

    def stop(self):
        if self.pool is not None:
            self.pool.close()
            self.pool.join()
            self.pool = None
            logging.info("Worker processes stopped")

    def __enter__(self):
        return self.start()

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and self.pool is not None:
            self.pool.terminate()
            self.pool.join()
            self.pool = None
        self.stop()
        return False
