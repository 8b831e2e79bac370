"""Sequential noise extraction.

A window sequence is one spatial window followed through every frame of a
video. Windows with low variance are noise-prone: sensor noise dominates the
texture there. A sequence becomes a noise sequence when every window is
noise-prone and bright enough, and when the per-window variance and mean stay
steady over time. Accepted sequences are copied into a NoiseBank.

Variances are population variances (divide by count).
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.core import VideoSequence
from src.errors import InvalidArgumentError
from src.sequence_io import NoiseBank, NoiseEntryMeta


def _pair(value, name):
    if isinstance(value, (int, np.integer)):
        pair = (int(value), int(value))
    else:
        pair = tuple(int(v) for v in value)
    if len(pair) != 2 or min(pair) < 1:
        raise InvalidArgumentError(f"{name} must be a positive (h, w) pair, got {value}",
                                   module="noise_extract")
    return pair


@dataclass(frozen=True)
class NoiseThresholds:
    sigma: float = 0.01
    mu: float = 0.05
    sigma_var: float = 1e-5
    sigma_mean: float = 1e-4

    def validate(self):
        for name in ("sigma", "mu", "sigma_var", "sigma_mean"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidArgumentError(f"{name} must be >= 0, got {value}",
                                           module="noise_extract", field=name)
        return self

    def to_dict(self):
        return {"sigma": self.sigma, "mu": self.mu,
                "sigma_var": self.sigma_var, "sigma_mean": self.sigma_mean}


@dataclass(frozen=True, eq=False)
class WindowSequence:
    """Views of one window across all frames, shaped (n, c, h, w)"""

    origin: tuple
    size: tuple
    windows: np.ndarray

    @property
    def n(self):
        return self.windows.shape[0]


@dataclass(frozen=True, eq=False)
class SequenceStats:
    variances: np.ndarray
    means: np.ndarray
    var_of_variances: float
    var_of_means: float


def tile_windows(video, win, stride=None):
    """Scan ``video`` with a fixed window; origins in row-major order.

    The default stride equals the window, giving the non-overlapping tiling
    with floor(H/h) * floor(W/w) sequences. Remainders at the right and bottom
    edges are dropped.
    """
    h, w = _pair(win, "window")
    sy, sx = _pair(stride if stride is not None else (h, w), "stride")
    if h > video.height or w > video.width:
        raise InvalidArgumentError(
            f"window {h}x{w} larger than frame {video.height}x{video.width}",
            module="noise_extract",
        )
    sequences = []
    for y in range(0, video.height - h + 1, sy):
        for x in range(0, video.width - w + 1, sx):
            view = video.data[:, :, y:y + h, x:x + w]
            sequences.append(WindowSequence(origin=(x, y), size=(h, w), windows=view))
    return sequences


def sequence_stats(ws):
    flat = ws.windows.reshape(ws.n, -1)
    means = flat.mean(axis=1)
    variances = flat.var(axis=1)
    return SequenceStats(
        variances=variances,
        means=means,
        var_of_variances=float(np.var(variances)),
        var_of_means=float(np.var(means)),
    )


def accept_sequence(stats, thr):
    """Conjunction of the four acceptance predicates"""
    return bool(
        np.all(stats.variances < thr.sigma)
        and np.all(stats.means > thr.mu)
        and stats.var_of_variances <= thr.sigma_var
        and stats.var_of_means <= thr.sigma_mean
    )


def extract_noise_bank(video, win, thr, stride=None, residual=False, source_id="video0"):
    """Copy every accepted window sequence of ``video`` into a new bank"""
    thr.validate()
    sequences = tile_windows(video, win, stride)
    h, w = sequences[0].size
    dims = (video.n, video.channels, h, w)

    accepted = []
    entries = []
    for ws in sequences:
        stats = sequence_stats(ws)
        if not accept_sequence(stats, thr):
            logging.debug(
                f"Rejected window at {ws.origin}: max var {stats.variances.max():.3g}, "
                f"min mean {stats.means.min():.3g}"
            )
            continue
        data = np.array(ws.windows)
        if residual:
            data = data - stats.means[:, None, None, None]
        accepted.append(data)
        entries.append(NoiseEntryMeta(
            source_id=source_id,
            origin=ws.origin,
            means=tuple(float(m) for m in stats.means),
            variances=tuple(float(v) for v in stats.variances),
        ))

    payload = np.stack(accepted) if accepted else np.zeros((0,) + dims)
    logging.info(f"Accepted {len(accepted)} of {len(sequences)} window sequences from {source_id}")
    return NoiseBank(
        dims=dims,
        data=payload,
        entries=tuple(entries),
        thresholds=thr.to_dict(),
        window=(h, w),
        mode="residual" if residual else "raw",
    )


def _extract_job(job):
    data, win, thr, stride, residual, source_id = job
    return extract_noise_bank(VideoSequence(data), win, thr, stride, residual, source_id)


def extract_noise_bank_many(videos, win, thr, stride=None, residual=False, source_ids=None, pool=None):
    """Extract from several videos and concatenate the banks in video order"""
    videos = list(videos)
    if not videos:
        raise InvalidArgumentError("no videos to extract from", module="noise_extract")
    if source_ids is None:
        source_ids = [f"video{i}" for i in range(len(videos))]
    jobs = [(v.data, win, thr, stride, residual, sid) for v, sid in zip(videos, source_ids)]
    if pool is None:
        banks = [_extract_job(job) for job in jobs]
    else:
        banks = pool.map(_extract_job, jobs)
    return NoiseBank.concatenate(banks)
