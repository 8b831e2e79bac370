"""Reference-based quality measures and noise-bank diagnostics."""

import logging
from dataclasses import dataclass

import cv2
import numpy as np

from src.core import Frame, VideoSequence
from src.errors import InvalidArgumentError
from src.noise_extract import accept_sequence, sequence_stats, tile_windows

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
HISTOGRAM_BINS = 10
MEAN_RANGE = (0.0, 1.0)
VARIANCE_RANGE = (0.0, 0.25)


def _invalid(message, field=None):
    return InvalidArgumentError(message, module="metrics", field=field)


def _frames(a, b):
    a = a if isinstance(a, Frame) else Frame(a)
    b = b if isinstance(b, Frame) else Frame(b)
    if a.shape != b.shape:
        raise _invalid(f"shape mismatch: {a.shape} vs {b.shape}", "shape")
    return a, b


def psnr(a, b):
    """10 * log10(1 / MSE) on the [0, 1] scale, capped at 99 dB"""
    a, b = _frames(a, b)
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def _ssim_kernel():
    return cv2.getGaussianKernel(SSIM_WINDOW, SSIM_SIGMA, ktype=cv2.CV_64F)


def _window_mean(plane, kernel):
    radius = SSIM_WINDOW // 2
    filtered = cv2.sepFilter2D(plane, cv2.CV_64F, kernel, kernel, borderType=cv2.BORDER_REFLECT_101)
    return filtered[radius:-radius, radius:-radius]


def ssim_map(a, b):
    """Per-channel SSIM maps over every full 11x11 window, shaped (c, h - 10, w - 10)"""
    a, b = _frames(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise _invalid(
            f"ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.height}x{a.width}",
            "shape",
        )
    kernel = _ssim_kernel()
    maps = []
    for x, y in zip(a.data, b.data):
        x = x.copy()
        y = y.copy()
        mu_x = _window_mean(x, kernel)
        mu_y = _window_mean(y, kernel)
        var_x = _window_mean(x * x, kernel) - mu_x * mu_x
        var_y = _window_mean(y * y, kernel) - mu_y * mu_y
        cov = _window_mean(x * y, kernel) - mu_x * mu_y
        num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
        maps.append(num / den)
    return np.stack(maps)


def ssim(a, b):
    return float(np.clip(ssim_map(a, b).mean(), -1.0, 1.0))


def variance_map(frame, win):
    """Population variance of each tile, laid out like the tile grid"""
    frame = frame if isinstance(frame, Frame) else Frame(frame)
    video = VideoSequence(frame.data[None])
    sequences = tile_windows(video, win)
    rows = len({ws.origin[1] for ws in sequences})
    values = np.array([sequence_stats(ws).variances[0] for ws in sequences])
    return values.reshape(rows, -1)


def _histogram(values, value_range, bins=HISTOGRAM_BINS):
    if values.size == 0:
        return {"edges": [], "counts": []}
    lo, hi = value_range
    counts, edges = np.histogram(np.clip(values, lo, hi), bins=bins, range=value_range)
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def bank_report(bank, bins=HISTOGRAM_BINS):
    """Entry count, per-frame mean/variance histograms and the echoed thresholds.

    Values outside the histogram range are counted in the edge bins, so the
    bin totals always equal count * n.
    """
    n, c, h, w = bank.dims
    flat = bank.data.astype(np.float64).reshape(bank.count, n, c * h * w)
    means = flat.mean(axis=2).ravel()
    variances = flat.var(axis=2).ravel()
    return {
        "count": bank.count,
        "dims": list(bank.dims),
        "mode": bank.mode,
        "thresholds": dict(bank.thresholds),
        "mean_histogram": _histogram(means, MEAN_RANGE, bins),
        "variance_histogram": _histogram(variances, VARIANCE_RANGE, bins),
    }


def window_statistics_report(video, win, thresholds, stride=None, bins=HISTOGRAM_BINS):
    """Per-window statistics of a video, for picking extraction thresholds"""
    sequences = tile_windows(video, win, stride)
    stats = [sequence_stats(ws) for ws in sequences]
    means = np.concatenate([s.means for s in stats])
    variances = np.concatenate([s.variances for s in stats])
    accepted = [accept_sequence(s, thresholds) for s in stats]
    logging.info(f"Calibration: {sum(accepted)} of {len(sequences)} window sequences pass")
    return {
        "window": list(sequences[0].size),
        "sequences": len(sequences),
        "accepted": int(sum(accepted)),
        "thresholds": thresholds.to_dict(),
        "mean_histogram": _histogram(means, MEAN_RANGE, bins),
        "variance_histogram": _histogram(variances, VARIANCE_RANGE, bins),
        "per_sequence": [
            {
                "origin": list(ws.origin),
                "max_variance": float(s.variances.max()),
                "min_mean": float(s.means.min()),
                "var_of_variances": s.var_of_variances,
                "var_of_means": s.var_of_means,
                "accepted": ok,
            }
            for ws, s, ok in zip(sequences, stats, accepted)
        ],
    }


@dataclass(frozen=True, eq=False)
class MetricReport:
    psnr: float
    ssim: float
    variance_map: np.ndarray

    def to_dict(self):
        return {"psnr": self.psnr, "ssim": self.ssim,
                "variance_map": self.variance_map.tolist()}


def evaluate(restored, reference, win=(16, 16)):
    """Frame-averaged PSNR and SSIM of two clips plus the first restored frame's variance map"""
    if restored.shape != reference.shape:
        raise _invalid(f"shape mismatch: {restored.shape} vs {reference.shape}", "shape")
    psnrs = [psnr(a, b) for a, b in zip(restored.frames, reference.frames)]
    ssims = [ssim(a, b) for a, b in zip(restored.frames, reference.frames)]
    report = MetricReport(
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        variance_map=variance_map(restored.frame(0), win),
    )
    logging.info(f"Evaluated {restored.n} frames: PSNR {report.psnr:.3f} dB, SSIM {report.ssim:.4f}")
    return report
