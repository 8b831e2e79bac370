"""Deterministic synthetic frames and clips for demos and tests."""

import numpy as np

from src.core import Frame, VideoSequence, clamp01
from src.errors import InvalidArgumentError


def checkerboard(h, w, cell=1):
    """0/1 checkerboard with square cells of ``cell`` pixels"""
    y, x = np.mgrid[0:h, 0:w]
    return (((y // cell) + (x // cell)) % 2).astype(np.float64)


def _scene(c, h, w, params, t=0.0):
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    y /= max(h - 1, 1)
    x /= max(w - 1, 1)
    planes = []
    for ch in range(c):
        gx, gy, fx, fy, phase, amp, tex = params[ch]
        plane = 0.25 + 0.3 * (gx * x + gy * y)
        plane += amp * np.sin(2 * np.pi * (fx * x + fy * y) + phase + t)
        plane += tex * np.sin(2 * np.pi * 6.0 * x + 1.3 * t) * np.cos(2 * np.pi * 5.0 * y)
        planes.append(plane)
    return clamp01(np.stack(planes))


def _scene_params(c, stream):
    draws = stream.uniform(c * 7).reshape(c, 7)
    return [
        (d[0], d[1], 0.5 + 1.5 * d[2], 0.5 + 1.5 * d[3], 2 * np.pi * d[4],
         0.1 + 0.1 * d[5], 0.02 + 0.03 * d[6])
        for d in draws
    ]


def natural_frame(c, h, w, stream):
    """Smooth gradients, low-frequency sinusoids and mild texture in [0, 1]"""
    return Frame(_scene(c, h, w, _scene_params(c, stream)))


def natural_clip(n, c, h, w, stream):
    """n natural frames whose sinusoids drift slowly over time"""
    params = _scene_params(c, stream)
    return VideoSequence(np.stack([_scene(c, h, w, params, t=0.15 * i) for i in range(n)]))


def half_flat_video(n, c, h, w, window, noise_std, stream):
    """Left half flat 0.5 plus Gaussian noise, right half a 0/1 checkerboard.

    With ``window`` dividing the half width, every left-half window is a
    noise sequence and every right-half window is texture.
    """
    if w % 2 or (w // 2) % window or h % window:
        raise InvalidArgumentError(f"{h}x{w} frames do not tile into {window}x{window} windows per half",
                                   module="synthetic")
    data = np.empty((n, c, h, w))
    half = w // 2
    data[..., :half] = 0.5 + noise_std * stream.normal(n * c * h * half).reshape(n, c, h, half)
    data[..., half:] = checkerboard(h, half)
    return VideoSequence(clamp01(data))
