"""NegMix: convex noise mixing followed by patch-based random central rotation.

Each frame is cut into an s x s grid of square patches. Every patch draws a
practical probability p in (0, 1] and an angle index in {0, 1, 2, 3}; it is
rotated counter-clockwise by 90 degrees * angle when p <= P. With
``temporal_lock`` one decision per grid site is shared by all frames.

Decisions come from streams derived per (frame, site), so they do not depend
on evaluation order, and they are returned so the exact transform can be
replayed on another tensor or undone.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.core import VideoSequence, clamp01
from src.errors import InvalidArgumentError

P_GRID = tuple(i / 10 for i in range(11))
ANGLES = (0, 90, 180, 270)


def _invalid(message, field=None):
    return InvalidArgumentError(message, module="negmix", field=field)


def _on_grid(p):
    return 0.0 <= p <= 1.0 and abs(p * 10 - round(p * 10)) < 1e-9


@dataclass(frozen=True)
class NegMixConfig:
    """Mixing weight ``m``, rotation probability ``p`` and patch grid ``patch_scale``.

    ``p = None`` draws P from the 0.1-step grid once per clip.
    """

    m: float = 0.5
    p: float = 0.5
    patch_scale: int = 4
    temporal_lock: bool = False

    def validate(self):
        if not 0.0 <= self.m <= 1.0:
            raise _invalid(f"mixing weight m must be in [0, 1], got {self.m}", "m")
        if self.p is not None and not _on_grid(self.p):
            raise _invalid(f"rotation probability p must be one of {list(P_GRID)}, got {self.p}", "p")
        if int(self.patch_scale) != self.patch_scale or self.patch_scale < 1:
            raise _invalid(f"patch_scale must be a positive integer, got {self.patch_scale}",
                           "patch_scale")
        return self

    def to_dict(self):
        return {"m": self.m, "p": self.p, "patch_scale": self.patch_scale,
                "temporal_lock": self.temporal_lock}


@dataclass(frozen=True)
class PatchDecision:
    frame: int
    site: int
    p: float
    rotate: bool
    angle: int

    def to_dict(self):
        return {"frame": self.frame, "site": self.site, "p": self.p,
                "rotate": self.rotate, "angle": self.angle}

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["frame"]), int(data["site"]), float(data["p"]),
                   bool(data["rotate"]), int(data["angle"]))


def mix_noise(v, nsq, m):
    """M * nsq + (1 - M) * v, elementwise"""
    if v.shape != nsq.shape:
        raise _invalid(f"clip shape {v.shape} and noise shape {nsq.shape} differ", "shape")
    if not 0.0 <= m <= 1.0:
        raise _invalid(f"mixing weight m must be in [0, 1], got {m}", "m")
    return VideoSequence(clamp01(m * nsq.data + (1.0 - m) * v.data))


def _check_grid(shape, s):
    n, c, h, w = shape
    if s < 1 or h % s or w % s:
        raise _invalid(f"{h}x{w} frames cannot be split into a {s}x{s} patch grid", "patch_scale")
    if h // s != w // s:
        raise _invalid(f"{s}x{s} grid on {h}x{w} frames gives non-square patches", "patch_scale")
    return h // s


def _to_patches(data, s):
    n, c, h, w = data.shape
    ph, pw = h // s, w // s
    grid = data.reshape(n, c, s, ph, s, pw).transpose(0, 2, 4, 1, 3, 5)
    return grid.reshape(n * s * s, c, ph, pw)


def _from_patches(patches, shape, s):
    n, c, h, w = shape
    ph, pw = h // s, w // s
    grid = patches.reshape(n, s, s, c, ph, pw).transpose(0, 3, 1, 4, 2, 5)
    return grid.reshape(n, c, h, w)


def partition(v, s):
    """n * s^2 patches (frame-major, then row-major grid), shaped (N, c, h/s, w/s)"""
    n, c, h, w = v.shape
    if s < 1 or h % s or w % s:
        raise _invalid(f"{h}x{w} frames cannot be split into a {s}x{s} patch grid", "patch_scale")
    return _to_patches(v.data, s)


def rotate_patch(patch, k):
    """Counter-clockwise rotation by 90 * k degrees over the last two axes"""
    patch = np.asarray(patch)
    if patch.shape[-1] != patch.shape[-2]:
        raise _invalid(f"rotation needs a square patch, got {patch.shape[-2:]}", "patch")
    return np.rot90(patch, k % 4, axes=(-2, -1))


def draw_decisions(shape, cfg, stream, p=None):
    """One PatchDecision per patch in frame-major, row-major order"""
    n = shape[0]
    s = int(cfg.patch_scale)
    _check_grid(shape, s)
    threshold = cfg.p if p is None else p
    sites = s * s
    shared = {}
    decisions = []
    for frame in range(n):
        for site in range(sites):
            if cfg.temporal_lock:
                if site not in shared:
                    shared[site] = _draw(stream.child("negmix", -1, site))
                p_draw, angle = shared[site]
            else:
                p_draw, angle = _draw(stream.child("negmix", frame, site))
            decisions.append(PatchDecision(frame, site, p_draw, p_draw <= threshold, angle))
    return decisions


def _draw(stream):
    p_draw = 1.0 - stream.next_uniform()
    angle = stream.next_choice(len(ANGLES))
    return p_draw, angle


def apply_decisions(v, decisions, s, inverse=False):
    """Replay recorded decisions; ``inverse=True`` undoes them exactly"""
    _check_grid(v.shape, s)
    patches = _to_patches(v.data, s).copy()
    if len(decisions) != patches.shape[0]:
        raise _invalid(f"{len(decisions)} decisions for {patches.shape[0]} patches", "decisions")
    for k in (1, 2, 3):
        idx = [i for i, d in enumerate(decisions) if d.rotate and d.angle % 4 == k]
        if idx:
            turns = -k if inverse else k
            patches[idx] = np.rot90(patches[idx], turns % 4, axes=(-2, -1))
    return VideoSequence(_from_patches(patches, v.shape, s))


def clip_probability(cfg, stream):
    """The clip's P: fixed by config, or drawn from the 0.1-step grid"""
    if cfg.p is not None:
        return cfg.p
    return P_GRID[stream.child("negmix-p").next_choice(len(P_GRID))]


def neg_augment(v, cfg, stream):
    """Patch-based random central rotation; returns (V_out, decisions)"""
    cfg.validate()
    p = clip_probability(cfg, stream)
    decisions = draw_decisions(v.shape, cfg, stream, p)
    if p == 0:
        return v, decisions
    out = apply_decisions(v, decisions, int(cfg.patch_scale))
    rotated = sum(1 for d in decisions if d.rotate)
    logging.debug(f"Neg augment: P={p}, {rotated}/{len(decisions)} patches rotated")
    return out, decisions


def negmix(v, nsq, cfg, stream):
    """V_neg = Neg(M * N_sq + (1 - M) * V_lr, P) with one decision set"""
    mixed = mix_noise(v, nsq, cfg.m)
    out, _ = neg_augment(mixed, cfg, stream)
    return out


def sweep_grid(frame, noise_frame, cfg, stream, ms=None, ps=P_GRID, separator=2):
    """Tile NegMix results: one row per M, one column per P, white separators.

    Every cell replays the same stream, so columns differ only by P.
    Returns a planar (c, H, W) float array.
    """
    ms = [cfg.m] if ms is None else list(ms)
    c, h, w = frame.shape
    rows = len(ms)
    cols = len(ps)
    canvas = np.ones((c, rows * h + (rows - 1) * separator, cols * w + (cols - 1) * separator))
    clip = VideoSequence(frame.data[None])
    noise = VideoSequence(noise_frame.data[None])
    for r, m in enumerate(ms):
        mixed = mix_noise(clip, noise, m)
        for col, p in enumerate(ps):
            cell_cfg = NegMixConfig(m=m, p=p, patch_scale=cfg.patch_scale,
                                    temporal_lock=cfg.temporal_lock)
            out, _ = neg_augment(mixed, cell_cfg, stream.child("grid", r))
            y0 = r * (h + separator)
            x0 = col * (w + separator)
            canvas[:, y0:y0 + h, x0:x0 + w] = out.data[0]
    return canvas


def fit_noise(nsq, shape):
    """Tile a noise sequence over time and space, then crop it to ``shape``"""
    n, c, h, w = shape
    if nsq.channels != c:
        raise _invalid(f"noise has {nsq.channels} channels, clip has {c}", "channels")
    if nsq.shape == tuple(shape):
        return nsq
    reps = (-(-n // nsq.n), 1, -(-h // nsq.height), -(-w // nsq.width))
    return VideoSequence(np.tile(nsq.data, reps)[:n, :, :h, :w])
