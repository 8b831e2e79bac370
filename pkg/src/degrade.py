"""Classical degradation kernels and high-order chains (HR clip -> LR clip).

Conventions pinned here so independent runs agree:

* Gaussian blur: separable, radius ceil(3 sigma), reflect-101 borders.
* Resize: half-pixel centers, edge replication, bicubic with a = -0.5,
  no antialiasing.
* JPEG: BT.601 full-range YCbCr, 8x8 orthonormal DCT, libjpeg quality
  scaling of the standard tables, edge-replicated padding, no chroma
  subsampling and no entropy coding.

Op parameters are drawn once per clip; noise samples come from streams
derived per (frame, op), so every frame of a clip sees the same degradation
with fresh noise.
"""

import functools
import logging
import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from src.core import Frame, VideoSequence, clamp01, derive_stream
from src.errors import InvalidArgumentError

OP_KINDS = ("gaussian_blur", "resize", "gaussian_noise", "poisson_noise", "jpeg_sim")
RESIZE_METHODS = ("nearest", "bilinear", "bicubic")
BICUBIC_A = -0.5

# parameter each kind samples from its template range
OP_PARAMETER = {
    "gaussian_blur": "sigma",
    "resize": "scale",
    "gaussian_noise": "level",
    "poisson_noise": "level",
    "jpeg_sim": "quality",
}

# legal parameter ranges per kind
OP_LIMITS = {
    "gaussian_blur": (0.0, 50.0),
    "resize": (1e-3, 8.0),
    "gaussian_noise": (0.0, 1.0),
    "poisson_noise": (0.0, 1e6),
    "jpeg_sim": (1, 100),
}

JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

JPEG_CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)

_RGB_TO_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCBCR_OFFSET = np.array([0.0, 128.0, 128.0])
_YCBCR_TO_RGB = np.linalg.inv(_RGB_TO_YCBCR)


def _invalid(message, field=None):
    return InvalidArgumentError(message, module="degrade", field=field)


# Blur

def gaussian_kernel(sigma):
    """Normalized 1-D Gaussian taps for radius ceil(3 sigma)"""
    radius = max(int(math.ceil(3.0 * sigma)), 1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(frame, sigma):
    if sigma < 0:
        raise _invalid(f"blur sigma must be >= 0, got {sigma}", "sigma")
    if sigma == 0:
        return frame
    k = gaussian_kernel(sigma)
    planes = [
        cv2.sepFilter2D(plane.copy(), cv2.CV_64F, k, k, borderType=cv2.BORDER_REFLECT_101)
        for plane in frame.data
    ]
    return Frame(clamp01(np.stack(planes)))


# Resize

def cubic_weight(x, a=BICUBIC_A):
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


@functools.lru_cache(maxsize=256)
def resize_matrix(n_in, n_out, method):
    """(n_out, n_in) interpolation matrix along one axis"""
    if method not in RESIZE_METHODS:
        raise _invalid(f"unknown resize method {method!r}", "method")
    ratio = n_in / n_out
    dst = np.arange(n_out)
    src = (dst + 0.5) * ratio - 0.5
    weights = np.zeros((n_out, n_in))

    if method == "nearest":
        idx = np.clip(np.floor((dst + 0.5) * ratio).astype(np.int64), 0, n_in - 1)
        weights[dst, idx] = 1.0
    elif method == "bilinear":
        x0 = np.floor(src)
        t = src - x0
        for offset, w in ((0, 1.0 - t), (1, t)):
            idx = np.clip(x0.astype(np.int64) + offset, 0, n_in - 1)
            np.add.at(weights, (dst, idx), w)
    else:
        x0 = np.floor(src)
        for offset in (-1, 0, 1, 2):
            tap = x0 + offset
            idx = np.clip(tap.astype(np.int64), 0, n_in - 1)
            np.add.at(weights, (dst, idx), cubic_weight(src - tap))

    weights.flags.writeable = False
    return weights


def resized_shape(height, width, scale):
    if scale <= 0:
        raise _invalid(f"resize scale must be > 0, got {scale}", "scale")
    out = (int(math.floor(height * scale + 0.5)), int(math.floor(width * scale + 0.5)))
    if min(out) < 1:
        raise _invalid(f"scale {scale} shrinks {height}x{width} to {out[0]}x{out[1]}", "scale")
    return out


def resample(data, size, method):
    """Unclamped separable resampling of (..., h, w) data to ``size``"""
    oh, ow = size
    wy = resize_matrix(data.shape[-2], oh, method)
    wx = resize_matrix(data.shape[-1], ow, method)
    return np.matmul(np.matmul(wy, data), wx.T)


def resize(frame, scale=None, method="bicubic", size=None):
    if method not in RESIZE_METHODS:
        raise _invalid(f"unknown resize method {method!r}", "method")
    if size is None:
        if scale is None:
            raise _invalid("resize needs a scale or a target size", "scale")
        size = resized_shape(frame.height, frame.width, scale)
    elif min(size) < 1:
        raise _invalid(f"resize target {size} has a zero dimension", "size")
    return Frame(clamp01(resample(frame.data, tuple(size), method)))


# Noise

def add_noise(frame, kind, level, stream):
    if level < 0:
        raise _invalid(f"noise level must be >= 0, got {level}", "level")
    if kind not in ("gaussian", "poisson"):
        raise _invalid(f"unknown noise kind {kind!r}", "kind")
    if level == 0:
        return frame
    if kind == "gaussian":
        noisy = frame.data + level * stream.normal(frame.shape)
    else:
        rng = stream.numpy_generator()
        noisy = rng.poisson(clamp01(frame.data) * level) / level
    return Frame(clamp01(noisy))


# JPEG

def quality_table(base, quality):
    """libjpeg quality scaling of a base quantization table"""
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((base * scale + 50.0) / 100.0), 1.0, 255.0)


def _dct_matrix(size=8):
    k = np.arange(size)[:, None]
    n = np.arange(size)[None, :]
    m = np.cos((2 * n + 1) * k * np.pi / (2 * size)) * np.sqrt(2.0 / size)
    m[0] /= np.sqrt(2.0)
    return m


_DCT = _dct_matrix()


def _block_roundtrip(plane, table):
    h, w = plane.shape
    ph, pw = -(-h // 8) * 8, -(-w // 8) * 8
    padded = np.pad(plane, ((0, ph - h), (0, pw - w)), mode="edge")
    blocks = padded.reshape(ph // 8, 8, pw // 8, 8).transpose(0, 2, 1, 3) - 128.0
    coeffs = _DCT @ blocks @ _DCT.T
    coeffs = np.round(coeffs / table) * table
    restored = _DCT.T @ coeffs @ _DCT + 128.0
    return restored.transpose(0, 2, 1, 3).reshape(ph, pw)[:h, :w]


def jpeg_simulate(frame, quality):
    if isinstance(quality, float) and quality.is_integer():
        quality = int(quality)
    if not isinstance(quality, (int, np.integer)) or not 1 <= quality <= 100:
        raise _invalid(f"JPEG quality must be an integer in 1..100, got {quality}", "quality")
    luma = quality_table(JPEG_LUMA_TABLE, quality)
    chroma = quality_table(JPEG_CHROMA_TABLE, quality)
    pixels = frame.data * 255.0

    if frame.channels == 1:
        out = _block_roundtrip(pixels[0], luma)[None]
    elif frame.channels == 3:
        ycc = np.einsum("ij,jhw->ihw", _RGB_TO_YCBCR, pixels) + _YCBCR_OFFSET[:, None, None]
        ycc = np.stack([
            _block_roundtrip(ycc[0], luma),
            _block_roundtrip(ycc[1], chroma),
            _block_roundtrip(ycc[2], chroma),
        ])
        out = np.einsum("ij,jhw->ihw", _YCBCR_TO_RGB, ycc - _YCBCR_OFFSET[:, None, None])
    else:
        raise _invalid(f"JPEG simulation needs 1 or 3 channels, got {frame.channels}", "channels")
    return Frame(clamp01(out / 255.0))


# Chains

@dataclass(frozen=True)
class DegradationOp:
    kind: str
    params: dict = field(default_factory=dict)
    enabled: bool = True

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise _invalid(f"unknown degradation kind {self.kind!r}", "kind")
        name = OP_PARAMETER[self.kind]
        if name not in self.params:
            raise _invalid(f"{self.kind} needs parameter {name!r}", name)
        lo, hi = OP_LIMITS[self.kind]
        value = self.params[name]
        if not lo <= value <= hi:
            raise _invalid(f"{self.kind} {name}={value} outside [{lo}, {hi}]", name)
        if self.kind == "resize" and self.params.get("method", "bicubic") not in RESIZE_METHODS:
            raise _invalid(f"unknown resize method {self.params['method']!r}", "method")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def value(self):
        return self.params[OP_PARAMETER[self.kind]]

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "enabled": self.enabled}

    @classmethod
    def from_dict(cls, data):
        return cls(kind=data["kind"], params=dict(data["params"]), enabled=bool(data.get("enabled", True)))


@dataclass(frozen=True)
class OpSpec:
    """Template entry: the range one op draws its parameter from"""

    kind: str
    range: tuple
    methods: tuple = RESIZE_METHODS
    prob: float = 1.0

    def validate(self):
        if self.kind not in OP_KINDS:
            raise _invalid(f"unknown degradation kind {self.kind!r}", "kind")
        if len(self.range) != 2 or self.range[0] > self.range[1]:
            raise _invalid(f"{self.kind} range must be [low, high], got {list(self.range)}", "range")
        lo, hi = OP_LIMITS[self.kind]
        if self.range[0] < lo or self.range[1] > hi:
            raise _invalid(f"{self.kind} range {list(self.range)} outside [{lo}, {hi}]", "range")
        if self.kind == "resize" and (not self.methods or set(self.methods) - set(RESIZE_METHODS)):
            raise _invalid(f"resize methods must be a non-empty subset of {RESIZE_METHODS}", "methods")
        if not 0.0 <= self.prob <= 1.0:
            raise _invalid(f"op probability must be in [0, 1], got {self.prob}", "prob")
        return self


def default_stages():
    return (
        OpSpec("gaussian_blur", (0.2, 3.0)),
        OpSpec("resize", (0.5, 1.5)),
        OpSpec("gaussian_noise", (0.0, 0.1)),
        OpSpec("jpeg_sim", (30, 95)),
    )


@dataclass(frozen=True)
class ChainTemplate:
    stages: tuple = field(default_factory=default_stages)
    final_scale: float = 0.25
    final_method: str = "bicubic"

    def validate(self):
        for spec in self.stages:
            spec.validate()
        if not 0 < self.final_scale <= 8:
            raise _invalid(f"final scale must be in (0, 8], got {self.final_scale}", "final_scale")
        if self.final_method not in RESIZE_METHODS:
            raise _invalid(f"unknown resize method {self.final_method!r}", "final_method")
        return self


@dataclass(frozen=True)
class DegradationChain:
    ops: tuple = ()
    order: int = 1
    final_scale: float = 0.25
    final_method: str = "bicubic"

    def final_size(self, height, width):
        return resized_shape(height, width, self.final_scale)

    @property
    def final_op(self):
        return DegradationOp("resize", {"scale": self.final_scale, "method": self.final_method})

    def __len__(self):
        return len(self.ops) + 1

    def to_dict(self):
        return {
            "order": self.order,
            "final_scale": self.final_scale,
            "final_method": self.final_method,
            "ops": [op.to_dict() for op in self.ops],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                ops=tuple(DegradationOp.from_dict(op) for op in data["ops"]),
                order=int(data.get("order", 1)),
                final_scale=float(data.get("final_scale", 0.25)),
                final_method=data.get("final_method", "bicubic"),
            )
        except (KeyError, TypeError) as e:
            raise _invalid(f"malformed chain description: {e}")


def sample_chain(template, order, stream):
    """Draw every op parameter uniformly from its template range.

    Draws happen in a fixed order (stage, op, parameter, method, enable) so a
    given stream always yields the same chain. ``order=2`` repeats the
    template with fresh draws.
    """
    if not template.stages:
        raise _invalid("degradation template has no stages", "stages")
    if order not in (1, 2):
        raise _invalid(f"chain order must be 1 or 2, got {order}", "order")
    template.validate()

    ops = []
    for _ in range(order):
        for spec in template.stages:
            lo, hi = spec.range
            if spec.kind == "jpeg_sim":
                value = int(lo) + stream.next_choice(int(hi) - int(lo) + 1)
            else:
                value = lo + (hi - lo) * stream.next_uniform()
            params = {OP_PARAMETER[spec.kind]: value}
            if spec.kind == "resize":
                params["method"] = spec.methods[stream.next_choice(len(spec.methods))]
            enabled = stream.next_uniform() < spec.prob
            ops.append(DegradationOp(spec.kind, params, enabled))

    chain = DegradationChain(
        ops=tuple(ops),
        order=order,
        final_scale=template.final_scale,
        final_method=template.final_method,
    )
    logging.debug(f"Sampled chain: {chain.to_dict()}")
    return chain


def apply_op(frame, op, stream):
    if op.kind == "gaussian_blur":
        return gaussian_blur(frame, op.value)
    if op.kind == "resize":
        return resize(frame, op.value, op.params.get("method", "bicubic"))
    if op.kind == "gaussian_noise":
        return add_noise(frame, "gaussian", op.value, stream)
    if op.kind == "poisson_noise":
        return add_noise(frame, "poisson", op.value, stream)
    return jpeg_simulate(frame, op.value)


def apply_chain(video, chain, stream):
    """Degrade every frame with the same ops, then resize to the final scale"""
    target = chain.final_size(video.height, video.width)
    frames = []
    for fi, frame in enumerate(video.frames):
        current = frame
        for oi, op in enumerate(chain.ops):
            if op.enabled:
                current = apply_op(current, op, stream.child("degrade", fi, oi))
        if (current.height, current.width) != target:
            current = resize(current, method=chain.final_method, size=target)
        frames.append(current)
    return VideoSequence.from_frames(frames)


def _degrade_job(job):
    data, template, order, seed, clip_id = job
    stream = derive_stream(seed, ("degrade", clip_id))
    chain = sample_chain(template, order, stream.child("chain"))
    return apply_chain(VideoSequence(data), chain, stream.child("apply")), chain


def degrade_clips(videos, template, order, seed, pool=None):
    """Sample a chain per clip and degrade it; returns [(lr_clip, chain)] in clip order"""
    jobs = [(v.data, template, order, seed, idx) for idx, v in enumerate(videos)]
    if pool is None:
        results = [_degrade_job(job) for job in jobs]
    else:
        results = pool.map(_degrade_job, jobs)
    logging.info(f"Degraded {len(results)} clips with order-{order} chains")
    return results
