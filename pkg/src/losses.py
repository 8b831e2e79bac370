"""Augmented positive / negative guidance losses.

Aug-P compares the restored clip Y with the HR target:

    aug_p = alpha * pix + beta * per + gamma * adv

Aug-N pulls Y towards the restoration of the NegMix input, Y_hat, and the
total is ``aug_p + lambda * aug_n``.

``per`` uses a fixed linear feature stack instead of a pretrained network:
a sigma=1 Gaussian blur, horizontal and vertical forward differences, and the
3x3 Laplacian, each applied per channel with reflect-101 borders. Every
feature is a matrix operator, so ``aug_np_gradients`` can return exact
adjoints for the toy restorer.
"""

import functools
from dataclasses import dataclass

import numpy as np

from src.core import VideoSequence
from src.degrade import gaussian_kernel
from src.errors import InvalidArgumentError

NORM_MODES = ("l2norm", "mse")
PIXEL_MODES = ("l1", "l2")
FEATURES = ("blur", "grad_x", "grad_y", "laplacian")


def _invalid(message, field=None):
    return InvalidArgumentError(message, module="loss", field=field)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.05
    lam: float = 0.5
    batch_size: int = 8
    norm_mode: str = "l2norm"
    pixel_mode: str = "l1"

    def validate(self):
        for name in ("alpha", "beta", "gamma", "lam"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise _invalid(f"{name} must be >= 0, got {value}", name)
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise _invalid(f"batch_size must be >= 1, got {self.batch_size}", "batch_size")
        if self.norm_mode not in NORM_MODES:
            raise _invalid(f"norm_mode must be one of {NORM_MODES}, got {self.norm_mode!r}", "norm_mode")
        if self.pixel_mode not in PIXEL_MODES:
            raise _invalid(f"pixel_mode must be one of {PIXEL_MODES}, got {self.pixel_mode!r}",
                           "pixel_mode")
        return self

    def to_dict(self):
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "lambda": self.lam,
                "batch_size": self.batch_size, "norm_mode": self.norm_mode,
                "pixel_mode": self.pixel_mode}


@dataclass(frozen=True)
class LossReport:
    pix: float = 0.0
    per: float = 0.0
    adv: float = 0.0
    aug_n: float = 0.0
    aug_p: float = 0.0
    total: float = 0.0

    @classmethod
    def compose(cls, pix, per, adv, aug_n, weights):
        aug_p = weights.alpha * pix + weights.beta * per + weights.gamma * adv
        return cls(pix=pix, per=per, adv=adv, aug_n=aug_n, aug_p=aug_p,
                   total=aug_p + weights.lam * aug_n)

    def to_dict(self):
        return {"pix": self.pix, "per": self.per, "adv": self.adv,
                "aug_n": self.aug_n, "aug_p": self.aug_p, "total": self.total}


class NullCritic:
    """Adversarial term stand-in: scores every output 0"""

    def __call__(self, y, target):
        return 0.0


def as_batch(x):
    """(B, n, c, h, w) float array from a clip, a list of clips or an array"""
    if isinstance(x, VideoSequence):
        return x.data[None]
    if isinstance(x, (list, tuple)):
        return np.stack([as_batch(v)[0] for v in x])
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 4:
        return arr[None]
    if arr.ndim != 5:
        raise _invalid(f"expected a clip or a batch of clips, got shape {arr.shape}", "shape")
    return arr


def _pair(a, b):
    a, b = as_batch(a), as_batch(b)
    if a.shape != b.shape:
        raise _invalid(f"shape mismatch: {a.shape} vs {b.shape}", "shape")
    return a, b


# Feature operators

def _reflect(i, n):
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i %= period
    return period - i if i >= n else i


@functools.lru_cache(maxsize=128)
def conv_matrix(n, kernel):
    """(n, n) matrix of a centered 1-D correlation with reflect-101 borders"""
    radius = len(kernel) // 2
    m = np.zeros((n, n))
    for i in range(n):
        for t, k in enumerate(kernel):
            m[i, _reflect(i + t - radius, n)] += k
    m.flags.writeable = False
    return m


_BLUR_TAPS = tuple(gaussian_kernel(1.0))
_SECOND_DIFF = (1.0, -2.0, 1.0)


def features(d):
    """The four stand-in feature maps of (..., H, W) data"""
    h, w = d.shape[-2:]
    by, bx = conv_matrix(h, _BLUR_TAPS), conv_matrix(w, _BLUR_TAPS)
    ly, lx = conv_matrix(h, _SECOND_DIFF), conv_matrix(w, _SECOND_DIFF)
    return {
        "blur": by @ d @ bx.T,
        "grad_x": d[..., :, 1:] - d[..., :, :-1],
        "grad_y": d[..., 1:, :] - d[..., :-1, :],
        "laplacian": ly @ d + d @ lx.T,
    }


def feature_adjoint(name, g, shape):
    """Adjoint of feature ``name`` applied to ``g``, returned in input ``shape``"""
    h, w = shape[-2:]
    if name == "blur":
        by, bx = conv_matrix(h, _BLUR_TAPS), conv_matrix(w, _BLUR_TAPS)
        return by.T @ g @ bx
    if name == "laplacian":
        ly, lx = conv_matrix(h, _SECOND_DIFF), conv_matrix(w, _SECOND_DIFF)
        return ly.T @ g + g @ lx
    out = np.zeros(shape)
    if name == "grad_x":
        out[..., :, 1:] += g
        out[..., :, :-1] -= g
    else:
        out[..., 1:, :] += g
        out[..., :-1, :] -= g
    return out


def _mean_abs(a):
    return float(np.abs(a).mean()) if a.size else 0.0


# Losses

def pixel_loss(y, target, mode="l1"):
    """Mean absolute (l1) or squared (l2) error over all elements"""
    a, b = _pair(y, target)
    if mode not in PIXEL_MODES:
        raise _invalid(f"pixel_mode must be one of {PIXEL_MODES}, got {mode!r}", "pixel_mode")
    diff = a - b
    return float(np.abs(diff).mean() if mode == "l1" else (diff * diff).mean())


def standin_perceptual_loss(y, target):
    a, b = _pair(y, target)
    maps = features(a - b)
    return sum(_mean_abs(maps[name]) for name in FEATURES) / len(FEATURES)


def aug_n_loss(y_hat, y, weights):
    """(1/B) sum_i ||y_hat_i - y_i||_2 (l2norm) or the mean squared difference (mse)"""
    a, b = _pair(y_hat, y)
    diff = a - b
    if weights.norm_mode == "mse":
        return float((diff * diff).mean())
    if weights.norm_mode != "l2norm":
        raise _invalid(f"norm_mode must be one of {NORM_MODES}, got {weights.norm_mode!r}", "norm_mode")
    norms = np.sqrt((diff.reshape(diff.shape[0], -1) ** 2).sum(axis=1))
    return float(norms.mean())


def aug_p_loss(y, v_hr, weights, critic=None):
    """Positive guidance report (aug_n and its share of the total stay 0)"""
    critic = critic or NullCritic()
    pix = pixel_loss(y, v_hr, weights.pixel_mode)
    per = standin_perceptual_loss(y, v_hr)
    adv = float(critic(y, v_hr))
    return LossReport.compose(pix, per, adv, 0.0, weights)


def aug_np_loss(y, v_hr, y_hat, weights, critic=None):
    partial = aug_p_loss(y, v_hr, weights, critic)
    aug_n = aug_n_loss(y, y_hat, weights)
    return LossReport.compose(partial.pix, partial.per, partial.adv, aug_n, weights)


def aug_np_gradients(y, v_hr, y_hat, weights):
    """Report plus dL/dY and dL/dY_hat for the null critic.

    L1 terms use the subgradient sign(.) with sign(0) = 0; the l2norm term
    contributes nothing for a sample whose difference is exactly zero.
    """
    y, v_hr = _pair(y, v_hr)
    y_hat = as_batch(y_hat)
    if y_hat.shape != y.shape:
        raise _invalid(f"shape mismatch: {y.shape} vs {y_hat.shape}", "shape")
    report = aug_np_loss(y, v_hr, y_hat, weights)

    diff = y - v_hr
    if weights.pixel_mode == "l1":
        grad_y = weights.alpha * np.sign(diff) / diff.size
    else:
        grad_y = weights.alpha * 2.0 * diff / diff.size

    if weights.beta:
        maps = features(diff)
        for name in FEATURES:
            fmap = maps[name]
            if fmap.size:
                scale = weights.beta / (len(FEATURES) * fmap.size)
                grad_y = grad_y + scale * feature_adjoint(name, np.sign(fmap), diff.shape)

    gap = y - y_hat
    if weights.norm_mode == "mse":
        grad_gap = 2.0 * gap / gap.size
    else:
        flat = gap.reshape(gap.shape[0], -1)
        norms = np.sqrt((flat ** 2).sum(axis=1))
        safe = np.where(norms > 0, norms, 1.0)
        grad_gap = np.where(norms[:, None] > 0, flat / safe[:, None], 0.0) / gap.shape[0]
        grad_gap = grad_gap.reshape(gap.shape)
    grad_gap = weights.lam * grad_gap
    return report, grad_y + grad_gap, -grad_gap
