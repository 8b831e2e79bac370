"""Linear stand-in restorer with analytic gradients.

Per channel: 3x3 correlation with reflect-101 padding plus a bias, then a
bilinear x4 upsample. The model is linear in its input and in its 10
parameters per channel, so the gradient of the Aug-NP loss is the adjoint of
the upsample followed by a sum over shifted inputs.
"""

import csv
import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from src.core import VideoSequence, derive_stream
from src.degrade import DegradationChain, apply_chain, resize_matrix, resample, sample_chain
from src.errors import InvalidArgumentError, NumericError, StorageError
from src.losses import NORM_MODES, as_batch, aug_np_gradients, aug_np_loss
from src.negmix import fit_noise, negmix, neg_augment
from src.noise_extract import NoiseThresholds, extract_noise_bank
from src.synthetic import half_flat_video, natural_clip

SCALE = 4
PARAMS_PER_CHANNEL = 10
INIT_MODES = ("zeros", "identity")
TRACE_FIELDS = ("step", "total", "pix", "per", "aug_n")


def _invalid(message, field=None):
    return InvalidArgumentError(message, module="toy_restorer", field=field)


@dataclass(frozen=True, eq=False)
class ToyRestorer:
    """Parameters theta shaped (c, 10): nine row-major kernel taps, then the bias"""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1, PARAMS_PER_CHANNEL)
        if not np.all(np.isfinite(theta)):
            raise NumericError("restorer parameters are not finite")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, channels):
        return cls(np.zeros((channels, PARAMS_PER_CHANNEL)))

    @classmethod
    def identity(cls, channels):
        theta = np.zeros((channels, PARAMS_PER_CHANNEL))
        theta[:, 4] = 1.0
        return cls(theta)

    @classmethod
    def create(cls, channels, init="zeros"):
        if init not in INIT_MODES:
            raise _invalid(f"init must be one of {INIT_MODES}, got {init!r}", "init")
        return cls.identity(channels) if init == "identity" else cls.zeros(channels)

    @property
    def channels(self):
        return self.theta.shape[0]

    @property
    def kernels(self):
        return self.theta[:, :9].reshape(-1, 3, 3)

    @property
    def bias(self):
        return self.theta[:, 9]

    @property
    def params(self):
        return self.theta.ravel().copy()

    def with_params(self, params):
        return ToyRestorer(np.asarray(params, dtype=np.float64).reshape(self.theta.shape))


def _shifts(data):
    """The nine reflect-101 shifted copies of (n, c, h, w) data, row-major taps"""
    h, w = data.shape[-2:]
    padded = np.pad(data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    return [padded[:, :, dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)]


def _check_channels(model, v):
    if v.channels != model.channels:
        raise _invalid(f"model has {model.channels} channels, clip has {v.channels}", "channels")


def restore(model, v):
    _check_channels(model, v)
    low = np.zeros(v.shape)
    kernels = model.kernels.reshape(model.channels, 9)
    for k, shifted in enumerate(_shifts(v.data)):
        low += kernels[:, k][None, :, None, None] * shifted
    low += model.bias[None, :, None, None]
    return VideoSequence(resample(low, (v.height * SCALE, v.width * SCALE), "bilinear"))


def _backprop(grad_hr, v):
    """dL/dtheta for one clip given dL/dY shaped like restore(v)"""
    wy = resize_matrix(v.height, v.height * SCALE, "bilinear")
    wx = resize_matrix(v.width, v.width * SCALE, "bilinear")
    grad_low = np.matmul(np.matmul(wy.T, grad_hr), wx)
    out = np.zeros((v.channels, PARAMS_PER_CHANNEL))
    for k, shifted in enumerate(_shifts(v.data)):
        out[:, k] = (grad_low * shifted).sum(axis=(0, 2, 3))
    out[:, 9] = grad_low.sum(axis=(0, 2, 3))
    return out


def _as_clips(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _check_inputs(v_lr, v_neg, v_hr):
    if not (len(v_lr) == len(v_neg) == len(v_hr)) or not v_lr:
        raise _invalid("v_lr, v_neg and v_hr must hold the same number of clips", "batch")
    for lr, neg, hr in zip(v_lr, v_neg, v_hr):
        if neg.shape != lr.shape:
            raise _invalid(f"v_neg shape {neg.shape} differs from v_lr shape {lr.shape}", "shape")
        expected = (lr.n, lr.channels, lr.height * SCALE, lr.width * SCALE)
        if hr.shape != expected:
            raise _invalid(f"v_hr shape {hr.shape} is not x{SCALE} of v_lr shape {lr.shape}",
                           "shape")


def loss_and_gradients(model, v_lr, v_neg, v_hr, weights):
    """(LossReport, dL/dtheta shaped like ``model.params``); accepts clips or lists of clips"""
    v_lr, v_neg, v_hr = _as_clips(v_lr), _as_clips(v_neg), _as_clips(v_hr)
    _check_inputs(v_lr, v_neg, v_hr)
    y = as_batch([restore(model, v) for v in v_lr])
    y_hat = as_batch([restore(model, v) for v in v_neg])
    report, grad_y, grad_y_hat = aug_np_gradients(y, as_batch(v_hr), y_hat, weights)
    grad = np.zeros_like(model.theta)
    # clip-index order keeps the sum reproducible
    for i in range(len(v_lr)):
        grad += _backprop(grad_y[i], v_lr[i])
        grad += _backprop(grad_y_hat[i], v_neg[i])
    return report, grad.ravel()


def loss_gradients(model, v_lr, v_neg, v_hr, weights):
    return loss_and_gradients(model, v_lr, v_neg, v_hr, weights)[1]


def total_loss(model, v_lr, v_neg, v_hr, weights):
    v_lr, v_neg, v_hr = _as_clips(v_lr), _as_clips(v_neg), _as_clips(v_hr)
    _check_inputs(v_lr, v_neg, v_hr)
    y = [restore(model, v) for v in v_lr]
    y_hat = [restore(model, v) for v in v_neg]
    return aug_np_loss(y, v_hr, y_hat, weights).total


def finite_diff_check(model, inputs, weights, eps=1e-4):
    """Max relative error between analytic and central-difference gradients.

    ``inputs`` is ``(v_lr, v_neg, v_hr)``. The denominator is
    max(|g_analytic|, 1e-8).
    """
    if not eps > 0:
        raise _invalid(f"eps must be > 0, got {eps}", "eps")
    v_lr, v_neg, v_hr = inputs
    analytic = loss_gradients(model, v_lr, v_neg, v_hr, weights)
    base = model.params
    worst = 0.0
    for j in range(base.size):
        step = np.zeros_like(base)
        step[j] = eps
        plus = total_loss(model.with_params(base + step), v_lr, v_neg, v_hr, weights)
        minus = total_loss(model.with_params(base - step), v_lr, v_neg, v_hr, weights)
        numeric = (plus - minus) / (2.0 * eps)
        err = abs(analytic[j] - numeric) / max(abs(analytic[j]), 1e-8)
        worst = max(worst, err)
    logging.debug(f"Finite difference check over {base.size} parameters: max rel error {worst:.3g}")
    return worst


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    lr: float = 0.05
    clips: int = 8
    frames: int = 3
    hr_size: int = 64
    init: str = "zeros"
    log_every: int = 20
    # overrides loss.norm_mode for the descent; None keeps the loss setting
    norm_mode: str = "mse"
    flip: bool = True

    def validate(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise _invalid(f"steps must be >= 1, got {self.steps}", "steps")
        if not np.isfinite(self.lr) or self.lr <= 0:
            raise _invalid(f"lr must be > 0, got {self.lr}", "lr")
        for name in ("clips", "frames", "log_every"):
            if int(getattr(self, name)) < 1:
                raise _invalid(f"{name} must be >= 1, got {getattr(self, name)}", name)
        if self.hr_size < SCALE or self.hr_size % SCALE:
            raise _invalid(f"hr_size must be a positive multiple of {SCALE}, got {self.hr_size}",
                           "hr_size")
        if self.init not in INIT_MODES:
            raise _invalid(f"init must be one of {INIT_MODES}, got {self.init!r}", "init")
        if self.norm_mode is not None and self.norm_mode not in NORM_MODES:
            raise _invalid(f"norm_mode must be one of {NORM_MODES} or null, got {self.norm_mode!r}",
                           "norm_mode")
        if not isinstance(self.flip, bool):
            raise _invalid(f"flip must be true or false, got {self.flip!r}", "flip")
        return self

    def to_dict(self):
        return {"steps": self.steps, "lr": self.lr, "clips": self.clips, "frames": self.frames,
                "hr_size": self.hr_size, "init": self.init, "log_every": self.log_every,
                "norm_mode": self.norm_mode, "flip": self.flip}


@dataclass(frozen=True)
class TraceRow:
    step: int
    total: float
    pix: float
    per: float
    aug_n: float

    def as_row(self):
        return [self.step, repr(self.total), repr(self.pix), repr(self.per), repr(self.aug_n)]


def _lr_job(job):
    data, chain, seed, clip_id = job
    stream = derive_stream(seed, ("train-degrade", clip_id))
    return apply_chain(VideoSequence(data), DegradationChain.from_dict(chain), stream)


def draw_flips(stream):
    """(temporal reversal, horizontal flip), each with probability 1/2"""
    return stream.next_uniform() < 0.5, stream.next_uniform() < 0.5


def flip_clip(video, reverse, mirror):
    data = video.data
    if reverse:
        data = data[::-1]
    if mirror:
        data = data[..., ::-1]
    return video if data is video.data else VideoSequence(data)


def _negative(v_lr, bank, negmix_cfg, stream):
    if bank is None or bank.count == 0:
        out, _ = neg_augment(v_lr, negmix_cfg, stream)
        return out
    nsq = bank.entry(stream.child("noise").next_choice(bank.count))
    return negmix(v_lr, fit_noise(nsq, v_lr.shape), negmix_cfg, stream)


def train_toy(model, dataset, cfg, weights, negmix_cfg, seed, pool=None):
    """Fixed-step gradient descent on the Aug-NP loss.

    ``dataset`` holds ``(v_hr, chain, bank)`` triples. Each clip is degraded
    once; NegMix is redrawn every step from streams tagged (step, clip).
    Each step takes the next ``weights.batch_size`` clips round-robin (the
    whole dataset when it is smaller). With ``cfg.flip`` every (step, clip)
    pair may be reversed in time and mirrored left-right, LR and HR alike,
    before its negative is built. ``cfg.norm_mode`` replaces the loss
    weights' norm mode unless it is None. Returns the trained model and the
    per-step trace.
    """
    cfg.validate()
    weights.validate()
    if cfg.norm_mode is not None:
        weights = dataclasses.replace(weights, norm_mode=cfg.norm_mode)
    negmix_cfg.validate()
    dataset = list(dataset)
    if not dataset:
        raise _invalid("training dataset is empty", "dataset")

    jobs = [(hr.data, chain.to_dict(), seed, i) for i, (hr, chain, _) in enumerate(dataset)]
    v_lr = pool.map(_lr_job, jobs) if pool is not None else [_lr_job(job) for job in jobs]
    v_hr = [hr for hr, _, _ in dataset]
    banks = [bank for _, _, bank in dataset]
    logging.info(f"Training toy restorer on {len(dataset)} clips for {cfg.steps} steps, lr={cfg.lr}, "
                 f"norm_mode={weights.norm_mode}, flip={cfg.flip}")

    root = derive_stream(seed, ("train",))
    batch = min(int(weights.batch_size), len(dataset))
    trace = []
    for step in range(cfg.steps):
        start = (step * batch) % len(dataset)
        idx = [(start + j) % len(dataset) for j in range(batch)]
        lr_batch, hr_batch = [], []
        for i in idx:
            lr_clip, hr_clip = v_lr[i], v_hr[i]
            if cfg.flip:
                reverse, mirror = draw_flips(root.child("flip", step, i))
                lr_clip = flip_clip(lr_clip, reverse, mirror)
                hr_clip = flip_clip(hr_clip, reverse, mirror)
            lr_batch.append(lr_clip)
            hr_batch.append(hr_clip)
        v_neg = [
            _negative(lr_clip, banks[i], negmix_cfg, root.child("negmix", step, i))
            for i, lr_clip in zip(idx, lr_batch)
        ]
        report, grad = loss_and_gradients(model, lr_batch, v_neg, hr_batch, weights)
        if not np.isfinite(report.total) or not np.all(np.isfinite(grad)):
            raise NumericError("loss is not finite", step=step)
        trace.append(TraceRow(step, report.total, report.pix, report.per, report.aug_n))
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            logging.info(f"Step {step}: total={report.total:.6f} pix={report.pix:.6f} "
                         f"per={report.per:.6f} aug_n={report.aug_n:.6f}")
        params = model.params - cfg.lr * grad
        if not np.all(np.isfinite(params)):
            raise NumericError("parameters are not finite", step=step)
        model = model.with_params(params)
    return model, trace


def write_trace_csv(path, trace):
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(TRACE_FIELDS)
            for row in trace:
                writer.writerow(row.as_row())
    except OSError as e:
        raise StorageError(f"cannot write loss trace {path}: {e}", module="toy_restorer")


def demo_bank(cfg, channels, seed):
    """Noise bank extracted from a synthetic half-flat clip, windows sized like the LR clips"""
    lr = cfg.hr_size // SCALE
    stream = derive_stream(seed, ("train-noise",))
    video = half_flat_video(cfg.frames, channels, lr, 2 * lr, lr, 0.02, stream)
    thresholds = NoiseThresholds(sigma=0.01, mu=0.05, sigma_var=1e-5, sigma_mean=1e-4)
    return extract_noise_bank(video, (lr, lr), thresholds, source_id="synthetic")


def demo_dataset(cfg, template, order, seed, bank=None, channels=3):
    """(v_hr, chain, bank) triples of synthetic natural clips with sampled chains"""
    cfg.validate()
    bank = demo_bank(cfg, channels, seed) if bank is None else bank
    dataset = []
    for i in range(cfg.clips):
        hr = natural_clip(cfg.frames, channels, cfg.hr_size, cfg.hr_size,
                          derive_stream(seed, ("train-clip", i)))
        chain = sample_chain(template, order, derive_stream(seed, ("train-chain", i)))
        dataset.append((hr, chain, bank))
    return dataset
