"""Pixel tensors and seeded random streams shared by every pipeline stage.

Frames are planar float64 arrays shaped (c, h, w) holding normalized values;
a VideoSequence stacks n frames into (n, c, h, w). Both copy their input and
mark it read-only, so a value handed to another stage can never change under
it.

All randomness is counter based. ``derive_stream(seed, tags)`` hashes the
tag tuple with SHA-256 (Python's ``hash()`` is salted per process) and folds
it into the seed with the SplitMix64 finalizer. Draw ``k`` of a stream is
``mix64(key + k * GOLDEN_GAMMA)``, the SplitMix64 sequence, so scalar and
vectorized draws agree and every (frame, patch) can own an independent
stream regardless of evaluation order.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from src.errors import InvalidArgumentError

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_UNIT = 2.0 ** -53


def mix64(z):
    """SplitMix64 finalizer (xorshift-multiply avalanche) on a Python int"""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z):
    # uint64 array arithmetic wraps modulo 2**64
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX_A)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX_B)
    return z ^ (z >> np.uint64(31))


def tag_hash(tags):
    """Stable 64-bit hash of a tag tuple, identical across runs and platforms"""
    text = "|".join(str(t) for t in tags).encode("utf-8")
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little")


class RngStream:
    """A reproducible stream of 64-bit draws.

    The stream is identified by its ``key``; ``counter`` counts the draws
    consumed so far. Two streams with the same (seed, tags) produce the same
    draws whatever else the process is doing.
    """

    __slots__ = ("seed", "tags", "key", "counter")

    def __init__(self, seed, tags, key):
        self.seed = seed
        self.tags = tuple(tags)
        self.key = key
        self.counter = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, tags={self.tags!r}, counter={self.counter})"

    def next_u64(self):
        self.counter += 1
        return mix64(self.key + self.counter * GOLDEN_GAMMA)

    def next_uniform(self):
        """Next real in [0, 1) with 53 bits of resolution"""
        return (self.next_u64() >> 11) * _UNIT

    def next_choice(self, k):
        """Uniform index in [0, k)"""
        if k < 1:
            raise InvalidArgumentError(f"choice needs k >= 1, got {k}")
        return min(int(self.next_uniform() * k), k - 1)

    def u64(self, size):
        count = int(np.prod(size, dtype=np.int64))
        steps = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        self.counter += count
        states = np.uint64(self.key) + steps * np.uint64(GOLDEN_GAMMA)
        return _mix64_array(states).reshape(size)

    def uniform(self, size):
        """Vectorized ``next_uniform``; consumes draws in C order"""
        return (self.u64(size) >> np.uint64(11)).astype(np.float64) * _UNIT

    def normal(self, size):
        """Standard normal samples via Box-Muller on two uniform blocks"""
        count = int(np.prod(size, dtype=np.int64))
        u = self.uniform((2, count))
        radius = np.sqrt(-2.0 * np.log(1.0 - u[0]))
        return (radius * np.cos(2.0 * np.pi * u[1])).reshape(size)

    def numpy_generator(self):
        """numpy Generator seeded from the next draw, for samplers numpy owns (Poisson)"""
        return np.random.Generator(np.random.PCG64(self.next_u64()))

    def child(self, *tags):
        """Independent stream keyed by this stream's identity and extra tags"""
        return derive_stream(self.key, tags)


def derive_stream(seed, tags=()):
    """Build the stream for ``(seed, tags)``; pure and order independent"""
    tags = tuple(tags)
    key = mix64(mix64(seed & MASK64) ^ tag_hash(tags))
    return RngStream(seed, tags, key)


def next_uniform(stream):
    return stream.next_uniform()


def next_choice(stream, k):
    return stream.next_choice(k)


def clamp01(data):
    return np.clip(data, 0.0, 1.0)


def _frozen(data, ndim, name):
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != ndim:
        raise InvalidArgumentError(f"{name} expects a {ndim}-d array, got shape {arr.shape}")
    if 0 in arr.shape:
        raise InvalidArgumentError(f"{name} dimensions must be positive, got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Frame:
    """One image, planar (c, h, w)"""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        object.__setattr__(self, "data", _frozen(data, 3, "Frame"))

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def clamped(self):
        return Frame(clamp01(self.data))


@dataclass(frozen=True, eq=False)
class VideoSequence:
    """n frames sharing one (c, h, w), stored as an (n, c, h, w) array"""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, 4, "VideoSequence"))

    @classmethod
    def from_frames(cls, frames):
        frames = list(frames)
        if not frames:
            raise InvalidArgumentError("a sequence needs at least one frame")
        shape = frames[0].shape
        for idx, frame in enumerate(frames):
            if frame.shape != shape:
                raise InvalidArgumentError(
                    f"frame {idx} has shape {frame.shape}, expected {shape}"
                )
        return cls(np.stack([f.data for f in frames]))

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[2]

    @property
    def width(self):
        return self.data.shape[3]

    @property
    def shape(self):
        return self.data.shape

    @property
    def frames(self):
        return tuple(Frame(f) for f in self.data)

    def frame(self, index):
        return Frame(self.data[index])

    def __len__(self):
        return self.n
