import numpy as np
import pytest

from src.core import VideoSequence, derive_stream
from src.synthetic import natural_clip, natural_frame


@pytest.fixture
def stream():
    return derive_stream(1234, ("test",))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def natural():
    """3-channel 64x64 natural-looking frame"""
    return natural_frame(3, 64, 64, derive_stream(7, ("natural",)))


@pytest.fixture
def clip():
    return natural_clip(3, 3, 32, 32, derive_stream(7, ("clip",)))


@pytest.fixture
def random_clip(rng):
    def make(n=2, c=3, h=16, w=16):
        return VideoSequence(rng.random((n, c, h, w)))
    return make
