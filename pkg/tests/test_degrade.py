import numpy as np
import pytest

from src.core import Frame, VideoSequence, derive_stream
from src.degrade import (
    ChainTemplate, DegradationChain, DegradationOp, OpSpec, add_noise, apply_chain,
    cubic_weight, degrade_clips, gaussian_blur, gaussian_kernel, jpeg_simulate, resize,
    resized_shape, sample_chain,
)
from src.errors import InvalidArgumentError
from src.workers import ClipPool


def reflect101(i, n):
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def brute_blur(plane, sigma):
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    h, w = plane.shape
    out = np.zeros_like(plane)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    acc += k[dy + r] * k[dx + r] * plane[reflect101(y + dy, h), reflect101(x + dx, w)]
            out[y, x] = acc
    return out


def brute_bicubic(plane, oh, ow):
    h, w = plane.shape
    out = np.zeros((oh, ow))
    for oy in range(oh):
        sy = (oy + 0.5) * h / oh - 0.5
        for ox in range(ow):
            sx = (ox + 0.5) * w / ow - 0.5
            acc = 0.0
            for ty in range(int(np.floor(sy)) - 1, int(np.floor(sy)) + 3):
                wy = float(cubic_weight(sy - ty))
                for tx in range(int(np.floor(sx)) - 1, int(np.floor(sx)) + 3):
                    wx = float(cubic_weight(sx - tx))
                    acc += wy * wx * plane[min(max(ty, 0), h - 1), min(max(tx, 0), w - 1)]
            out[oy, ox] = acc
    return out


class TestBlur:
    def test_matches_direct_evaluation(self, rng):
        plane = rng.random((12, 10))
        out = gaussian_blur(Frame(plane), 1.3)
        np.testing.assert_allclose(out.data[0], brute_blur(plane, 1.3), atol=1e-5)

    def test_kernel_wider_than_frame(self, rng):
        # radius 9 on a 4x4 frame reflects more than once
        plane = rng.random((4, 4))
        out = gaussian_blur(Frame(plane), 3.0)
        np.testing.assert_allclose(out.data[0], brute_blur(plane, 3.0), atol=1e-5)

    def test_sigma_zero_is_identity(self, natural):
        assert gaussian_blur(natural, 0.0) is natural

    def test_constant_frame_unchanged(self):
        frame = Frame(np.full((3, 16, 16), 0.3))
        np.testing.assert_allclose(gaussian_blur(frame, 2.0).data, 0.3, atol=1e-12)

    def test_negative_sigma(self, natural):
        with pytest.raises(InvalidArgumentError):
            gaussian_blur(natural, -1.0)


class TestResize:
    def test_bicubic_matches_direct_evaluation(self, rng):
        plane = rng.random((9, 11))
        out = resize(Frame(plane), size=(5, 7), method="bicubic")
        np.testing.assert_allclose(out.data[0], np.clip(brute_bicubic(plane, 5, 7), 0, 1), atol=1e-5)

    def test_upscale_matches_direct_evaluation(self, rng):
        plane = rng.random((6, 6))
        out = resize(Frame(plane), 2.0, "bicubic")
        np.testing.assert_allclose(out.data[0], np.clip(brute_bicubic(plane, 12, 12), 0, 1), atol=1e-5)

    @pytest.mark.parametrize("method", ["nearest", "bilinear", "bicubic"])
    def test_unit_scale_is_identity(self, natural, method):
        np.testing.assert_allclose(resize(natural, 1.0, method).data, natural.data, atol=1e-12)

    def test_nearest_half_picks_odd_pixels(self):
        plane = np.arange(16, dtype=np.float64).reshape(4, 4) / 16
        out = resize(Frame(plane), 0.5, "nearest")
        np.testing.assert_array_equal(out.data[0], plane[1::2, 1::2])

    def test_bilinear_constant(self):
        out = resize(Frame(np.full((1, 8, 8), 0.7)), 0.25, "bilinear")
        np.testing.assert_allclose(out.data, 0.7, atol=1e-12)

    def test_resized_shape(self):
        assert resized_shape(64, 64, 0.25) == (16, 16)
        assert resized_shape(10, 6, 1.5) == (15, 9)
        with pytest.raises(InvalidArgumentError):
            resized_shape(4, 4, 0.01)

    def test_unknown_method(self, natural):
        with pytest.raises(InvalidArgumentError):
            resize(natural, 0.5, "lanczos")


class TestNoise:
    def test_level_zero_is_identity(self, natural, stream):
        assert add_noise(natural, "gaussian", 0.0, stream) is natural

    def test_same_stream_same_noise(self, natural):
        a = add_noise(natural, "gaussian", 0.05, derive_stream(1, ("n",)))
        b = add_noise(natural, "gaussian", 0.05, derive_stream(1, ("n",)))
        np.testing.assert_array_equal(a.data, b.data)

    def test_gaussian_level_sets_spread(self, stream):
        frame = Frame(np.full((1, 128, 128), 0.5))
        out = add_noise(frame, "gaussian", 0.05, stream)
        assert (out.data - 0.5).std() == pytest.approx(0.05, rel=0.05)

    def test_poisson_mean_preserved(self, stream):
        frame = Frame(np.full((1, 128, 128), 0.4))
        out = add_noise(frame, "poisson", 200.0, stream)
        assert out.data.mean() == pytest.approx(0.4, abs=0.01)

    def test_unknown_kind(self, natural, stream):
        with pytest.raises(InvalidArgumentError):
            add_noise(natural, "speckle", 0.1, stream)


class TestJpeg:
    def test_constant_stays_constant(self):
        frame = Frame(np.full((3, 16, 16), 0.5))
        out = jpeg_simulate(frame, 50)
        assert np.ptp(out.data) <= 1 / 255

    def test_quality_100_is_nearly_lossless(self, natural):
        gray = Frame(natural.data[:1])
        out = jpeg_simulate(gray, 100)
        assert np.abs(out.data - gray.data).max() <= 2 / 255

    def test_mse_decreases_with_quality(self, natural):
        errors = [np.mean((jpeg_simulate(natural, q).data - natural.data) ** 2)
                  for q in (10, 30, 50, 70, 90)]
        assert all(b <= a for a, b in zip(errors, errors[1:]))

    def test_odd_size_keeps_shape(self, rng):
        frame = Frame(rng.random((3, 13, 19)))
        assert jpeg_simulate(frame, 75).shape == (3, 13, 19)

    @pytest.mark.parametrize("quality", [0, 101, 50.5])
    def test_invalid_quality(self, natural, quality):
        with pytest.raises(InvalidArgumentError):
            jpeg_simulate(natural, quality)


class TestChains:
    def test_sampling_is_deterministic(self):
        template = ChainTemplate()
        a = sample_chain(template, 1, derive_stream(5, ("chain",)))
        b = sample_chain(template, 1, derive_stream(5, ("chain",)))
        assert a == b

    def test_parameters_stay_in_range(self):
        template = ChainTemplate()
        for seed in range(20):
            chain = sample_chain(template, 2, derive_stream(seed, ("chain",)))
            assert len(chain.ops) == 8
            assert len(chain) == 9
            for op, spec in zip(chain.ops, template.stages * 2):
                assert op.kind == spec.kind
                assert spec.range[0] <= op.value <= spec.range[1]
            assert isinstance(chain.ops[3].value, int)

    def test_zero_probability_disables_op(self):
        template = ChainTemplate(stages=(OpSpec("gaussian_blur", (1.0, 2.0), prob=0.0),))
        chain = sample_chain(template, 1, derive_stream(0, ("chain",)))
        assert not chain.ops[0].enabled

    def test_empty_template(self):
        with pytest.raises(InvalidArgumentError):
            sample_chain(ChainTemplate(stages=()), 1, derive_stream(0, ("chain",)))

    def test_bad_order(self):
        with pytest.raises(InvalidArgumentError):
            sample_chain(ChainTemplate(), 3, derive_stream(0, ("chain",)))

    def test_final_resize_to_quarter(self, clip):
        chain = sample_chain(ChainTemplate(), 2, derive_stream(1, ("chain",)))
        lr = apply_chain(clip, chain, derive_stream(1, ("apply",)))
        assert lr.shape == (3, 3, 8, 8)
        assert lr.data.min() >= 0.0 and lr.data.max() <= 1.0

    def test_serialized_chain_replays(self, clip):
        chain = sample_chain(ChainTemplate(), 1, derive_stream(2, ("chain",)))
        replayed = DegradationChain.from_dict(chain.to_dict())
        a = apply_chain(clip, chain, derive_stream(2, ("apply",)))
        b = apply_chain(clip, replayed, derive_stream(2, ("apply",)))
        np.testing.assert_array_equal(a.data, b.data)

    def test_identity_chain_is_plain_downscale(self, clip):
        chain = DegradationChain(ops=(DegradationOp("gaussian_blur", {"sigma": 0.0}),))
        lr = apply_chain(clip, chain, derive_stream(0, ("apply",)))
        expected = resize(clip.frame(0), 0.25, "bicubic")
        np.testing.assert_array_equal(lr.data[0], expected.data)

    def test_op_parameter_limits(self):
        with pytest.raises(InvalidArgumentError):
            DegradationOp("gaussian_noise", {"level": 2.0})
        with pytest.raises(InvalidArgumentError):
            DegradationOp("sharpen", {"amount": 1.0})

    def test_pool_matches_inline(self, clip):
        clips = [clip, VideoSequence(clip.data[::-1])]
        inline = degrade_clips(clips, ChainTemplate(), 1, seed=11)
        with ClipPool(2) as pool:
            pooled = degrade_clips(clips, ChainTemplate(), 1, seed=11, pool=pool)
        for (a, ca), (b, cb) in zip(inline, pooled):
            assert ca == cb
            np.testing.assert_array_equal(a.data, b.data)
