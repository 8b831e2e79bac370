import numpy as np
import pytest

from src.core import VideoSequence
from src.errors import InvalidArgumentError
from src.losses import (
    FEATURES, LossReport, LossWeights, as_batch, aug_n_loss, aug_np_gradients, aug_np_loss,
    aug_p_loss, conv_matrix, feature_adjoint, features, pixel_loss, standin_perceptual_loss,
)


def clip(value, shape=(1, 1, 4, 4)):
    return VideoSequence(np.full(shape, value))


def numeric_grad(f, x, indices, eps=1e-6):
    out = []
    for idx in indices:
        plus, minus = x.copy(), x.copy()
        plus[idx] += eps
        minus[idx] -= eps
        out.append((f(plus) - f(minus)) / (2 * eps))
    return np.array(out)


class TestWeights:
    def test_defaults(self):
        w = LossWeights().validate()
        assert (w.alpha, w.beta, w.gamma, w.lam) == (1.0, 1.0, 0.05, 0.5)
        assert w.to_dict()["lambda"] == 0.5

    @pytest.mark.parametrize("kwargs, field", [
        ({"alpha": -1.0}, "alpha"),
        ({"lam": float("nan")}, "lam"),
        ({"batch_size": 0}, "batch_size"),
        ({"norm_mode": "l1"}, "norm_mode"),
        ({"pixel_mode": "huber"}, "pixel_mode"),
    ])
    def test_invalid(self, kwargs, field):
        with pytest.raises(InvalidArgumentError) as exc:
            LossWeights(**kwargs).validate()
        assert exc.value.field == field

    def test_report_composition(self):
        report = LossReport.compose(0.2, 0.4, 1.0, 0.3, LossWeights())
        assert report.aug_p == pytest.approx(0.2 + 0.4 + 0.05)
        assert report.total == pytest.approx(0.65 + 0.5 * 0.3)


class TestBatches:
    def test_shapes(self, random_clip):
        v = random_clip()
        assert as_batch(v).shape == (1, 2, 3, 16, 16)
        assert as_batch([v, v]).shape == (2, 2, 3, 16, 16)
        assert as_batch(v.data).shape == (1, 2, 3, 16, 16)

    def test_bad_rank(self):
        with pytest.raises(InvalidArgumentError):
            as_batch(np.zeros((4, 4)))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError) as exc:
            pixel_loss(clip(0.0), clip(0.0, (1, 1, 8, 8)))
        assert exc.value.module == "loss"


class TestFeatures:
    def test_blur_rows_sum_to_one(self):
        np.testing.assert_allclose(conv_matrix(9, tuple(np.full(3, 1 / 3))).sum(axis=1), 1.0)

    def test_constant_input(self):
        maps = features(np.full((1, 1, 6, 6), 0.4))
        np.testing.assert_allclose(maps["blur"], 0.4)
        assert maps["grad_x"].shape == (1, 1, 6, 5)
        assert maps["grad_y"].shape == (1, 1, 5, 6)
        np.testing.assert_allclose(maps["grad_x"], 0.0)
        np.testing.assert_allclose(maps["laplacian"], 0.0, atol=1e-12)

    @pytest.mark.parametrize("name", FEATURES)
    def test_adjoint_identity(self, rng, name):
        shape = (2, 1, 3, 7, 9)
        x = rng.standard_normal(shape)
        fx = features(x)[name]
        g = rng.standard_normal(fx.shape)
        lhs = np.sum(fx * g)
        rhs = np.sum(x * feature_adjoint(name, g, shape))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


class TestLosses:
    def test_pixel_modes(self):
        assert pixel_loss(clip(0.5), clip(0.2)) == pytest.approx(0.3)
        assert pixel_loss(clip(0.5), clip(0.2), "l2") == pytest.approx(0.09)

    def test_perceptual_of_offset(self):
        assert standin_perceptual_loss(clip(0.5), clip(0.5)) == 0.0
        assert standin_perceptual_loss(clip(0.6), clip(0.2)) == pytest.approx(0.4 / 4)

    def test_perceptual_tiny_frames(self):
        assert standin_perceptual_loss(clip(0.6, (1, 1, 1, 1)), clip(0.2, (1, 1, 1, 1))) == \
            pytest.approx(0.4 / 4)

    def test_aug_n_modes(self):
        y, y_hat = clip(1.0), clip(0.9)
        assert aug_n_loss(y_hat, y, LossWeights()) == pytest.approx(0.4)
        assert aug_n_loss(y_hat, y, LossWeights(norm_mode="mse")) == pytest.approx(0.01)

    def test_aug_n_averages_over_batch(self):
        y = [clip(1.0), clip(1.0)]
        y_hat = [clip(0.9), clip(1.0)]
        assert aug_n_loss(y_hat, y, LossWeights()) == pytest.approx(0.2)

    def test_combined_example(self):
        weights = LossWeights(alpha=1.0, beta=0.0, gamma=0.0)
        report = aug_np_loss(clip(1.0), clip(0.0), clip(0.9), weights)
        assert report.pix == pytest.approx(1.0)
        assert report.aug_n == pytest.approx(0.4)
        assert report.total == pytest.approx(1.2)

    def test_identical_negative_adds_nothing(self, random_clip):
        y, target = random_clip(), random_clip()
        report = aug_np_loss(y, target, y, LossWeights())
        assert report.aug_n == 0.0
        assert report.total == pytest.approx(aug_p_loss(y, target, LossWeights()).total)

    def test_lambda_zero_ignores_negative(self, random_clip):
        y, target = random_clip(), random_clip()
        weights = LossWeights(lam=0.0)
        a = aug_np_loss(y, target, random_clip(), weights).total
        b = aug_np_loss(y, target, random_clip(), weights).total
        assert a == b

    def test_custom_critic(self, random_clip):
        report = aug_p_loss(random_clip(), random_clip(), LossWeights(gamma=0.5),
                            critic=lambda y, target: 2.0)
        assert report.adv == 2.0
        assert report.aug_p == pytest.approx(report.pix + report.per + 1.0)


class TestGradients:
    @pytest.mark.parametrize("norm_mode", ["l2norm", "mse"])
    def test_smooth_terms_match_finite_differences(self, rng, norm_mode):
        shape = (2, 1, 2, 5, 6)
        y, v_hr, y_hat = (rng.random(shape) for _ in range(3))
        weights = LossWeights(beta=0.0, pixel_mode="l2", norm_mode=norm_mode)
        _, grad_y, grad_y_hat = aug_np_gradients(y, v_hr, y_hat, weights)
        indices = [tuple(rng.integers(0, d) for d in shape) for _ in range(12)]

        numeric = numeric_grad(lambda x: aug_np_loss(x, v_hr, y_hat, weights).total, y, indices)
        np.testing.assert_allclose([grad_y[i] for i in indices], numeric, rtol=1e-5, atol=1e-9)
        numeric = numeric_grad(lambda x: aug_np_loss(y, v_hr, x, weights).total, y_hat, indices)
        np.testing.assert_allclose([grad_y_hat[i] for i in indices], numeric, rtol=1e-5, atol=1e-9)

    def test_l1_terms_match_finite_differences(self, rng):
        shape = (1, 1, 1, 6, 6)
        v_hr = rng.random(shape)
        yy, xx = np.mgrid[0:6, 0:6] / 6.0
        offset = 0.2 + 0.3 * xx + 0.25 * yy + 0.2 * (xx * xx + yy * yy)
        y = v_hr + offset
        weights = LossWeights(lam=0.0)
        _, grad_y, _ = aug_np_gradients(y, v_hr, y, weights)
        indices = [(0, 0, 0, r, c) for r in range(6) for c in range(6)]
        numeric = numeric_grad(lambda x: aug_np_loss(x, v_hr, y, weights).total, y, indices)
        np.testing.assert_allclose([grad_y[i] for i in indices], numeric, rtol=1e-6, atol=1e-9)

    def test_zero_differences_give_zero_gradient(self, random_clip):
        y = as_batch(random_clip())
        _, grad_y, grad_y_hat = aug_np_gradients(y, y, y, LossWeights())
        assert not grad_y.any()
        assert not grad_y_hat.any()

    def test_negative_gradients_are_opposite(self, rng):
        shape = (1, 1, 1, 4, 4)
        y, y_hat = rng.random(shape), rng.random(shape)
        _, grad_y, grad_y_hat = aug_np_gradients(y, y, y_hat, LossWeights())
        np.testing.assert_allclose(grad_y, -grad_y_hat)
