import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import central_diff, rel_err, small_models
from diffdetect.errors import ArgumentError, NumericalDomainError
from diffdetect.models import (MU_INF_STAR, V_STAR, GaussianModel, GbRbmModel, ModelPair,
                               QuarticModel, build_appendix_models, model_from_dict,
                               softplus)


class TestPointValues:
    def test_standard_normal_at_mode(self):
        m = GaussianModel([0.0], [[1.0]])
        assert m.unnorm_log_density([0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
        assert m.unnorm_log_density([0.0]) == pytest.approx(-0.918939, abs=1e-6)

    def test_quartic_at_origin_is_zero(self):
        assert QuarticModel([0.0], [[1.0]]).unnorm_log_density([0.0]) == 0.0

    def test_quartic_score_hand_value(self):
        # -4 * (x^2 - mu) * x at x = 2
        assert QuarticModel([0.0], [[1.0]]).score([2.0])[0] == pytest.approx(-32.0)

    def test_quartic_hessian_hand_value(self):
        assert QuarticModel([0.0], [[1.0]]).score_jacobian([1.0])[0, 0] == pytest.approx(-12.0)

    def test_standard_normal_score_and_hessian(self, rng):
        m = GaussianModel(np.zeros(4), np.eye(4))
        x = rng.standard_normal(4)
        np.testing.assert_array_equal(m.score(x), -x)
        np.testing.assert_array_equal(m.score_jacobian(x), -np.eye(4))

    def test_rbm_zero_weights_is_gaussian_plus_log2(self, rng):
        S = np.array([[2.0, 0.3], [0.3, 1.0]])
        mu = np.array([0.5, -1.0])
        rbm = GbRbmModel(mu, S, np.zeros((2, 3)), np.zeros(3))
        gauss = GaussianModel(mu, S)
        X = rng.standard_normal((20, 2))
        exponent = gauss.unnorm_log_density(X) + 0.5 * (2 * math.log(2 * math.pi) + gauss.log_det)
        np.testing.assert_allclose(rbm.unnorm_log_density(X), exponent + 3 * math.log(2),
                                   rtol=0, atol=1e-12)


class TestDerivatives:
    @pytest.mark.parametrize("model", small_models(), ids=lambda m: m.kind)
    def test_score_matches_finite_differences(self, model, rng):
        for _ in range(100):
            x = rng.standard_normal(model.d)
            fd = central_diff(lambda z: model.unnorm_log_density(z), x)
            assert rel_err(model.score(x), fd) < 1e-6

    @pytest.mark.parametrize("model", small_models(), ids=lambda m: m.kind)
    def test_jacobian_matches_finite_differences(self, model, rng):
        for _ in range(50):
            x = rng.standard_normal(model.d)
            H = model.score_jacobian(x)
            assert rel_err(H, central_diff(model.score, x)) < 1e-5
            assert np.max(np.abs(H - H.T)) < 1e-8

    @pytest.mark.parametrize("kind", ["gaussian", "gbrbm", "quartic"])
    def test_appendix_models_derivatives(self, kind, rng):
        pair = build_appendix_models(kind)
        for model in (pair.p_inf, pair.p_one):
            x = rng.standard_normal(8)
            assert rel_err(model.score(x),
                           central_diff(lambda z: model.unnorm_log_density(z), x)) < 1e-6
            assert rel_err(model.score_jacobian(x), central_diff(model.score, x)) < 1e-5

    def test_batch_matches_pointwise(self, rng):
        for model in small_models():
            X = rng.standard_normal((5, model.d))
            for i in range(5):
                np.testing.assert_allclose(model.score(X)[i], model.score(X[i]), rtol=0, atol=1e-14)
                np.testing.assert_allclose(model.score_jacobian(X)[i], model.score_jacobian(X[i]),
                                           rtol=0, atol=1e-14)

    def test_rbm_zero_weights_scores_bit_identical(self, rng):
        S = np.array([[2.0, 0.3], [0.3, 1.0]])
        gauss = GaussianModel([0.1, 0.2], S)
        # phi only shifts log p~ by a constant
        rbm = GbRbmModel([0.1, 0.2], S, np.zeros((2, 4)), rng.standard_normal(4))
        X = rng.standard_normal((30, 2))
        np.testing.assert_array_equal(rbm.score(X), gauss.score(X))
        np.testing.assert_array_equal(rbm.score_jacobian(X), gauss.score_jacobian(X))


class TestValidation:
    def test_rejects_asymmetric(self):
        with pytest.raises(ArgumentError):
            GaussianModel([0, 0], [[1, 0.5], [0.4, 1]])

    def test_rejects_indefinite(self):
        with pytest.raises(ArgumentError):
            QuarticModel([0, 0], [[1, 2], [2, 1]])

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            GaussianModel([0.0, 0.0], np.eye(2)).score([1.0, 2.0, 3.0])

    def test_non_finite_input_is_numerical_error(self):
        with pytest.raises(NumericalDomainError):
            GaussianModel([0.0], [[1.0]]).unnorm_log_density([np.inf])

    def test_identical_pair_rejected(self):
        g = GaussianModel([0.0], [[1.0]])
        with pytest.raises(ArgumentError):
            ModelPair(g, GaussianModel([0.0], [[1.0]]))

    def test_models_are_immutable(self):
        g = GaussianModel([0.0], [[1.0]])
        with pytest.raises(ValueError):
            g.mu[0] = 1.0

    def test_caches(self):
        m = small_models()[0]
        np.testing.assert_allclose(m.sigma_inv @ m.sigma, np.eye(m.d), atol=1e-10)
        assert m.log_det == pytest.approx(np.linalg.slogdet(m.sigma)[1], abs=1e-12)


class TestExperimentalModels:
    def test_gaussian_means_and_covariance(self):
        pair = build_appendix_models("gaussian")
        assert pair.p_inf.mu[0] == pytest.approx(0.99974)
        np.testing.assert_array_equal(pair.p_one.mu, np.zeros(8))
        assert pair.p_inf.sigma[0, 0] == pytest.approx(6.94357)
        np.testing.assert_array_equal(pair.p_inf.sigma, V_STAR)
        np.testing.assert_array_equal(pair.p_inf.mu, MU_INF_STAR)

    def test_rbm_is_seeded(self):
        a, b = build_appendix_models("gbrbm", 7), build_appendix_models("gbrbm", 7)
        assert a.p_inf == b.p_inf and a.p_one == b.p_one
        c = build_appendix_models("gbrbm", 8)
        assert not np.array_equal(a.p_inf.W, c.p_inf.W)

    def test_rbm_perturbation_is_small(self):
        pair = build_appendix_models("gbrbm")
        assert pair.p_inf.W.shape == (8, 6)
        assert np.std(pair.p_one.W - pair.p_inf.W) < 0.3

    def test_unknown_kind(self):
        with pytest.raises(ArgumentError):
            build_appendix_models("cauchy")

    @pytest.mark.parametrize("kind", ["gaussian", "gbrbm", "quartic"])
    def test_dict_round_trip(self, kind):
        pair = build_appendix_models(kind)
        assert model_from_dict(pair.p_one.to_dict()) == pair.p_one


@given(st.floats(-700, 700))
def test_softplus_stable(z):
    v = float(softplus(np.array([z]))[0])
    assert math.isfinite(v) and v >= max(z, 0.0)
    assert v == pytest.approx(math.log1p(math.exp(z)) if z < 30 else z, rel=1e-12, abs=1e-300)
