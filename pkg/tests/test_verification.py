import numpy as np
import pytest

from diffdetect.detection import estimate_edd
from diffdetect.diffusion import ConstantDiffusion, gaussian_optimal
from diffdetect.models import GaussianModel, ModelPair, build_appendix_models
from diffdetect.statistics import DiffusionStatistic, KLStatistic
from diffdetect.verification import (FAIL, INCONCLUSIVE, PASS, OdeCounterexample,
                                     TheoremReport, run_suite, verify_arl_bound,
                                     verify_edd_asymptote, verify_gaussian_optimal,
                                     verify_identities, verify_ode_counterexample)


class TestGaussianOptimal:
    def test_one_dimensional_hand_case(self):
        pair = ModelPair(GaussianModel([0.0], [[4.0]]), GaussianModel([1.0], [[4.0]]))
        x = np.linspace(-5, 5, 11)[:, None]
        expect = x[:, 0] / 4 - 1 / 8
        np.testing.assert_allclose(KLStatistic(pair)(x), expect, atol=1e-14)
        np.testing.assert_allclose(DiffusionStatistic(pair, gaussian_optimal([[4.0]]))(x), expect,
                                   atol=1e-14)
        assert verify_gaussian_optimal([[4.0]], [0.0], [1.0], n_points=100).passed

    def test_appendix_pair(self):
        rep = verify_gaussian_optimal(n_points=10_000)
        assert rep.passed and rep.computed["max_abs_diff"] <= 1e-8

    def test_identity_is_a_negative_control(self):
        rep = verify_gaussian_optimal(m=ConstantDiffusion.identity(8), n_points=1000)
        assert rep.status == FAIL and rep.computed["max_abs_diff"] > 1e-3


class TestOde:
    def test_constants(self):
        ode = OdeCounterexample(0.5)
        assert ode.gamma == pytest.approx(2.5)
        assert ode.gamma > 0 and ode.delta > 0

    @pytest.mark.parametrize("sigma", [0.2, 0.5, 0.9, 1.5, 3.0])
    def test_gamma_delta_positive(self, sigma):
        ode = OdeCounterexample(sigma)
        assert ode.gamma > 0 and ode.delta > 0

    def test_signs_and_root(self):
        rep = verify_ode_counterexample()
        assert rep.passed
        assert rep.computed["u_tilde(-1)"] > 0 > rep.computed["u_tilde(-0.05)"]
        root = rep.computed["root"]
        assert -1 < root < -0.05
        assert abs(float(OdeCounterexample().u_tilde(root))) < 1e-12

    def test_no_randomness(self):
        assert verify_ode_counterexample().as_dict() == verify_ode_counterexample().as_dict()


class TestStoppingChecks:
    def test_arl_gate_inconclusive_when_uncalibrated(self):
        pair = build_appendix_models("gaussian")
        rep = verify_arl_bound(pair, ConstantDiffusion(3.0 * np.eye(8)), [2.0], 100)
        assert rep.status == INCONCLUSIVE
        assert rep.computed["heldout_exp_moment"] > 1.5
        assert "rows" not in rep.computed

    def test_arl_bound_with_kl_equivalent(self):
        pair = build_appendix_models("gaussian")
        rep = verify_arl_bound(pair, gaussian_optimal(pair.p_inf.sigma), [2.0, 3.0], 500)
        assert rep.passed
        assert rep.computed["rows"][0]["e^c"] == pytest.approx(7.389, abs=1e-3)

    def test_edd_asymptote(self):
        pair = build_appendix_models("gaussian")
        rep = verify_edd_asymptote(pair, gaussian_optimal(pair.p_inf.sigma), [2, 4, 8], 1000)
        assert rep.passed
        ratios = [r["ratio"] for r in rep.computed["rows"]]
        assert abs(ratios[-1] - 1) < abs(ratios[0] - 1)

    def test_optimal_edd_equals_kl_edd(self):
        pair = build_appendix_models("gaussian")
        m = gaussian_optimal(pair.p_inf.sigma)
        a = estimate_edd(DiffusionStatistic(pair, m), pair, 4.0, 500, seed=5)
        b = estimate_edd(KLStatistic(pair), pair, 4.0, 500, seed=5)
        np.testing.assert_array_equal(a.stop_times, b.stop_times)


class TestIdentities:
    def test_gaussian_identity_m(self):
        rep = verify_identities(build_appendix_models("gaussian"), ConstantDiffusion.identity(8),
                                n_samples=20_000)
        assert rep.passed and rep.computed["drift_signs_ok"]


class TestReport:
    def test_text_fields(self):
        text = verify_ode_counterexample().to_text()
        keys = [line.split(":")[0] for line in text.splitlines()]
        assert keys == ["theorem", "inputs", "computed", "tolerances", "bound", "pass"]

    def test_status(self):
        r = TheoremReport("x", {}, {}, "", PASS)
        assert r.passed and not TheoremReport("x", {}, {}, "", INCONCLUSIVE).passed

    def test_suite_single_item(self):
        reports = run_suite(only="gaussian-optimal")
        assert [r.theorem for r in reports] == ["gaussian-optimal"]

    def test_suite_unknown_item(self):
        with pytest.raises(ValueError):
            run_suite(only="riemann")
