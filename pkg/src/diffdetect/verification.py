"""Executable checks of the theoretical guarantees.

Each ``verify_*`` function returns a :class:`TheoremReport` recording its
inputs (seeds, sample counts), the computed quantities, the bound or identity
checked and the outcome. Reports serialize to a small ``key: value`` text
format and to JSON-compatible dicts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .detection import error_exponent_estimate, estimate_arl, estimate_edd
from .diffusion import ConstantDiffusion, calibrate_scale_ht, gaussian_optimal
from .errors import ArgumentError
from .models import (MU_INF_STAR, MU_ONE_STAR, V_STAR, GaussianModel, ModelPair,
                     build_appendix_models)
from .samplers import PairSampler
from .statistics import (DiffusionStatistic, KLStatistic, divergence_mc, drift_check,
                         score_identity_check)

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
ODE_PRINTED = {"u_tilde(-1)": 0.054, "u_tilde(-0.05)": -0.013}


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return value


@dataclass
class TheoremReport:
    theorem: str
    inputs: dict
    computed: dict
    bound: str
    status: str
    tolerances: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def as_dict(self) -> dict:
        return _plain({"theorem": self.theorem, "inputs": self.inputs,
                       "computed": self.computed, "bound": self.bound,
                       "tolerances": self.tolerances, "pass": self.status})

    def to_text(self) -> str:
        d = self.as_dict()
        lines = [f"theorem: {d['theorem']}"]
        for key in ("inputs", "computed", "tolerances"):
            lines.append(f"{key}: {json.dumps(d[key], sort_keys=True)}")
        lines.append(f"bound: {d['bound']}")
        lines.append(f"pass: {d['pass']}")
        return "\n".join(lines) + "\n"


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


# -- Gaussian optimality


def verify_gaussian_optimal(V=V_STAR, mu_inf=MU_INF_STAR, mu_one=MU_ONE_STAR,
                            n_points: int = 10_000, seed: int = 0, m=None,
                            tol: float = 1e-8) -> TheoremReport:
    """max |Z_M(x) - Z_KL(x)| over random points, with M = V^{1/2} unless
    ``m`` overrides it (a negative control)."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    pair = ModelPair(GaussianModel(np.atleast_1d(mu_inf), V),
                     GaussianModel(np.atleast_1d(mu_one), V))
    m = gaussian_optimal(V) if m is None else m
    rng = np.random.default_rng(seed)
    # half the points around each mean, spread twice as wide as the models
    half = n_points // 2
    L = 2.0 * pair.p_inf.chol
    X = np.concatenate([
        pair.p_inf.mu + rng.standard_normal((half, pair.d)) @ L.T,
        pair.p_one.mu + rng.standard_normal((n_points - half, pair.d)) @ L.T,
    ])
    diff = np.abs(DiffusionStatistic(pair, m)(X) - KLStatistic(pair)(X))
    max_diff = float(diff.max())
    return TheoremReport(
        "gaussian-optimal",
        {"d": pair.d, "n_points": n_points, "seed": seed},
        {"max_abs_diff": max_diff, "argmax": int(diff.argmax())},
        f"max |Z_M - Z_KL| <= {tol:g}", _status(max_diff <= tol), {"abs": tol})


# -- ODE counterexample


@dataclass(frozen=True)
class OdeCounterexample:
    """Constants of the one-dimensional pair N(0, sigma^2) vs N(0, 1)."""

    sigma: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0 or self.sigma == 1.0:
            raise ArgumentError("sigma must be positive and different from 1")

    @property
    def gamma(self) -> float:
        s = self.sigma
        return 0.5 * (1.0 - s ** -4) / (1.0 - s ** -2)

    @property
    def delta(self) -> float:
        s = self.sigma
        return math.log(s) / (1.0 - s ** -2)

    @property
    def zeta(self) -> float:
        return (-self.delta - 1.0 / (2.0 * self.gamma)) * math.sqrt(2.0 * math.pi / self.gamma)

    def u_tilde(self, x):
        x = np.asarray(x, dtype=float)
        g = self.gamma
        return self.zeta * norm.cdf(x * math.sqrt(g)) - x * np.exp(-0.5 * g * x * x) / (2.0 * g)


def verify_ode_counterexample(sigma: float = 0.5) -> TheoremReport:
    """Sign change of u~ on [-1, -0.05]; a root is located by bracketing."""
    ode = OdeCounterexample(sigma)
    a, b = float(ode.u_tilde(-1.0)), float(ode.u_tilde(-0.05))
    ok = a > 0.0 > b
    computed = {"gamma": ode.gamma, "delta": ode.delta, "zeta": ode.zeta,
                "u_tilde(-1)": a, "u_tilde(-0.05)": b,
                "printed_not_asserted": ODE_PRINTED}
    if ok:
        computed["root"] = float(brentq(lambda x: float(ode.u_tilde(x)), -1.0, -0.05,
                                        xtol=1e-14))
    return TheoremReport("ode-counterexample", {"sigma": sigma}, computed,
                         "u_tilde(-1) > 0 and u_tilde(-0.05) < 0", _status(ok),
                         {"asserted": "signs only"})


# -- stopping-rule bounds


def verify_arl_bound(pair: ModelPair, m_calibrated, c_list, n_paths: int,
                     heldout_inf=None, seed: int = 0, threads: int = 1,
                     max_len: int | None = None, n_sigma: float = 3.0) -> TheoremReport:
    """ARL >= e^c - 3 se for each c, gated on the held-out exponential moment.

    The gate fails (report inconclusive) when the held-out mean of
    ``exp Z_m`` exceeds one by more than ``n_sigma`` standard errors.
    """
    c_list = [float(c) for c in np.atleast_1d(c_list)]
    stat = DiffusionStatistic(pair, m_calibrated)
    sampler = PairSampler(pair)
    if heldout_inf is None:
        heldout_inf = sampler.draw_inf(10_000, np.random.SeedSequence([seed, 1]))
    with np.errstate(over="ignore"):
        e = np.exp(stat(heldout_inf))
    e_mean = float(e.mean())
    e_se = float(e.std(ddof=1) / math.sqrt(e.size))
    inputs = {"c_list": c_list, "n_paths": n_paths, "seed": seed,
              "n_heldout": int(e.size), "max_len": max_len}
    computed = {"heldout_exp_moment": e_mean, "heldout_exp_moment_se": e_se}
    if not np.isfinite(e_mean) or e_mean - n_sigma * e_se > 1.0:
        return TheoremReport("arl-bound", inputs, computed,
                             "E_inf[exp Z_m] <= 1 required on held-out data",
                             INCONCLUSIVE, {"n_sigma": n_sigma})
    results = estimate_arl(stat, sampler, c_list, n_paths, max_len, seed, threads)
    rows, ok = [], True
    for r in results:
        bound = math.exp(r.threshold)
        row_ok = r.mean >= bound - n_sigma * r.std_error
        ok &= row_ok
        rows.append({"c": r.threshold, "arl": r.mean, "se": r.std_error,
                     "censored_frac": r.censored_frac, "e^c": bound, "pass": row_ok})
    computed["rows"] = rows
    return TheoremReport("arl-bound", inputs, computed, "ARL >= e^c - 3 se",
                         _status(ok), {"n_sigma": n_sigma})


def verify_edd_asymptote(pair: ModelPair, m, c_list, n_paths: int, seed: int = 0,
                         n_div_samples: int = 100_000, threads: int = 1,
                         band: tuple[float, float] = (0.85, 1.15)) -> TheoremReport:
    """EDD(c) D_m(P_one||P_inf) / c within ``band`` at the largest c."""
    c_list = sorted(float(c) for c in np.atleast_1d(c_list))
    sampler = PairSampler(pair)
    samples = sampler.draw_one(n_div_samples, np.random.SeedSequence([seed, 2]))
    div = divergence_mc(pair, "one_to_inf", m, samples)
    results = estimate_edd(DiffusionStatistic(pair, m), sampler, c_list, n_paths,
                           seed=seed, threads=threads)
    rows = [{"c": r.threshold, "edd": r.mean, "se": r.std_error,
             "censored_frac": r.censored_frac, "ratio": r.mean * div.value / r.threshold}
            for r in results]
    final = rows[-1]["ratio"]
    ok = band[0] <= final <= band[1] and not results[-1].lower_bound
    return TheoremReport(
        "edd-asymptote",
        {"c_list": c_list, "n_paths": n_paths, "seed": seed, "n_div_samples": n_div_samples},
        {"divergence": div.value, "divergence_se": div.std_error, "rows": rows},
        f"EDD(c_max) D_m / c_max in [{band[0]}, {band[1]}]", _status(ok), {"band": band})


# -- identities


def verify_identities(pair: ModelPair, m, n_samples: int = 100_000, seed: int = 0,
                      sampler: PairSampler | None = None, samples=None) -> TheoremReport:
    """Drift identities and the score identity, both directions, 4-sigma each.

    ``samples`` may supply pre-drawn ``(from_inf, from_one)`` arrays.
    """
    if samples is None:
        sampler = sampler or PairSampler(pair)
        s_inf, s_one = np.random.SeedSequence([seed, 3]).spawn(2)
        samples = (sampler.draw_inf(n_samples, np.random.default_rng(s_inf)),
                   sampler.draw_one(n_samples, np.random.default_rng(s_one)))
    X_inf, X_one = samples
    drift = drift_check(pair, m, X_inf, X_one)
    checks = [
        drift.pre_change, drift.post_change,
        score_identity_check(pair.p_inf, pair.p_one, m, X_inf, "score identity under P_inf"),
        score_identity_check(pair.p_one, pair.p_inf, m, X_one, "score identity under P_one"),
    ]
    ok = all(c.passed for c in checks)
    return TheoremReport(
        "identities", {"n_samples": int(X_inf.shape[0]), "seed": seed, "kind": pair.kind},
        {"checks": [c.as_dict() for c in checks], "drift_signs_ok": drift.positive},
        "|lhs - rhs| <= 4 combined se", _status(ok), {"n_sigma": 4.0})


def verify_error_exponent(pair: ModelPair, m, n_grid=(2, 4, 6, 8, 10, 12, 14, 16),
                          n_batches: int = 20_000, seed: int = 0, delta: float = 0.0,
                          n_div_samples: int = 100_000) -> TheoremReport:
    """Type-II exponent slope >= D_m(P_inf||P_one) - 2 se after HT calibration."""
    sampler = PairSampler(pair)
    s_cal, s_div = np.random.SeedSequence([seed, 4]).spawn(2)
    cal = sampler.draw_one(n_div_samples, np.random.default_rng(s_cal))
    k = calibrate_scale_ht(m, cal, pair, exact=True)
    mk = m.scaled(k)
    div = divergence_mc(pair, "inf_to_one", mk,
                        sampler.draw_inf(n_div_samples, np.random.default_rng(s_div)))
    fit = error_exponent_estimate(DiffusionStatistic(pair, mk), sampler, div.value,
                                  n_grid, n_batches, delta, seed)
    lower = div.value - 2.0 * fit.slope_se
    return TheoremReport(
        "error-exponent",
        {"n_grid": list(n_grid), "n_batches": n_batches, "seed": seed, "delta": delta},
        {"scale": k, "divergence": div.value, "slope": fit.slope, "slope_se": fit.slope_se,
         "beta": fit.beta, "dropped": fit.dropped},
        "slope >= D_m(P_inf||P_one) - 2 se", _status(fit.slope >= lower), {"n_se": 2.0})


# -- suite


SUITE_IDS = ("gaussian-optimal", "ode-counterexample", "identities", "error-exponent",
             "arl-bound", "edd-asymptote")


@dataclass(frozen=True)
class SuiteConfig:
    seed: int = 0
    n_paths: int = 1000
    arl_c: tuple = (2.0, 3.0, 4.0)
    edd_c: tuple = (2.0, 4.0, 8.0)
    identity_samples: int = 100_000
    threads: int = 1


def run_suite(cfg: SuiteConfig = SuiteConfig(), only=None) -> list[TheoremReport]:
    """Run the suite items in ``SUITE_IDS`` order, or just the one named by ``only``."""
    if only is not None and only not in SUITE_IDS:
        raise ArgumentError(f"unknown suite item {only!r}; expected one of {SUITE_IDS}")
    wanted = [only] if only else list(SUITE_IDS)
    gauss = build_appendix_models("gaussian")
    m_star = gaussian_optimal(V_STAR)
    reports = []
    for item in wanted:
        if item == "gaussian-optimal":
            reports.append(verify_gaussian_optimal(seed=cfg.seed))
        elif item == "ode-counterexample":
            reports.append(verify_ode_counterexample())
        elif item == "identities":
            rng = np.random.default_rng(cfg.seed)
            m_rand = ConstantDiffusion(rng.standard_normal((8, 8)) / math.sqrt(8))
            for kind in ("gaussian", "gbrbm", "quartic"):
                pair = build_appendix_models(kind, cfg.seed)
                sampler = PairSampler(pair)
                s_inf, s_one = np.random.SeedSequence([cfg.seed, 3]).spawn(2)
                samples = (sampler.draw_inf(cfg.identity_samples, np.random.default_rng(s_inf)),
                           sampler.draw_one(cfg.identity_samples, np.random.default_rng(s_one)))
                for label, m in (("identity", ConstantDiffusion.identity(8)),
                                 ("random", m_rand)):
                    rep = verify_identities(pair, m, seed=cfg.seed, samples=samples)
                    rep.theorem = f"identities-{kind}-{label}"
                    reports.append(rep)
        elif item == "error-exponent":
            reports.append(verify_error_exponent(gauss, m_star, seed=cfg.seed))
        elif item == "arl-bound":
            from .diffusion import calibrate_scale

            cal = PairSampler(gauss).draw_inf(10_000, np.random.SeedSequence([cfg.seed, 5]))
            m = ConstantDiffusion.identity(8)
            k = calibrate_scale(m, cal, gauss, exact=True)
            rep = verify_arl_bound(gauss, m.scaled(k), cfg.arl_c, cfg.n_paths,
                                   seed=cfg.seed, threads=cfg.threads)
            rep.computed["scale"] = k
            reports.append(rep)
        elif item == "edd-asymptote":
            reports.append(verify_edd_asymptote(gauss, m_star, cfg.edd_c, cfg.n_paths,
                                                seed=cfg.seed, threads=cfg.threads))
    return reports
