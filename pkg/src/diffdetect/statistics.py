"""Per-sample detection statistics and Monte-Carlo divergence estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ArgumentError, ConfigurationError, NumericalDomainError
from .diffusion import ConstantDiffusion
from .models import ModelPair, as_batch

DEFAULT_NORM_RATIO_SAMPLES = 100_000
MIN_NORM_RATIO_SAMPLES = 1000


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = values.shape[0]
    if n == 0:
        raise ArgumentError("empty sample set")
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se


def hyvarinen_score(x, model) -> np.ndarray:
    """``1/2 |grad log q|^2 + laplacian log q``."""
    s = model.score(x)
    return 0.5 * np.sum(s * s, axis=-1) + model.laplacian(x)


def diffusion_hyvarinen_score(x, model, m) -> np.ndarray:
    """``1/2 |m^T s|^2 + div(m m^T s)`` with ``s`` the model score.

    The divergence is assembled analytically from m, its input Jacobian, the
    score and the score Jacobian. For constant m the Jacobian terms vanish and
    are skipped.
    """
    X, single = as_batch(x, model.d)
    mX = m.eval(X)
    s, H = model.score(X), model.score_jacobian(X)
    A = np.einsum("nik,njk->nij", mX, mX)
    mts = np.einsum("njk,nj->nk", mX, s)
    # trace of A @ H reduces in the same order as the model laplacian, so m = I
    # reproduces the Hyvarinen score bit for bit
    out = 0.5 * np.sum(mts * mts, axis=1) + np.trace(A @ H, axis1=1, axis2=2)
    if not isinstance(m, ConstantDiffusion):
        J = m.input_jacobian(X)
        # sum_ij d/dx_i (m m^T)_ij s_j, split by which factor of m is differentiated
        out += np.einsum("nk,nk->n", mts, np.einsum("niki->nk", J))
        n, d = X.shape
        U = (s[:, None, :] @ J.reshape(n, d, d * d)).reshape(n, d, d)
        out += np.einsum("nik,nki->n", mX, U)
    return out[0] if single else out


def fisher_z(pair: ModelPair, x) -> np.ndarray:
    return hyvarinen_score(x, pair.p_inf) - hyvarinen_score(x, pair.p_one)


def diffusion_z(pair: ModelPair, m, x) -> np.ndarray:
    return (diffusion_hyvarinen_score(x, pair.p_inf, m)
            - diffusion_hyvarinen_score(x, pair.p_one, m))


def diffusion_z_with_grads(pair: ModelPair, m, X):
    """Z_m on a batch together with dZ/dm (n,d,d) and dZ/dJ (n,d,d,d)."""
    X, _ = as_batch(X, pair.d)
    mX, JX = m.eval(X), m.input_jacobian(X)
    s_inf, s_one = pair.p_inf.score(X), pair.p_one.score(X)
    dH = pair.p_inf.score_jacobian(X) - pair.p_one.score_jacobian(X)
    ds = s_inf - s_one
    Q = 0.5 * (np.einsum("ni,nj->nij", s_inf, s_inf)
               - np.einsum("ni,nj->nij", s_one, s_one)) + dH
    A = np.einsum("nik,njk->nij", mX, mX)
    t = np.einsum("niki->nk", JX)
    mtds = np.einsum("njk,nj->nk", mX, ds)
    n, d = X.shape
    # U[n, k, i] = sum_j ds[n, j] J[n, j, k, i]
    U = (ds[:, None, :] @ JX.reshape(n, d, d * d)).reshape(n, d, d)
    z = (np.einsum("nij,nij->n", A, Q) + np.einsum("nk,nk->n", mtds, t)
         + np.einsum("nik,nki->n", mX, U))

    Qs = 0.5 * (Q + np.swapaxes(Q, 1, 2))
    grad_m = (2.0 * np.einsum("nij,njk->nik", Qs, mX)
              + np.einsum("nj,nk->njk", ds, t)
              + np.swapaxes(U, 1, 2))
    grad_J = np.einsum("nj,nik->njki", ds, mX)
    idx = np.arange(pair.d)
    # advanced indexing moves the diagonal axis first: view shape (d, n, d)
    grad_J[:, idx, :, idx] += mtds[None, :, :]
    return z, grad_m, grad_J


def divergence_integrand(pair_p, pair_q, m, X) -> np.ndarray:
    """Per-sample ``1/2 |m^T (grad log p - grad log q)|^2``; ``m=None`` is identity."""
    diff = pair_p.score(X) - pair_q.score(X)
    if m is not None:
        diff = np.einsum("njk,nj->nk", m.eval(X), diff)
    return 0.5 * np.sum(diff * diff, axis=1)


# -- statistics objects


class FisherStatistic:
    """Difference of Hyvarinen scores, Z_F = S_H(x, P_inf) - S_H(x, P_one)."""

    name = "fisher"

    def __init__(self, pair: ModelPair):
        self.pair = pair

    def __call__(self, x) -> np.ndarray:
        return fisher_z(self.pair, x)


class DiffusionStatistic:
    """Z_m = S_m(x, P_inf) - S_m(x, P_one) for a diffusion matrix function m."""

    name = "diffusion"

    def __init__(self, pair: ModelPair, m, name: str | None = None):
        if m.d != pair.d:
            raise ArgumentError(f"diffusion dimension {m.d} does not match models ({pair.d})")
        self.pair = pair
        self.m = m
        if name is not None:
            self.name = name

    def __call__(self, x) -> np.ndarray:
        if isinstance(self.m, ConstantDiffusion) and self.m.is_identity():
            # m = I reproduces the Fisher statistic; share its code path so
            # detectors built on either agree bit for bit
            return fisher_z(self.pair, x)
        return diffusion_z(self.pair, self.m, x)


class KLStatistic:
    """Log-likelihood ratio ``log p_one - log p_inf``.

    For unnormalized models the log normalizer ratio ``log(C_inf / C_one)``
    must be supplied (see :func:`norm_ratio_estimate`).
    """

    name = "kl"

    def __init__(self, pair: ModelPair, norm_ratio_log: float | None = None):
        if norm_ratio_log is None:
            if not (pair.p_inf.normalized and pair.p_one.normalized):
                raise ConfigurationError(
                    "KL statistic on unnormalized models needs norm_ratio_log; "
                    "estimate it with norm_ratio_estimate")
            norm_ratio_log = 0.0
        if not np.isfinite(norm_ratio_log):
            raise ConfigurationError("norm_ratio_log must be finite")
        self.pair = pair
        self.norm_ratio_log = float(norm_ratio_log)

    def __call__(self, x) -> np.ndarray:
        return (self.pair.p_one.unnorm_log_density(x)
                - self.pair.p_inf.unnorm_log_density(x) + self.norm_ratio_log)


DetectionStatistic = FisherStatistic | DiffusionStatistic | KLStatistic


def z_value(stat, x) -> np.ndarray:
    return stat(x)


@dataclass(frozen=True)
class NormRatio:
    log_ratio: float
    std_error: float
    n_samples: int


def norm_ratio_estimate(pair: ModelPair, samples_p1,
                        min_samples: int = MIN_NORM_RATIO_SAMPLES) -> NormRatio:
    """Estimate ``log(C_inf / C_one)`` as the log of the sample mean of
    ``p~_inf / p~_one`` over draws from ``P_one``.

    The standard error is for the log estimate (delta method).
    """
    X, _ = as_batch(samples_p1, pair.d)
    n = X.shape[0]
    if n < min_samples:
        raise ArgumentError(f"need at least {min_samples} samples, got {n}")
    with np.errstate(over="ignore", invalid="ignore"):
        log_r = pair.p_inf.unnorm_log_density(X) - pair.p_one.unnorm_log_density(X)
    finite = np.isfinite(log_r)
    if not finite.any():
        raise NumericalDomainError("all density ratios are non-finite")
    log_r = log_r[finite]
    estimate = float(logsumexp(log_r) - np.log(log_r.size))
    r = np.exp(log_r - log_r.max())
    se = float(r.std(ddof=1) / (np.sqrt(r.size) * r.mean())) if r.size > 1 else 0.0
    return NormRatio(estimate, se, int(log_r.size))


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    std_error: float
    n_samples: int


def divergence_mc(pair: ModelPair, direction: str, m=None, samples=None) -> DivergenceEstimate:
    """Monte-Carlo Fisher (``m is None``) or diffusion divergence.

    ``direction`` is ``"inf_to_one"`` for D(P_inf || P_one), with ``samples``
    drawn from P_inf, or ``"one_to_inf"`` for D(P_one || P_inf).
    """
    if direction == "inf_to_one":
        p, q = pair.p_inf, pair.p_one
    elif direction == "one_to_inf":
        p, q = pair.p_one, pair.p_inf
    else:
        raise ArgumentError(f"unknown direction {direction!r}")
    if samples is None:
        raise ArgumentError("samples are required")
    X, _ = as_batch(samples, pair.d)
    if X.shape[0] == 0:
        raise ArgumentError("empty sample set")
    value, se = _mean_se(divergence_integrand(p, q, m, X))
    return DivergenceEstimate(value, se, X.shape[0])


@dataclass(frozen=True)
class IdentityComparison:
    """Two Monte-Carlo means that should agree, with their standard errors."""

    label: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    n_sigma: float = 4.0

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.lhs_se, self.rhs_se))

    @property
    def passed(self) -> bool:
        return abs(self.lhs - self.rhs) <= self.n_sigma * self.combined_se + 1e-12

    def as_dict(self) -> dict:
        return {"label": self.label, "lhs": self.lhs, "lhs_se": self.lhs_se,
                "rhs": self.rhs, "rhs_se": self.rhs_se,
                "combined_se": self.combined_se, "passed": self.passed}


@dataclass(frozen=True)
class DriftReport:
    pre_change: IdentityComparison
    post_change: IdentityComparison

    @property
    def positive(self) -> bool:
        """Pre-change drift negative and post-change drift positive."""
        return self.pre_change.lhs < 0.0 < self.post_change.lhs

    @property
    def passed(self) -> bool:
        return self.pre_change.passed and self.post_change.passed


def drift_check(pair: ModelPair, m, samples_inf, samples_one) -> DriftReport:
    """Compare E_inf[Z_m] with -D_m(P_inf||P_one) and E_one[Z_m] with D_m(P_one||P_inf)."""
    Xi, _ = as_batch(samples_inf, pair.d)
    Xo, _ = as_batch(samples_one, pair.d)
    z_inf, se_z_inf = _mean_se(diffusion_z(pair, m, Xi))
    z_one, se_z_one = _mean_se(diffusion_z(pair, m, Xo))
    d_inf = divergence_mc(pair, "inf_to_one", m, Xi)
    d_one = divergence_mc(pair, "one_to_inf", m, Xo)
    return DriftReport(
        IdentityComparison("E_inf[Z_m] vs -D_m(P_inf||P_one)", z_inf, se_z_inf,
                           -d_inf.value, d_inf.std_error),
        IdentityComparison("E_one[Z_m] vs D_m(P_one||P_inf)", z_one, se_z_one,
                           d_one.value, d_one.std_error),
    )


def score_identity_check(p, q, m, samples_p, label: str = "") -> IdentityComparison:
    """Both sides of ``E_p[1/2|m^T(s_p - s_q)|^2] = E_p[1/2|m^T s_p|^2 + S_m(x, q)]``."""
    X, _ = as_batch(samples_p, p.d)
    lhs = divergence_integrand(p, q, m, X)
    sp = p.score(X)
    mts = np.einsum("njk,nj->nk", m.eval(X), sp)
    rhs = 0.5 * np.sum(mts * mts, axis=1) + diffusion_hyvarinen_score(X, q, m)
    l_mean, l_se = _mean_se(lhs)
    r_mean, r_se = _mean_se(rhs)
    return IdentityComparison(label or "score identity", l_mean, l_se, r_mean, r_se)


def z_table(stats, X) -> dict[str, np.ndarray]:
    """Evaluate several statistics on the same samples, keyed by statistic name."""
    return {stat.name: stat(X) for stat in stats}
