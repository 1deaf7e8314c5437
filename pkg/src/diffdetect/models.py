"""Analytic score models.

Every model exposes the unnormalized log-density, its gradient (the score) and
the Hessian of the log-density (the score Jacobian). All three accept either a
single point of shape ``(d,)`` or a batch of shape ``(n, d)`` and return arrays
with the matching leading dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ArgumentError, NumericalDomainError

LOG_2PI = np.log(2.0 * np.pi)

# Shared covariance of the experimental pairs. The printed table carries one
# asymmetric entry (0.8728 vs 0.87281 at [2, 7]); it is symmetrized on use.
_V_STAR_PRINTED = np.array([
    [6.94357, -3.41203, -2.15460, -0.48852, -0.21851, -0.39300, -0.93257, -0.75584],
    [-3.41203, 3.78724, 0.5144, -0.30651, 1.64793, 0.06043, 0.71543, -1.44385],
    [-2.15460, 0.5144, 3.75500, 2.00786, -1.22796, -0.94496, -2.25916, 0.8728],
    [-0.48852, -0.30651, 2.00786, 2.93120, -1.57410, -1.91590, -1.7714, 0.02425],
    [-0.21851, 1.64793, -1.22796, -1.57410, 5.37965, 2.21935, -1.66047, -2.40907],
    [-0.39300, 0.06043, -0.94496, -1.91590, 2.21935, 6.24591, -0.93225, 3.02939],
    [-0.93257, 0.71543, -2.25916, -1.7714, -1.66047, -0.93225, 8.12932, 0.29485],
    [-0.75584, -1.44385, 0.87281, 0.02425, -2.40907, 3.02939, 0.29485, 6.82808],
])
V_STAR = 0.5 * (_V_STAR_PRINTED + _V_STAR_PRINTED.T)
MU_ONE_STAR = np.zeros(8)
MU_INF_STAR = np.array(
    [0.99974, -1.11210, -0.11677, 0.1231, -0.55111, 0.29397, -0.71772, 0.93254]
)
RBM_HIDDEN = 6
RBM_PERTURBATION_STD = 0.1

MODEL_KINDS = ("gaussian", "gbrbm", "quartic")


def as_batch(x, d: int) -> tuple[np.ndarray, bool]:
    """Return ``x`` as a float ``(n, d)`` array and whether it was a single point."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ArgumentError(f"expected points of dimension {d}, got shape {np.shape(x)}")
    return arr, single


def _unbatch(value: np.ndarray, single: bool) -> np.ndarray:
    return value[0] if single else value


def softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ArgumentError(f"{name} must have {ndim} dimension(s), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class _SpdBase:
    """Location/covariance bookkeeping shared by all three model classes."""

    kind = ""
    normalized = False

    def __init__(self, mu, sigma):
        self.mu = _frozen(mu, 1, "mu")
        self.sigma = _frozen(sigma, 2, "sigma")
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise ArgumentError(f"sigma must be {d}x{d}, got {self.sigma.shape}")
        if np.max(np.abs(self.sigma - self.sigma.T), initial=0.0) > 1e-12:
            raise ArgumentError("sigma is not symmetric")
        try:
            chol = np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError as exc:
            raise ArgumentError("sigma is not positive definite") from exc
        self.d = d
        self.chol = _readonly(chol)
        eye = np.eye(d)
        inv = np.linalg.solve(self.sigma, eye)
        self.sigma_inv = _readonly(0.5 * (inv + inv.T))
        self.log_det = float(2.0 * np.sum(np.log(np.diag(chol))))

    def _check(self, value: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(value)):
            raise NumericalDomainError(f"{self.kind} model produced a non-finite value")
        return value

    def unnorm_log_density(self, x) -> np.ndarray:
        X, single = as_batch(x, self.d)
        return _unbatch(self._check(self._log_density(X)), single)

    def score(self, x) -> np.ndarray:
        X, single = as_batch(x, self.d)
        return _unbatch(self._score(X), single)

    def score_jacobian(self, x) -> np.ndarray:
        X, single = as_batch(x, self.d)
        return _unbatch(self._score_jacobian(X), single)

    def laplacian(self, x) -> np.ndarray:
        """Trace of the score Jacobian."""
        X, single = as_batch(x, self.d)
        return _unbatch(np.trace(self._score_jacobian(X), axis1=1, axis2=2), single)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "mu": self.mu.tolist(),
                "sigma": self.sigma.ravel().tolist()}

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        a, b = self.to_dict(), other.to_dict()
        return a == b

    __hash__ = None


class GaussianModel(_SpdBase):
    """Multivariate normal. Its log-density is fully normalized."""

    kind = "gaussian"
    normalized = True

    def _log_density(self, X):
        diff = X - self.mu
        quad = np.einsum("ni,ij,nj->n", diff, self.sigma_inv, diff)
        return -0.5 * quad - 0.5 * (self.d * LOG_2PI + self.log_det)

    def _score(self, X):
        return -(X - self.mu) @ self.sigma_inv

    def _score_jacobian(self, X):
        return np.broadcast_to(-self.sigma_inv, (X.shape[0], self.d, self.d)).copy()


class GbRbmModel(_SpdBase):
    """Gauss-Bernoulli RBM with a full visible covariance, via its free energy

    ``F(x) = 1/2 (x - mu)^T S^-1 (x - mu) - 1^T softplus(phi + W^T S^-1 x)``
    and unnormalized density ``exp(-F(x))``.
    """

    kind = "gbrbm"

    def __init__(self, mu, sigma, W, phi):
        super().__init__(mu, sigma)
        self.W = _frozen(W, 2, "W")
        self.phi = _frozen(phi, 1, "phi")
        h = self.phi.shape[0]
        if h < 1:
            raise ArgumentError("GB-RBM needs at least one hidden unit")
        if self.W.shape != (self.d, h):
            raise ArgumentError(f"W must be {self.d}x{h}, got {self.W.shape}")
        self.h = h
        # S^-1 W, used by both the pre-activation and the score
        self._siw = _readonly(self.sigma_inv @ self.W)

    def _preact(self, X):
        return self.phi + X @ self._siw

    def _log_density(self, X):
        diff = X - self.mu
        quad = np.einsum("ni,ij,nj->n", diff, self.sigma_inv, diff)
        return -0.5 * quad + softplus(self._preact(X)).sum(axis=1)

    def _score(self, X):
        return -(X - self.mu) @ self.sigma_inv + expit(self._preact(X)) @ self._siw.T

    def _score_jacobian(self, X):
        sig = expit(self._preact(X))
        dsig = sig * (1.0 - sig)
        H = np.einsum("ir,nr,jr->nij", self._siw, dsig, self._siw)
        return H - self.sigma_inv

    def to_dict(self) -> dict:
        out = super().to_dict()
        out.update(h=self.h, W=self.W.ravel().tolist(), phi=self.phi.tolist())
        return out


class QuarticModel(_SpdBase):
    """Quartic exponential family ``exp(-(x^2 - mu)^T S^-1 (x^2 - mu))``.

    There is deliberately no 1/2 in the exponent, which gives the factor -4 in
    the score.
    """

    kind = "quartic"

    def _resid(self, X):
        return (X * X - self.mu) @ self.sigma_inv

    def _log_density(self, X):
        r = X * X - self.mu
        return -np.einsum("ni,ij,nj->n", r, self.sigma_inv, r)

    def _score(self, X):
        return -4.0 * self._resid(X) * X

    def _score_jacobian(self, X):
        v = self._resid(X)
        H = -8.0 * self.sigma_inv[None, :, :] * X[:, :, None] * X[:, None, :]
        idx = np.arange(self.d)
        H[:, idx, idx] -= 4.0 * v
        return H


ScoreModel = GaussianModel | GbRbmModel | QuarticModel


@dataclass(frozen=True)
class ModelPair:
    """Pre-change (null) model ``p_inf`` and post-change (alternate) ``p_one``."""

    p_inf: ScoreModel
    p_one: ScoreModel
    allow_identical: bool = False

    def __post_init__(self):
        if self.p_inf.d != self.p_one.d:
            raise ArgumentError(
                f"model dimensions differ: {self.p_inf.d} vs {self.p_one.d}")
        if not self.allow_identical and self.p_inf == self.p_one:
            raise ArgumentError("pre- and post-change models are identical")

    @property
    def d(self) -> int:
        return self.p_inf.d

    @property
    def kind(self) -> str:
        return self.p_inf.kind if self.p_inf.kind == self.p_one.kind else "mixed"

    def swapped(self) -> "ModelPair":
        return ModelPair(self.p_one, self.p_inf, self.allow_identical)


def model_from_dict(data: dict) -> ScoreModel:
    kind = data.get("kind")
    try:
        d = int(data["d"])
        mu = np.asarray(data["mu"], dtype=float)
        sigma = np.asarray(data["sigma"], dtype=float).reshape(d, d)
        if kind == "gaussian":
            return GaussianModel(mu, sigma)
        if kind == "quartic":
            return QuarticModel(mu, sigma)
        if kind == "gbrbm":
            h = int(data["h"])
            W = np.asarray(data["W"], dtype=float).reshape(d, h)
            return GbRbmModel(mu, sigma, W, data["phi"])
    except (KeyError, TypeError) as exc:
        raise ArgumentError(f"malformed model description: {exc}") from exc
    raise ArgumentError(f"unknown model kind {kind!r}")


def build_appendix_models(kind: str, seed: int = 0) -> ModelPair:
    """The experimental pairs: shared covariance V*, means mu_inf*/mu_one*.

    For the GB-RBM, the pre-change weights and biases are standard normal and
    the post-change ones add N(0, 0.1^2) perturbations, drawn in the order
    W_inf, phi_inf, W_plus, phi_plus from ``default_rng(seed)``.
    """
    if kind == "gaussian":
        return ModelPair(GaussianModel(MU_INF_STAR, V_STAR),
                         GaussianModel(MU_ONE_STAR, V_STAR))
    if kind == "quartic":
        return ModelPair(QuarticModel(MU_INF_STAR, V_STAR),
                         QuarticModel(MU_ONE_STAR, V_STAR))
    if kind == "gbrbm":
        rng = np.random.default_rng(seed)
        d, h = V_STAR.shape[0], RBM_HIDDEN
        W_inf = rng.standard_normal((d, h))
        phi_inf = rng.standard_normal(h)
        W_plus = RBM_PERTURBATION_STD * rng.standard_normal((d, h))
        phi_plus = RBM_PERTURBATION_STD * rng.standard_normal(h)
        return ModelPair(GbRbmModel(MU_INF_STAR, V_STAR, W_inf, phi_inf),
                         GbRbmModel(MU_ONE_STAR, V_STAR, W_inf + W_plus, phi_inf + phi_plus))
    raise ArgumentError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
