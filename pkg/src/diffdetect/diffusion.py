"""Diffusion matrix functions m(x): square matrix-valued maps of the input.

Two kinds are provided. :class:`ConstantDiffusion` holds a fixed matrix (the
identity recovers the plain score-based statistics). :class:`MlpDiffusion` is
a one-hidden-layer sigmoid network whose output is reshaped row-major into a
``d x d`` matrix and multiplied by ``output_scale``.

Both expose ``eval`` (shape ``(n, d, d)``) and ``input_jacobian`` with entry
``[n, i, j, k] = d m_ij / d x_k``. The network additionally supports
``backprop``, which pulls gradients with respect to ``m`` and its Jacobian
back onto the flat parameter vector.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logsumexp

from .errors import ArgumentError, CalibrationError
from .models import ModelPair, as_batch


class ConstantDiffusion:
    """m(x) = M for every x."""

    trainable = False

    def __init__(self, M):
        M = np.array(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ArgumentError(f"M must be square, got shape {M.shape}")
        if not np.all(np.isfinite(M)):
            raise ArgumentError("M has non-finite entries")
        M.setflags(write=False)
        self.M = M
        self.d = M.shape[0]

    @classmethod
    def identity(cls, d: int) -> "ConstantDiffusion":
        return cls(np.eye(d))

    def eval(self, x) -> np.ndarray:
        X, single = as_batch(x, self.d)
        if single:
            return self.M.copy()
        return np.broadcast_to(self.M, (X.shape[0], self.d, self.d)).copy()

    def input_jacobian(self, x) -> np.ndarray:
        X, single = as_batch(x, self.d)
        shape = (self.d,) * 3 if single else (X.shape[0],) + (self.d,) * 3
        return np.zeros(shape)

    def scaled(self, k: float) -> "ConstantDiffusion":
        return ConstantDiffusion(k * self.M)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.M, np.eye(self.d)))

    def to_dict(self) -> dict:
        return {"kind": "constant", "d": self.d, "M": self.M.ravel().tolist()}


def gaussian_optimal(V) -> ConstantDiffusion:
    """Symmetric square root of ``V``; makes the diffusion statistic equal the
    log-likelihood ratio for two Gaussians sharing covariance ``V``."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise ArgumentError("V must be a square matrix")
    if np.max(np.abs(V - V.T), initial=0.0) > 1e-12 * max(1.0, np.abs(V).max()):
        raise ArgumentError("V is not symmetric")
    w, Q = np.linalg.eigh(0.5 * (V + V.T))
    if w.min() <= 0.0:
        raise ArgumentError("V is not positive definite")
    root = (Q * np.sqrt(w)) @ Q.T
    return ConstantDiffusion(0.5 * (root + root.T))


class MlpDiffusion:
    """One-hidden-layer network ``x -> scale * reshape(W2 sigmoid(W1 x + b1) + b2)``."""

    trainable = True
    PARAM_NAMES = ("W1", "b1", "W2", "b2")

    def __init__(self, d: int, hidden: int = 36, output_scale: float = 0.1,
                 params: dict | None = None, seed: int | None = 0):
        if d < 1 or hidden < 1:
            raise ArgumentError("d and hidden must be positive")
        self.d = int(d)
        self.hidden = int(hidden)
        self.output_scale = float(output_scale)
        D = self.d * self.d
        self._shapes = {"W1": (hidden, d), "b1": (hidden,), "W2": (D, hidden), "b2": (D,)}
        if params is None:
            rng = np.random.default_rng(seed)
            b_in, b_out = 1.0 / np.sqrt(d), 1.0 / np.sqrt(hidden)
            params = {
                "W1": rng.uniform(-b_in, b_in, (hidden, d)),
                "b1": rng.uniform(-b_in, b_in, hidden),
                "W2": rng.uniform(-b_out, b_out, (D, hidden)),
                "b2": rng.uniform(-b_out, b_out, D),
            }
        self.params = {}
        for name in self.PARAM_NAMES:
            value = np.array(params[name], dtype=float).reshape(self._shapes[name])
            if not np.all(np.isfinite(value)):
                raise ArgumentError(f"parameter {name} has non-finite entries")
            self.params[name] = value

    # -- parameter vector plumbing

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self._shapes.values())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.PARAM_NAMES])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ArgumentError(f"expected {self.n_params} parameters, got {flat.shape}")
        pos = 0
        for name in self.PARAM_NAMES:
            size = int(np.prod(self._shapes[name]))
            self.params[name] = flat[pos:pos + size].reshape(self._shapes[name]).copy()
            pos += size

    def param_names(self) -> list[str]:
        """Human-readable label for every entry of the flat parameter vector."""
        out = []
        for name in self.PARAM_NAMES:
            for idx in np.ndindex(self._shapes[name]):
                out.append(f"{name}[{','.join(map(str, idx))}]")
        return out

    def copy(self) -> "MlpDiffusion":
        return MlpDiffusion(self.d, self.hidden, self.output_scale,
                            {k: v.copy() for k, v in self.params.items()})

    def scaled(self, k: float) -> "MlpDiffusion":
        out = self.copy()
        out.output_scale *= k
        return out

    # -- evaluation

    def _hidden(self, X):
        sig = expit(X @ self.params["W1"].T + self.params["b1"])
        return sig, sig * (1.0 - sig)

    def eval(self, x) -> np.ndarray:
        X, single = as_batch(x, self.d)
        sig, _ = self._hidden(X)
        out = sig @ self.params["W2"].T + self.params["b2"]
        m = self.output_scale * out.reshape(-1, self.d, self.d)
        return m[0] if single else m

    def input_jacobian(self, x) -> np.ndarray:
        X, single = as_batch(x, self.d)
        _, dsig = self._hidden(X)
        # J[n, a, k] = scale * sum_r W2[a, r] dsig[n, r] W1[r, k]
        J = self.output_scale * (self.params["W2"] @ (dsig[:, :, None] * self.params["W1"]))
        J = J.reshape(-1, self.d, self.d, self.d)
        return J[0] if single else J

    def backprop(self, x, grad_m, grad_jac=None) -> np.ndarray:
        """Chain rule from per-sample ``dL/dm`` (n, d, d) and ``dL/dJ``
        (n, d, d, d) to the flat parameter gradient, summed over the batch."""
        X, _ = as_batch(x, self.d)
        n, d, D = X.shape[0], self.d, self.d * self.d
        W1, W2 = self.params["W1"], self.params["W2"]
        s = self.output_scale
        sig, dsig = self._hidden(X)
        Gm = np.asarray(grad_m, dtype=float).reshape(n, D)

        g_b2 = s * Gm.sum(axis=0)
        g_W2 = s * Gm.T @ sig
        g_h = s * Gm @ W2
        g_A = g_h * dsig
        g_W1 = np.zeros_like(W1)
        if grad_jac is not None:
            GJ = np.asarray(grad_jac, dtype=float).reshape(n, D, d)
            # J[n, a, k] = s * sum_r W2[a, r] dsig[n, r] W1[r, k]
            T = GJ @ W1.T
            B = dsig[:, None, :] * W1.T[None, :, :]
            g_W2 += s * (GJ.transpose(1, 0, 2).reshape(D, n * d) @ B.reshape(n * d, -1))
            C = (dsig.T @ GJ.reshape(n, D * d)).reshape(-1, D, d)
            g_W1 += s * np.einsum("ar,rak->rk", W2, C)
            q = s * np.einsum("ar,nar->nr", W2, T)
            g_A += q * dsig * (1.0 - 2.0 * sig)
        g_W1 += g_A.T @ X
        g_b1 = g_A.sum(axis=0)
        return np.concatenate([g_W1.ravel(), g_b1, g_W2.ravel(), g_b2])

    def to_dict(self) -> dict:
        out = {"kind": "mlp", "d": self.d, "hidden": self.hidden,
               "output_scale": self.output_scale}
        for name in self.PARAM_NAMES:
            out[name] = self.params[name].ravel().tolist()
        return out


DiffusionFunction = ConstantDiffusion | MlpDiffusion


def diffusion_from_dict(data: dict) -> DiffusionFunction:
    kind = data.get("kind")
    try:
        d = int(data["d"])
        if kind == "constant":
            return ConstantDiffusion(np.asarray(data["M"], dtype=float).reshape(d, d))
        if kind == "mlp":
            return MlpDiffusion(d, int(data["hidden"]), float(data["output_scale"]),
                                {k: data[k] for k in MlpDiffusion.PARAM_NAMES})
    except (KeyError, TypeError, ValueError) as exc:
        raise ArgumentError(f"malformed diffusion description: {exc}") from exc
    raise ArgumentError(f"unknown diffusion kind {kind!r}")


def exponential_root(z, exact: bool = False, max_expansions: int = 200) -> float:
    """Positive ``u`` with ``mean(exp(u * z)) == 1``.

    ``u -> mean(exp(u z))`` is convex with value 1 at 0, so a negative slope at
    the origin gives exactly one positive root. When ``mean(exp(z)) <= 1``
    already holds, 1.0 is returned unless ``exact`` asks for the root itself,
    in which case the bracket is expanded upward.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size == 0:
        raise ArgumentError("need at least one value to calibrate against")
    log_n = np.log(z.size)

    def log_g(u):
        return logsumexp(u * z) - log_n

    if z.mean() >= 0.0:
        raise CalibrationError(
            "empirical mean of the statistic is not negative; no positive rescaling "
            "brings the exponential moment to one")
    at_one = log_g(1.0)
    if at_one == 0.0:
        return 1.0
    if at_one < 0.0:
        if not exact:
            return 1.0
        if z.max() <= 0.0:
            raise CalibrationError(
                "statistic is never positive; the exponential moment stays below one")
        lo, hi = 1.0, 2.0
        for _ in range(max_expansions):
            if log_g(hi) > 0.0:
                break
            lo, hi = hi, 2.0 * hi
        else:
            raise CalibrationError("could not bracket the calibration root")
    else:
        lo, hi = 0.5, 1.0
        for _ in range(max_expansions):
            if log_g(lo) < 0.0:
                break
            lo, hi = 0.5 * lo, lo
        else:
            raise CalibrationError("could not bracket the calibration root")
    return float(brentq(log_g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                        maxiter=500))


def calibrate_scale(m: DiffusionFunction, samples_inf, pair: ModelPair,
                    exact: bool = False) -> float:
    """Factor ``k`` such that the empirical ``E_inf[exp Z_{km}]`` is one (or at
    most one, when ``exact`` is off and the constraint already holds)."""
    from .statistics import diffusion_z

    return float(np.sqrt(exponential_root(diffusion_z(pair, m, samples_inf), exact)))


def calibrate_scale_ht(m: DiffusionFunction, samples_one, pair: ModelPair,
                       exact: bool = False) -> float:
    """Hypothesis-testing analogue: ``E_one[exp(-Z_{km})]`` brought to one."""
    from .statistics import diffusion_z

    return float(np.sqrt(exponential_root(-diffusion_z(pair, m, samples_one), exact)))
