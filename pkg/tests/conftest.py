import numpy as np
import pytest
from hypothesis import settings

from diffdetect.models import GaussianModel, GbRbmModel, ModelPair, QuarticModel

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")


def central_diff(f, x, h=1e-5):
    """Central-difference derivative of ``f`` (array-valued) along every coordinate of x.

    Output shape is ``f(x).shape + x.shape``. The step is scaled by max(1, |x_i|).
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    out = np.empty(f0.shape + x.shape)
    for idx in np.ndindex(x.shape):
        step = h * max(1.0, abs(x[idx]))
        xp, xm = x.copy(), x.copy()
        xp[idx] += step
        xm[idx] -= step
        out[(...,) + idx] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * step)
    return out


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(floor, np.max(np.abs(b))))


def random_spd(rng, d, cond=5.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    w = np.linspace(1.0, cond, d)
    S = (Q * w) @ Q.T
    return 0.5 * (S + S.T)


def small_models(d=3, seed=0):
    rng = np.random.default_rng(seed)
    S = random_spd(rng, d)
    mu = 0.3 * rng.standard_normal(d)
    return [
        GaussianModel(mu, S),
        GbRbmModel(mu, S, 0.5 * rng.standard_normal((d, 2)), rng.standard_normal(2)),
        QuarticModel(np.abs(mu) + 0.5, S),
    ]


def small_pairs(d=3, seed=0):
    a, b = small_models(d, seed), small_models(d, seed + 1)
    return [ModelPair(p, q) for p, q in zip(a, b)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def normal_pair():
    """P_inf = N(0, 1/4), P_one = N(0, 1) in one dimension."""
    return ModelPair(GaussianModel([0.0], [[0.25]]), GaussianModel([0.0], [[1.0]]))
