"""Sampling from the model classes and assembling change-point streams.

Gaussians are sampled directly. The unnormalized models use random-walk
Metropolis-Hastings, run as a block of independent chains advanced together;
each chain is burned in and then thinned.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError
from .models import GaussianModel, ModelPair

log = logging.getLogger(__name__)

# Proposal scales giving roughly 30% acceptance on the 8-dimensional
# experimental models (measured with tune_step_size).
DEFAULT_STEP_SIZE = {"gaussian": 1.0, "gbrbm": 1.2, "quartic": 0.48}
ACCEPTANCE_BAND = (0.05, 0.95)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class MhConfig:
    step_size: float = 0.48
    burn_in: int = 5000
    thinning: int = 10
    seed: int = 0
    n_chains: int = 1000

    def __post_init__(self):
        if not self.step_size > 0:
            raise ArgumentError("step_size must be positive")
        if self.thinning < 1:
            raise ArgumentError("thinning must be at least 1")
        if self.burn_in < 0 or self.n_chains < 1:
            raise ArgumentError("burn_in must be >= 0 and n_chains >= 1")

    @classmethod
    def for_model(cls, kind: str, **overrides) -> "MhConfig":
        return cls(step_size=DEFAULT_STEP_SIZE.get(kind, 0.5), **overrides)


@dataclass
class MhResult:
    samples: np.ndarray
    acceptance_rate: float
    warnings: list[str] = field(default_factory=list)


def sample_gaussian(model: GaussianModel, n: int, seed=None) -> np.ndarray:
    if n < 1:
        raise ArgumentError("n must be at least 1")
    z = _rng(seed).standard_normal((n, model.d))
    return model.mu + z @ model.chol.T


def sample_mh(model, cfg: MhConfig, n: int, seed=None) -> MhResult:
    """Random-walk Metropolis-Hastings with Gaussian proposals.

    ``seed`` overrides ``cfg.seed`` when given (a Generator is also accepted).
    Samples are ordered kept-step major, chain minor.
    """
    if n < 1:
        raise ArgumentError("n must be at least 1")
    rng = _rng(cfg.seed if seed is None else seed)
    n_chains = min(cfg.n_chains, n)
    kept = math.ceil(n / n_chains)
    d = model.d

    x = rng.standard_normal((n_chains, d))
    logp = model.unnorm_log_density(x)
    out = np.empty((kept, n_chains, d))
    accepted = 0
    total_steps = cfg.burn_in + kept * cfg.thinning
    for step in range(total_steps):
        prop = x + cfg.step_size * rng.standard_normal((n_chains, d))
        logp_prop = model.unnorm_log_density(prop)
        accept = np.log(rng.random(n_chains)) < logp_prop - logp
        x[accept] = prop[accept]
        logp[accept] = logp_prop[accept]
        after = step - cfg.burn_in
        if after >= 0:
            accepted += int(accept.sum())
            if (after + 1) % cfg.thinning == 0:
                out[after // cfg.thinning] = x

    rate = accepted / (kept * cfg.thinning * n_chains)
    result = MhResult(out.reshape(-1, d)[:n].copy(), rate)
    lo, hi = ACCEPTANCE_BAND
    if not lo <= rate <= hi:
        msg = f"MH acceptance rate {rate:.3f} outside [{lo}, {hi}]"
        log.warning(msg)
        result.warnings.append(msg)
    return result


def tune_step_size(model, target: float = 0.3, n_chains: int = 200, steps: int = 2000,
                   seed: int = 0) -> float:
    """Offline helper: bisect the proposal scale (in log space) to hit ``target``."""
    lo, hi = 1e-3, 10.0
    for _ in range(25):
        mid = math.sqrt(lo * hi)
        cfg = MhConfig(step_size=mid, burn_in=steps // 2, thinning=1, seed=seed,
                       n_chains=n_chains)
        rate = sample_mh(model, cfg, n_chains * (steps // 2)).acceptance_rate
        if rate > target:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


class ModelSampler:
    """Draws batches from one model, directly or through MH as appropriate."""

    def __init__(self, model, mh: MhConfig | None = None):
        self.model = model
        self.mh = mh if mh is not None else MhConfig.for_model(model.kind)
        self.acceptance_rates: list[float] = []

    @property
    def direct(self) -> bool:
        return isinstance(self.model, GaussianModel)

    def draw(self, n: int, seed) -> np.ndarray:
        if self.direct:
            return sample_gaussian(self.model, n, seed)
        res = sample_mh(self.model, self.mh, n, seed)
        self.acceptance_rates.append(res.acceptance_rate)
        return res.samples


class PairSampler:
    """Samplers for both models of a pair."""

    def __init__(self, pair: ModelPair, mh_inf: MhConfig | None = None,
                 mh_one: MhConfig | None = None):
        self.pair = pair
        self.inf = ModelSampler(pair.p_inf, mh_inf)
        self.one = ModelSampler(pair.p_one, mh_one)

    def draw_inf(self, n: int, seed) -> np.ndarray:
        return self.inf.draw(n, seed)

    def draw_one(self, n: int, seed) -> np.ndarray:
        return self.one.draw(n, seed)


@dataclass(frozen=True)
class StreamConfig:
    nu: float = math.inf
    max_len: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.max_len < 1:
            raise ArgumentError("max_len must be at least 1")
        if not (self.nu == math.inf or (1 <= self.nu <= self.max_len
                                         and float(self.nu).is_integer())):
            raise ArgumentError("nu must be an integer in [1, max_len] or infinity")


def make_stream(pair: ModelPair, cfg: StreamConfig, sampler: PairSampler | None = None
                ) -> np.ndarray:
    """Stream of length ``max_len``: indices (1-based) before ``nu`` come from
    P_inf, the rest from P_one."""
    sampler = sampler or PairSampler(pair)
    seq = np.random.SeedSequence(cfg.seed)
    s_inf, s_one = seq.spawn(2)
    n_pre = cfg.max_len if cfg.nu == math.inf else int(cfg.nu) - 1
    parts = []
    if n_pre > 0:
        parts.append(sampler.draw_inf(n_pre, np.random.default_rng(s_inf)))
    if n_pre < cfg.max_len:
        parts.append(sampler.draw_one(cfg.max_len - n_pre, np.random.default_rng(s_one)))
    return np.concatenate(parts, axis=0)
