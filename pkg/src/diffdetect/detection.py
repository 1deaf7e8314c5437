"""Batch hypothesis tests, CUSUM-type stopping rules and their Monte-Carlo harness.

Every statistic here is any callable mapping a batch ``(n, d)`` to per-sample
scores ``(n,)``; the KL, Fisher and diffusion statistics all qualify.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .models import ModelPair
from .samplers import PairSampler

PATHS_PER_CHUNK = 500
MIN_BLOCK = 64


def batch_test(stat, batch, c: float) -> int:
    """1 (reject the null) iff the summed statistic reaches ``c``."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[0] < 1:
        raise ArgumentError("batch must be a non-empty (n, d) array")
    return int(np.sum(stat(batch)) >= c)


class CusumDetector:
    """Streaming CUSUM: ``y <- max(0, y + z(x_t))``, alarm once ``y >= c``.

    Samples are fed one at a time, so the decision at time t can only depend
    on ``x_1 .. x_t``.
    """

    def __init__(self, stat, c: float):
        if not c > 0:
            raise ArgumentError("threshold must be positive")
        self.stat = stat
        self.c = float(c)
        self.y = 0.0
        self.t = 0

    def update(self, x) -> bool:
        z = float(np.asarray(self.stat(np.asarray(x, dtype=float)[None, :]))[0])
        return self.update_z(z)

    def update_z(self, z: float) -> bool:
        self.t += 1
        self.y = max(0.0, self.y + z)
        return self.y >= self.c


def cusum_from_z(z, c: float) -> tuple[int, bool]:
    """Stopping time of the CUSUM recursion on a finite score sequence.

    Returns ``(len(z), True)`` when the threshold is never reached.
    """
    if not c > 0:
        raise ArgumentError("threshold must be positive")
    y = 0.0
    for t, zt in enumerate(np.asarray(z, dtype=float), start=1):
        y = max(0.0, y + zt)
        if y >= c:
            return t, False
    return len(z), True


def cusum_run(stat, stream, c: float, max_len: int | None = None) -> tuple[int, bool]:
    stream = np.asarray(stream, dtype=float)
    if max_len is not None:
        stream = stream[:max_len]
    return cusum_from_z(stat(stream), c)


@dataclass
class StoppingRunResult:
    """Stopping times over simulated paths for one threshold."""

    threshold: float
    stop_times: np.ndarray
    censored: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.stop_times.mean())

    @property
    def std_error(self) -> float:
        n = self.stop_times.size
        return float(self.stop_times.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    @property
    def censored_frac(self) -> float:
        return float(self.censored.mean())

    @property
    def lower_bound(self) -> bool:
        """Censored paths count as ``max_len``, so the mean underestimates."""
        return bool(self.censored.any())


def _to_sampler(source) -> PairSampler:
    if isinstance(source, PairSampler):
        return source
    if isinstance(source, ModelPair):
        return PairSampler(source)
    raise ArgumentError("expected a ModelPair or PairSampler")


def _simulate_chunk(stat, draw, thresholds, n_paths, max_len, seed):
    rng = np.random.default_rng(seed)
    C = thresholds.size
    y = np.zeros(n_paths)
    stops = np.zeros((n_paths, C), dtype=np.int64)
    active = np.arange(n_paths)
    t = 0
    while active.size and t < max_len:
        block = min(max_len - t, max(MIN_BLOCK, t))
        X = draw(active.size * block, rng)
        z = np.asarray(stat(X), dtype=float).reshape(active.size, block)
        ya = y[active]
        sa = stops[active]
        for j in range(block):
            ya = np.maximum(0.0, ya + z[:, j])
            newly = (ya[:, None] >= thresholds[None, :]) & (sa == 0)
            sa[newly] = t + j + 1
        y[active] = ya
        stops[active] = sa
        t += block
        active = active[sa[:, -1] == 0]
    censored = stops == 0
    stops[censored] = max_len
    return stops, censored


def simulate_stopping(stat, draw, thresholds, n_paths: int, max_len: int, seed: int = 0,
                      threads: int = 1) -> list[StoppingRunResult]:
    """Run CUSUM on ``n_paths`` independent streams from ``draw(n, rng)``.

    All thresholds share the same paths (common random numbers), so stopping
    times are pathwise non-decreasing in the threshold. Paths are simulated in
    fixed-size chunks with their own spawned seeds; results do not depend on
    ``threads``.
    """
    if n_paths < 1:
        raise ArgumentError("n_paths must be at least 1")
    thresholds = np.atleast_1d(np.asarray(thresholds, dtype=float))
    if np.any(thresholds <= 0):
        raise ArgumentError("thresholds must be positive")
    order = np.argsort(thresholds, kind="stable")
    sorted_c = thresholds[order]
    sizes = [PATHS_PER_CHUNK] * (n_paths // PATHS_PER_CHUNK)
    if n_paths % PATHS_PER_CHUNK:
        sizes.append(n_paths % PATHS_PER_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(stat, draw, sorted_c, size, max_len, s) for size, s in zip(sizes, seeds)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _simulate_chunk(*a), jobs))
    else:
        parts = [_simulate_chunk(*a) for a in jobs]
    stops = np.concatenate([p[0] for p in parts])
    censored = np.concatenate([p[1] for p in parts])
    results = [None] * thresholds.size
    for col, idx in enumerate(order):
        results[idx] = StoppingRunResult(float(thresholds[idx]), stops[:, col].copy(),
                                         censored[:, col].copy())
    return results


def default_max_len(thresholds) -> int:
    """Censoring horizon for ARL runs: 50 e^{c_max}."""
    return int(math.ceil(50.0 * math.exp(float(np.max(thresholds)))))


def estimate_arl(stat, source, c, n_paths: int, max_len: int | None = None,
                 seed: int = 0, threads: int = 1):
    """Mean stopping time on pure pre-change streams. ``c`` may be a list."""
    sampler = _to_sampler(source)
    max_len = max_len or default_max_len(c)
    res = simulate_stopping(stat, sampler.draw_inf, c, n_paths, max_len, seed, threads)
    return res if np.ndim(c) else res[0]


def estimate_edd(stat, source, c, n_paths: int, max_len: int = 100_000,
                 seed: int = 0, threads: int = 1):
    """Mean stopping time on streams that are post-change from the first sample."""
    sampler = _to_sampler(source)
    res = simulate_stopping(stat, sampler.draw_one, c, n_paths, max_len, seed, threads)
    return res if np.ndim(c) else res[0]


# -- ROC


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    alpha: float
    beta: float
    n: int


def batch_sums(stat, draw, n: int, n_batches: int, seed) -> np.ndarray:
    if n < 1 or n_batches < 1:
        raise ArgumentError("batch size and batch count must be positive")
    X = draw(n * n_batches, np.random.default_rng(seed))
    return np.asarray(stat(X), dtype=float).reshape(n_batches, n).sum(axis=1)


def roc_from_sums(sums_inf, sums_one, thresholds=None):
    """Empirical (alpha, beta) at each threshold.

    alpha = share of null sums >= c, beta = share of alternate sums < c. The
    default thresholds are every observed sum plus +-inf.
    """
    s_inf = np.sort(np.asarray(sums_inf, dtype=float))
    s_one = np.sort(np.asarray(sums_one, dtype=float))
    if thresholds is None:
        thresholds = np.concatenate([[-np.inf], np.unique(np.concatenate([s_inf, s_one])),
                                     [np.inf]])
    thresholds = np.asarray(thresholds, dtype=float)
    alpha = 1.0 - np.searchsorted(s_inf, thresholds, side="left") / s_inf.size
    beta = np.searchsorted(s_one, thresholds, side="left") / s_one.size
    return thresholds, alpha, beta


def roc_curves(stats, source, n: int, n_batches: int, seed: int = 0, thresholds=None
               ) -> dict[str, list[RocPoint]]:
    """ROC curves for several statistics evaluated on the same batches."""
    sampler = _to_sampler(source)
    s_inf, s_one = np.random.SeedSequence(seed).spawn(2)
    X_inf = sampler.draw_inf(n * n_batches, np.random.default_rng(s_inf))
    X_one = sampler.draw_one(n * n_batches, np.random.default_rng(s_one))
    out = {}
    for stat in stats:
        sums_inf = np.asarray(stat(X_inf)).reshape(n_batches, n).sum(axis=1)
        sums_one = np.asarray(stat(X_one)).reshape(n_batches, n).sum(axis=1)
        c, a, b = roc_from_sums(sums_inf, sums_one, thresholds)
        out[stat.name] = [RocPoint(float(ci), float(ai), float(bi), n)
                          for ci, ai, bi in zip(c, a, b)]
    return out


def roc_curve(stat, source, n: int, n_batches: int, thresholds=None, seed: int = 0
              ) -> list[RocPoint]:
    return roc_curves([stat], source, n, n_batches, seed, thresholds)[stat.name]


def power_at_alpha(sums_inf, sums_one, alpha: float) -> tuple[float, float, float]:
    """Largest empirical power with empirical type-I rate at most ``alpha``.

    Returns ``(power, achieved_alpha, threshold)``.
    """
    s_inf = np.sort(np.asarray(sums_inf, dtype=float))[::-1]
    k = int(math.floor(alpha * s_inf.size + 1e-9))
    if k >= s_inf.size:
        c = -np.inf
    else:
        c = float(np.nextafter(s_inf[k], np.inf))
    achieved = float(np.mean(s_inf >= c))
    power = float(np.mean(np.asarray(sums_one) >= c))
    return power, achieved, c


# -- error exponent


@dataclass
class ExponentFit:
    slope: float
    slope_se: float
    divergence: float
    n_grid: np.ndarray
    beta: np.ndarray
    dropped: list[int]


def error_exponent_estimate(stat, source, divergence: float, n_grid, n_batches: int,
                            delta: float = 0.0, seed: int = 0) -> ExponentFit:
    """Least-squares slope of ``-log beta_n`` against ``n``.

    The threshold at batch size n is ``-n (divergence - delta)``, where
    ``divergence`` estimates D(P_inf || P_one); the null mean of the summed
    statistic is ``-n * divergence``, so the type-I rate stays bounded.
    Batch sizes where no type-II error was observed are dropped.
    """
    sampler = _to_sampler(source)
    n_grid = np.asarray(n_grid, dtype=int)
    if n_grid.size < 2:
        raise ArgumentError("the fit requires at least two batch sizes")
    if np.any(np.diff(n_grid) <= 0):
        raise ArgumentError("n_grid must be increasing")
    seeds = np.random.SeedSequence(seed).spawn(n_grid.size)
    betas, kept, dropped = [], [], []
    for n, s in zip(n_grid, seeds):
        sums = batch_sums(stat, sampler.draw_one, int(n), n_batches, s)
        beta = float(np.mean(sums < -n * (divergence - delta)))
        betas.append(beta)
        if beta > 0:
            kept.append(int(n))
        else:
            dropped.append(int(n))
    betas = np.asarray(betas)
    if len(kept) < 2:
        raise ArgumentError("fewer than two batch sizes with observed type-II errors")
    x = np.asarray(kept, dtype=float)
    yv = -np.log(betas[betas > 0])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, yv, rcond=None)
    if x.size > 2:
        resid = yv - A @ coef
        s2 = resid @ resid / (x.size - 2)
        se = math.sqrt(s2 / np.sum((x - x.mean()) ** 2))
    else:
        se = 0.0
    return ExponentFit(float(coef[0]), se, float(divergence), n_grid, betas, dropped)
