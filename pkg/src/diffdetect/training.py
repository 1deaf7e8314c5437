"""Training the network diffusion function with the penalized objectives.

Change-point detection maximizes D_m(P_one || P_inf) while pushing
``log E_inf[exp Z_m]`` to zero; hypothesis testing maximizes
D_m(P_inf || P_one) while pushing ``log E_one[exp(-Z_m)]`` to zero. The
second is the first with the roles of the two models exchanged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .diffusion import MlpDiffusion
from .errors import ArgumentError, NumericalDomainError
from .models import ModelPair, as_batch
from .statistics import diffusion_z, diffusion_z_with_grads

log = logging.getLogger(__name__)

DEFAULT_LR = {"quartic": 0.035, "gaussian": 0.04, "gbrbm": 0.01}


@dataclass
class LossResult:
    value: float
    divergence_term: float
    penalty_term: float
    constraint_value: float
    grad: np.ndarray | None = None


def _penalized_loss(m, pair: ModelPair, batch_div, batch_pen, alpha: float,
                    with_grad: bool) -> LossResult:
    """``-mean(1/2 |m^T (s_inf - s_one)|^2 on batch_div)
    + alpha * (log mean exp Z_m on batch_pen)^2``.

    With ``batch_div`` from P_one and ``batch_pen`` from P_inf this is the
    change-point loss.
    """
    Xd, _ = as_batch(batch_div, pair.d)
    Xp, _ = as_batch(batch_pen, pair.d)
    if Xd.shape[0] == 0 or Xp.shape[0] == 0:
        raise ArgumentError("both batches must be non-empty")
    ds = pair.p_one.score(Xd) - pair.p_inf.score(Xd)
    md = m.eval(Xd)
    mtds = np.einsum("njk,nj->nk", md, ds)
    div = 0.5 * float(np.mean(np.sum(mtds * mtds, axis=1)))

    if with_grad:
        z, gz_m, gz_J = diffusion_z_with_grads(pair, m, Xp)
    else:
        z = diffusion_z(pair, m, Xp)
    lme = float(logsumexp(z) - math.log(z.size))
    penalty = alpha * lme * lme
    value = -div + penalty
    result = LossResult(value, -div, penalty, math.exp(lme) if lme < 700 else math.inf)
    if not np.isfinite(value):
        term = "divergence" if not np.isfinite(div) else "penalty"
        raise NumericalDomainError(f"non-finite loss: the {term} term diverged")
    if not with_grad:
        return result

    n_d = Xd.shape[0]
    g_div = m.backprop(Xd, -np.einsum("nj,nk->njk", ds, mtds) / n_d)
    w = 2.0 * alpha * lme * softmax(z)
    g_pen = m.backprop(Xp, gz_m * w[:, None, None], gz_J * w[:, None, None, None])
    grad = g_div + g_pen
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NumericalDomainError(
            f"non-finite gradient at parameter {bad[0]} ({m.param_names()[bad[0]]})")
    result.grad = grad
    return result


def loss_cpd(m, pair: ModelPair, batch_p1, batch_pinf, alpha: float = 10.0,
             with_grad: bool = True) -> LossResult:
    """``-D_m(P_one || P_inf) + alpha * (log E_inf[exp Z_m])^2``."""
    return _penalized_loss(m, pair, batch_p1, batch_pinf, alpha,
                           with_grad and getattr(m, "trainable", False))


def loss_ht(m, pair: ModelPair, batch_pinf, batch_p1, alpha: float = 10.0,
            with_grad: bool = True) -> LossResult:
    """``-D_m(P_inf || P_one) + alpha * (log E_one[exp(-Z_m)])^2``."""
    return _penalized_loss(m, pair.swapped(), batch_pinf, batch_p1, alpha,
                           with_grad and getattr(m, "trainable", False))


class AdamW:
    """Adam with decoupled weight decay on a flat parameter vector."""

    def __init__(self, n_params: int, lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        params = params * (1.0 - self.lr * self.weight_decay)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.04
    alpha: float = 10.0
    l2: float = 1e-5
    epochs: int = 200
    batch_size: int = 512
    seed: int = 0
    objective: str = "cpd"

    def __post_init__(self):
        if not self.lr > 0:
            raise ArgumentError("lr must be positive")
        if self.alpha < 0 or self.l2 < 0:
            raise ArgumentError("alpha and l2 must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ArgumentError("epochs must be >= 0 and batch_size >= 1")
        if self.objective not in ("cpd", "ht"):
            raise ArgumentError(f"unknown objective {self.objective!r}")

    @classmethod
    def for_model(cls, kind: str, **overrides) -> "TrainConfig":
        overrides.setdefault("lr", DEFAULT_LR.get(kind, 0.01))
        return cls(**overrides)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    divergence_term: float
    penalty_term: float
    constraint_value: float


@dataclass
class TrainReport:
    config: TrainConfig
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_params: np.ndarray | None = None
    aborted: bool = False

    def rows(self) -> list[dict]:
        return [asdict(e) for e in self.epochs]


@dataclass
class TrainingData:
    """Pre-sampled training sets from both models."""

    inf: np.ndarray
    one: np.ndarray


class TrainingDiverged(NumericalDomainError):
    def __init__(self, message: str, report: TrainReport):
        super().__init__(message)
        self.report = report


def train(m: MlpDiffusion, pair: ModelPair, data: TrainingData, cfg: TrainConfig,
          on_epoch=None) -> TrainReport:
    """Minibatch AdamW on the configured objective; updates ``m`` in place.

    Each step takes one minibatch from each training set, after an independent
    shuffle of both per epoch. On a non-finite loss the parameters from the
    end of the last completed epoch are restored and :class:`TrainingDiverged`
    is raised carrying the partial report.
    """
    X_inf, _ = as_batch(data.inf, pair.d)
    X_one, _ = as_batch(data.one, pair.d)
    loss_fn = loss_cpd if cfg.objective == "cpd" else loss_ht
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(m.n_params, cfg.lr, cfg.l2)
    report = TrainReport(cfg)
    steps = max(1, min(X_inf.shape[0], X_one.shape[0]) // cfg.batch_size)
    params = m.get_flat()
    best = math.inf

    for epoch in range(cfg.epochs):
        perm_inf = rng.permutation(X_inf.shape[0])
        perm_one = rng.permutation(X_one.shape[0])
        sums = np.zeros(4)
        last_good = params.copy()
        try:
            for k in range(steps):
                sl = slice(k * cfg.batch_size, (k + 1) * cfg.batch_size)
                b_inf, b_one = X_inf[perm_inf[sl]], X_one[perm_one[sl]]
                if cfg.objective == "cpd":
                    res = loss_fn(m, pair, b_one, b_inf, cfg.alpha)
                else:
                    res = loss_fn(m, pair, b_inf, b_one, cfg.alpha)
                sums += (res.value, res.divergence_term, res.penalty_term,
                         res.constraint_value)
                params = opt.step(params, res.grad)
                if not np.all(np.isfinite(params)):
                    raise NumericalDomainError("parameters became non-finite")
                m.set_flat(params)
        except NumericalDomainError as exc:
            m.set_flat(last_good)
            report.aborted = True
            log.error("training diverged in epoch %d: %s", epoch, exc)
            raise TrainingDiverged(str(exc), report) from exc
        rec = EpochRecord(epoch, *(sums / steps))
        report.epochs.append(rec)
        if rec.loss < best:
            best = rec.loss
            report.best_epoch = epoch
            report.best_params = params.copy()
        log.info("epoch %d loss %.6g div %.6g pen %.6g constraint %.6g", epoch,
                 rec.loss, rec.divergence_term, rec.penalty_term, rec.constraint_value)
        if on_epoch is not None:
            on_epoch(rec, m, rec.epoch == report.best_epoch)
    return report
