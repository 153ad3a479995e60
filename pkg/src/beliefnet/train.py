"""Weighted variational objective, schedules, momentum SGD and the training loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import tensor as ad
from .autodiff.nn import gaussian_kl
from .autodiff.tensor import Tensor
from .data import StepData
from .model import ModelParams, rollout
from .model.rollout import BeliefSequence

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    observed: int = 6
    horizon: int = 4
    beta_max: float = 1.0
    anneal_frac: float = 0.2
    gamma: float = 0.8
    teacher_decay_frac: float = 0.5
    lr: float = 0.02
    momentum: float = 0.9
    warmup_steps: int = 200
    total_steps: int = 5000
    batch_size: int = 8
    seed: int = 0
    clip_norm: float = 5.0
    literal_lambda: bool = False  # use max(t/T, 1) instead of the discounted weights
    kl_forecast: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        for name in ("anneal_frac", "teacher_decay_frac"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if self.observed < 1 or self.horizon < 1:
            raise ValueError("observed and horizon must both be >= 1")


# ---------------------------------------------------------------- schedules

def lambda_schedule(t: int, observed: int, horizon: int, gamma: float) -> float:
    """Loss weight of step ``t`` (1-based).

    Observed steps weigh 1. Future steps get gamma**(t - T), rescaled so the
    future weights sum to T, the same total as the observed ones.
    """
    if t <= observed:
        return 1.0
    norm = sum(gamma ** j for j in range(1, horizon + 1))
    return gamma ** (t - observed) * observed / norm


def lambda_weights(cfg: TrainConfig) -> np.ndarray:
    steps = range(1, cfg.observed + cfg.horizon + 1)
    if cfg.literal_lambda:
        return np.array([max(t / cfg.observed, 1.0) for t in steps])
    return np.array([lambda_schedule(t, cfg.observed, cfg.horizon, cfg.gamma) for t in steps])


def beta_schedule(step: int, cfg: TrainConfig) -> float:
    window = cfg.anneal_frac * cfg.total_steps
    return cfg.beta_max * min(step / window, 1.0)


def scheduled_sampling_prob(step: int, cfg: TrainConfig) -> float:
    window = cfg.teacher_decay_frac * cfg.total_steps
    return max(1.0 - step / window, 0.0)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    span = max(cfg.total_steps - cfg.warmup_steps, 1)
    progress = min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------- objective

@dataclass
class LossParts:
    total: Tensor
    recon: float
    kl: float


def elbo_loss(beliefs: BeliefSequence, targets: np.ndarray, lambdas, beta: float) -> LossParts:
    """Negative weighted bound, averaged over the batch.

    total = sum_t lambda_t sum_k CE_t^k + beta * sum_t sum_k KL_t^k, with KL only
    where a posterior was computed.
    """
    targets = np.asarray(targets)
    if targets.shape[1] != beliefs.steps or len(lambdas) != beliefs.steps:
        raise ValueError(f"targets cover {targets.shape[1]} steps, lambdas {len(lambdas)}, "
                         f"beliefs {beliefs.steps}")
    b, _, k = targets.shape
    bi = np.arange(b)[:, None]
    ki = np.arange(k)[None, :]
    recon_terms = []
    for t, lp in enumerate(beliefs.log_probs):
        picked = lp[bi, ki, targets[:, t]]                       # (B, K)
        recon_terms.append(ad.mul(ad.sum_(picked), -float(lambdas[t])))
    recon = recon_terms[0]
    for term in recon_terms[1:]:
        recon = ad.add(recon, term)
    recon = ad.mul(recon, 1.0 / b)

    kl = None
    for q, p in zip(beliefs.posteriors, beliefs.priors):
        if q is None:
            continue
        term = ad.sum_(gaussian_kl(q, p))
        kl = term if kl is None else ad.add(kl, term)
    if kl is None:
        return LossParts(recon, float(recon.data), 0.0)
    kl = ad.mul(kl, 1.0 / b)
    total = ad.add(recon, ad.mul(kl, beta))
    return LossParts(total, float(recon.data), float(kl.data))


# ---------------------------------------------------------------- optimizer

class Momentum:
    """v <- mu * v + g ; p <- p - lr * v, over a fixed name -> Tensor map."""

    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = {n: np.zeros_like(t.data) for n, t in params.items()}

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            if lr != 0.0:
                p.data -= lr * v


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    sq = sum(float((p.grad ** 2).sum()) for p in params.values() if p.grad is not None)
    norm = math.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class StepMetrics:
    step: int
    loss: float
    recon: float
    kl: float
    beta: float
    lr: float
    grad_norm: float

    def row(self) -> list:
        return [self.step, self.loss, self.recon, self.kl, self.beta, self.lr, self.grad_norm]


METRIC_FIELDS = ["step", "loss", "recon", "kl", "beta", "lr", "grad_norm"]


def train_step(params: ModelParams, grids: np.ndarray, targets: np.ndarray, opt: Momentum, step: int,
               cfg: TrainConfig, rng: np.random.Generator) -> StepMetrics:
    beta = beta_schedule(step, cfg)
    lr = lr_schedule(step, cfg)
    named = opt.params
    for t in named.values():
        t.grad = None
    beliefs = rollout(params, grids, targets, observed=cfg.observed, horizon=cfg.horizon, mode="train",
                      rng=rng, teacher_prob=scheduled_sampling_prob(step, cfg), kl_forecast=cfg.kl_forecast)
    parts = elbo_loss(beliefs, targets, lambda_weights(cfg), beta)
    for name, value in (("reconstruction", parts.recon), ("kl", parts.kl)):
        if not math.isfinite(value):
            raise NonFiniteLoss(f"step {step}: non-finite {name} term ({value})")
    ad.backward(parts.total)
    norm = clip_gradients(named, cfg.clip_norm)
    if not math.isfinite(norm):
        raise NonFiniteLoss(f"step {step}: non-finite gradient norm")
    opt.step(lr)
    return StepMetrics(step, float(parts.total.data), parts.recon, parts.kl, beta, lr, norm)


def pretrain_encoder(params: ModelParams, data: StepData, steps: int, cfg: TrainConfig,
                     rng: np.random.Generator) -> list[float]:
    """Fit backbone, agent heads and visible decoder on visible agents only."""
    names = [n for n in params.named() if n.startswith(("conv.", "head.", "dv."))]
    named = {n: params.named()[n] for n in names}
    opt = Momentum(named, cfg.momentum)
    from .model.layers import encode_frames, visible_decode

    losses = []
    for step in range(steps):
        idx = rng.integers(len(data), size=cfg.batch_size)
        t = rng.integers(data.observed, size=cfg.batch_size)
        grids = data.grids[idx, t].astype(np.float64)
        cells = data.cells[idx, t]
        vis = data.visible[idx, t].astype(np.float64)
        for p in named.values():
            p.grad = None
        lp = ad.log_softmax(visible_decode(params, encode_frames(params, grids)))
        picked = lp[np.arange(len(idx))[:, None], np.arange(data.k)[None, :], cells]
        loss = ad.mul(ad.sum_(ad.mul(picked, vis)), -1.0 / max(vis.sum(), 1.0))
        ad.backward(loss)
        clip_gradients(named, cfg.clip_norm)
        opt.step(cfg.lr * min(1.0, (step + 1) / max(cfg.warmup_steps, 1)))
        losses.append(float(loss.data))
    return losses


class Trainer:
    """Owns parameters, optimizer state and the batch rng for one run."""

    def __init__(self, params: ModelParams, data: StepData, cfg: TrainConfig):
        if data.k != params.cfg.k:
            raise ValueError(f"dataset has K={data.k}, model expects K={params.cfg.k}")
        self.params = params
        self.data = data
        self.cfg = cfg
        self.step = 0
        self.rng = np.random.default_rng(cfg.seed)
        used = set(params.used())
        self.opt = Momentum({n: t for n, t in params.named().items() if n in used}, cfg.momentum)
        self.history: list[StepMetrics] = []

    def batch(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.rng.integers(len(self.data), size=self.cfg.batch_size)
        return self.data.grids[idx].astype(np.float64), self.data.cells[idx]

    def run(self, steps: int | None = None, metrics_path=None, log_every: int = 0) -> list[StepMetrics]:
        steps = self.cfg.total_steps - self.step if steps is None else steps
        writer = fh = None
        if metrics_path is not None:
            new = not Path(metrics_path).exists()
            fh = open(metrics_path, "a", newline="", encoding="utf-8")
            writer = csv.writer(fh, lineterminator="\n")
            if new:
                writer.writerow(METRIC_FIELDS)
        start = time.perf_counter()
        try:
            for _ in range(steps):
                grids, cells = self.batch()
                m = train_step(self.params, grids, cells, self.opt, self.step, self.cfg, self.rng)
                self.history.append(m)
                if writer is not None:
                    writer.writerow([repr(v) if isinstance(v, float) else v for v in m.row()])
                if log_every and self.step % log_every == 0:
                    log.info("step %d loss %.3f recon %.3f kl %.3f lr %.4f (%.1fs)", m.step, m.loss,
                             m.recon, m.kl, m.lr, time.perf_counter() - start)
                self.step += 1
        finally:
            if fh is not None:
                fh.close()
        return self.history


def moving_average(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for i in range(len(v)):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out
