"""Filtering / forecasting rollout over T observed and dT future steps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import tensor as ad
from ..autodiff.nn import GaussianStats, reparameterize
from ..autodiff.tensor import Tensor
from .layers import (
    encode_frames,
    encode_posterior,
    expand,
    fuse_decode,
    graph_message_pass,
    prior_step,
    recurrence,
    visible_decode,
    visual_forecast,
)
from .params import ModelParams

MODES = ("train", "filter", "sample")


class RolloutError(ValueError):
    pass


@dataclass
class BeliefSequence:
    """Per-step outputs; arrays are (B, K, ...) unless noted.

    ``log_probs`` stay on the tape for the loss. ``priors``/``posteriors`` hold
    GaussianStats per step (posterior None where no target was encoded);
    shared-state variants have (B, Z) stats.
    """

    log_probs: list[Tensor] = field(default_factory=list)
    heatmaps: list[np.ndarray] = field(default_factory=list)
    priors: list[GaussianStats | None] = field(default_factory=list)
    posteriors: list[GaussianStats | None] = field(default_factory=list)
    alpha_v: list[np.ndarray] = field(default_factory=list)
    alpha_h: list[np.ndarray] = field(default_factory=list)
    samples: list[np.ndarray] = field(default_factory=list)
    z: list[np.ndarray] = field(default_factory=list)
    observed: int = 0

    @property
    def steps(self) -> int:
        return len(self.log_probs)

    def heat_array(self) -> np.ndarray:
        """(B, S, K, G) stacked heatmaps."""
        return np.stack(self.heatmaps, axis=1)


def sample_cells(heat: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Categorical draw per row of ``heat`` (..., G) by inverse CDF."""
    cdf = np.cumsum(heat, axis=-1)
    u = rng.random(heat.shape[:-1])[..., None] * cdf[..., -1:]
    return np.minimum((cdf < u).sum(axis=-1), heat.shape[-1] - 1)


def rollout(p: ModelParams, grids: np.ndarray, targets: np.ndarray | None = None, *,
            observed: int = 6, horizon: int = 4, mode: str = "filter",
            rng: np.random.Generator | None = None, teacher_prob: float = 1.0,
            kl_forecast: bool = False) -> BeliefSequence:
    """Run the model over ``observed`` frames then ``horizon`` blank steps.

    grids: (B, T, H, W, 3) step-averaged frames for the observed steps.
    targets: (B, T + dT, K) cells; required for ``mode="train"``.

    Modes: ``train`` draws z from the posterior on observed steps and
    teacher-forces each example with probability ``teacher_prob``;
    ``filter`` uses the prior mean for z and the heatmap argmax for the state;
    ``sample`` draws both from the model.
    """
    cfg = p.cfg
    if mode not in MODES:
        raise RolloutError(f"unknown mode {mode!r}")
    grids = np.asarray(grids, dtype=np.float64)
    if grids.ndim != 5 or grids.shape[1] != observed:
        raise RolloutError(f"expected grids (B, {observed}, H, W, 3), got {grids.shape}")
    b, k = grids.shape[0], cfg.k
    steps = observed + horizon
    if mode == "train":
        if targets is None:
            raise RolloutError("train mode needs targets")
    if targets is not None:
        targets = np.asarray(targets)
        if targets.shape != (b, steps, k):
            raise RolloutError(f"targets must be (B, {steps}, K={k}), got {targets.shape}")
    rng = rng if rng is not None else np.random.default_rng(0)

    feats = encode_frames(p, grids.reshape((b * observed,) + grids.shape[2:]))
    feats = ad.reshape(feats, (b, observed, k, -1))
    g = feats.shape[-1]
    blank = expand(encode_frames(p, np.zeros((1,) + grids.shape[2:])), (b, k, g))

    out = BeliefSequence(observed=observed)
    if not cfg.recurrent:
        last = feats[:, observed - 1]
        for t in range(steps):
            logits = visible_decode(p, feats[:, t]) if t < observed else visual_forecast(p, last, t - observed)
            heat = _record(out, logits, None, None, None, None, None).data
            out.samples.append(sample_cells(heat, rng) if mode == "sample" else np.argmax(heat, axis=-1))
        return out

    hd, zd = cfg.hidden, cfg.latent
    state_shape = (b, hd) if cfg.shared else (b, k, hd)
    z_shape = (b, zd) if cfg.shared else (b, k, zd)
    h = Tensor(np.zeros(state_shape))
    prev_heat = Tensor(np.full((b, k, g), 1.0 / g))
    agent_id = np.broadcast_to(np.eye(k), (b, k, k)) if cfg.shared else None

    for t in range(steps):
        v = feats[:, t] if t < observed else blank
        if cfg.message is not None:
            h = graph_message_pass(p, h, cfg.message)

        prior = post = None
        if cfg.variational:
            prior = prior_step(p, h)
            stats = ad.concat([prior.mu, prior.sigma], axis=-1)
            if mode == "train" and (t < observed or kl_forecast):
                post = encode_posterior(p, h, targets[:, t])
                z = reparameterize(post, rng)
            elif mode == "filter":
                z = prior.mu
            else:
                z = reparameterize(prior, rng)
        else:
            stats = Tensor(np.zeros(z_shape[:-1] + (2 * zd,)))
            z = Tensor(np.zeros(z_shape))

        if cfg.shared:
            ctx = ad.concat([expand(ad.reshape(h, (b, 1, hd)), (b, k, hd)), Tensor(agent_id)], axis=-1)
            stats_k = expand(ad.reshape(stats, (b, 1, 2 * zd)), (b, k, 2 * zd))
        else:
            ctx, stats_k = h, stats
        logits, a_v, a_h = fuse_decode(p, v, ctx, stats_k, prev_heat)
        heat_t = _record(out, logits, prior, post, a_v, a_h, z)

        if mode == "train":
            sampled = sample_cells(heat_t.data, rng)
            teach = rng.random(b) < teacher_prob
            cells = np.where(teach[:, None], targets[:, t], sampled)
        elif mode == "filter":
            cells = np.argmax(heat_t.data, axis=-1)
        else:
            cells = sample_cells(heat_t.data, rng)
        out.samples.append(cells)
        h = recurrence(p, cells, z, h)
        prev_heat = heat_t
    return out


def _record(out: BeliefSequence, logits, prior, post, a_v, a_h, z) -> Tensor:
    lp = ad.log_softmax(logits)
    heat = ad.softmax(logits)
    out.log_probs.append(lp)
    out.heatmaps.append(heat.data)
    out.priors.append(prior)
    out.posteriors.append(post)
    out.alpha_v.append(None if a_v is None else a_v.data[..., 0])
    out.alpha_h.append(None if a_h is None else a_h.data[..., 0])
    out.z.append(None if z is None else z.data)
    return heat
