"""Metrics, benchmark tables and sample export."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import render
from .autodiff import no_grad
from .data import StepData, worker_count
from .model import ModelParams, rollout
from .model.rollout import BeliefSequence
from .sim.episode import Episode, write_jsonl

PROB_FLOOR = 1e-12
STRATA = [("ball", "visible"), ("ball", "hidden"), ("player", "visible"), ("player", "hidden")]


def _check_unit(name, x):
    if np.any(~np.isfinite(x)) or np.any((x < 0.0) | (x > 1.0)):
        raise ValueError(f"{name} has coordinates outside [0,1]^2")


def normalized_l2(pred, gt) -> np.ndarray:
    """Euclidean distance in unit-field coordinates over the last axis."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_unit("prediction", pred)
    _check_unit("ground truth", gt)
    return np.sqrt(((pred - gt) ** 2).sum(axis=-1))


def per_step_l2(heat: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """(N, S, K, G) heatmaps and (N, S, K, 2) truth -> per-step error averaged over agents and examples."""
    err = normalized_l2(render.heatmap_to_coords(heat), coords)
    return err.mean(axis=(0, 2))


def visible_hidden_split(errors, mask, roles) -> dict[tuple[str, str], float | None]:
    """Mean error per (ball|player, visible|hidden) stratum; empty strata map to None."""
    errors = np.asarray(errors, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if errors.shape != mask.shape or errors.shape[-1] != len(roles):
        raise ValueError(f"errors {errors.shape}, mask {mask.shape} and {len(roles)} roles disagree")
    is_ball = np.array([r == "ball" for r in roles])
    out = {}
    for group, vis in STRATA:
        sel = (is_ball if group == "ball" else ~is_ball) & (mask if vis == "visible" else ~mask)
        out[(group, vis)] = float(errors[sel].mean()) if sel.any() else None
    return out


@dataclass
class LLResult:
    ratio: float
    clamped: int
    count: int


def ll_ratio(heat, gt_cells) -> LLResult:
    """Geometric-mean likelihood of the true cells over the uniform 1/G guess.

    heat: (..., K, G) or (M, ..., K, G) with a leading sample axis when
    ``gt_cells`` has one dimension fewer; samples are then averaged in
    probability space (log-mean-exp) before taking the log.
    """
    heat = np.asarray(heat, dtype=np.float64)
    gt = np.asarray(gt_cells, dtype=np.int64)
    g = heat.shape[-1]
    if heat.ndim == gt.ndim + 2:
        p = np.take_along_axis(heat, np.broadcast_to(gt, heat.shape[:-1])[..., None], axis=-1)[..., 0]
        p = p.mean(axis=0)
    elif heat.ndim == gt.ndim + 1:
        p = np.take_along_axis(heat, gt[..., None], axis=-1)[..., 0]
    else:
        raise ValueError(f"heatmaps {heat.shape} do not line up with cells {gt.shape}")
    clamped = int((p < PROB_FLOOR).sum())
    logp = np.log(np.maximum(p, PROB_FLOOR))
    return LLResult(float(np.exp(np.mean(logp + np.log(g)))), clamped, int(p.size))


def prior_baseline(train_cells, cells: int = render.NUM_CELLS) -> np.ndarray:
    """(K, G) per-agent Laplace-smoothed cell frequencies over all training steps."""
    c = np.asarray(train_cells, dtype=np.int64)
    k = c.shape[-1]
    flat = c.reshape(-1, k)
    counts = np.ones((k, cells))
    for j in range(k):
        counts[j] += np.bincount(flat[:, j], minlength=cells)
    return counts / counts.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------- benchmark

@dataclass
class EvalConfig:
    seed: int = 0
    batch: int = 25
    ll_samples: int = 1  # > 1 averages heatmaps over prior samples (log-mean-exp)
    observed: int = 6
    horizon: int = 4


@dataclass
class VariantReport:
    variant: str
    step_l2: np.ndarray
    strata: dict
    ll: LLResult
    examples: int


@dataclass
class EvalReport:
    rows: list[VariantReport] = field(default_factory=list)
    prior_ll: LLResult | None = None
    config: dict = field(default_factory=dict)

    def get(self, variant: str) -> VariantReport:
        for r in self.rows:
            if r.variant == variant:
                return r
        raise KeyError(variant)

    def records(self) -> list[tuple[str, str, str]]:
        """(variant, metric, value) rows; absent strata are written as 'absent'."""
        out = []
        for r in self.rows:
            obs = self.config.get("observed", len(r.step_l2))
            for t, v in enumerate(r.step_l2, start=1):
                tag = "obs" if t <= obs else "fcst"
                out.append((r.variant, f"l2_t{t}_{tag}", repr(float(v))))
            for (grp, vis), v in r.strata.items():
                out.append((r.variant, f"l2_{grp}_{vis}", "absent" if v is None else repr(v)))
            out.append((r.variant, "ll_ratio", repr(r.ll.ratio)))
            out.append((r.variant, "ll_clamped", str(r.ll.clamped)))
            out.append((r.variant, "examples", str(r.examples)))
        if self.prior_ll is not None:
            out.append(("prior", "ll_ratio", repr(self.prior_ll.ratio)))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "metric", "value"])
            w.writerows(self.records())

    def table(self) -> str:
        buf = io.StringIO()
        if not self.rows:
            return "(empty report)\n"
        steps = len(self.rows[0].step_l2)
        obs = self.config.get("observed", steps)
        head = ["variant"] + [f"t{t}{'' if t <= obs else '*'}" for t in range(1, steps + 1)]
        head += ["ball/vis", "ball/hid", "pl/vis", "pl/hid", "LL-ratio"]
        buf.write("  ".join(f"{h:>9}" for h in head) + "\n")
        for r in self.rows:
            cells = [r.variant] + [f"{v:.3f}" for v in r.step_l2]
            cells += ["-" if r.strata[s] is None else f"{r.strata[s]:.3f}" for s in STRATA]
            cells.append(f"{r.ll.ratio:.3f}")
            buf.write("  ".join(f"{c:>9}" for c in cells) + "\n")
        if self.prior_ll is not None:
            buf.write(f"prior baseline LL-ratio {self.prior_ll.ratio:.3f}\n")
        buf.write("(* = forecast step)\n")
        return buf.getvalue()


def _batches(n: int, size: int):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def _rollout_batches(params: ModelParams, data: StepData, mode: str, cfg: EvalConfig, salt: int):
    """Run one rollout per batch on worker threads; results come back in batch order."""
    spans = _batches(len(data), cfg.batch)

    def one(i):
        s, e = spans[i]
        rng = np.random.default_rng([cfg.seed, salt, i])
        with no_grad():
            bs = rollout(params, data.grids[s:e], observed=cfg.observed, horizon=cfg.horizon,
                         mode=mode, rng=rng)
        return bs.heat_array()

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(one, range(len(spans))))


def evaluate_variant(name: str, params: ModelParams, data: StepData, cfg: EvalConfig) -> VariantReport:
    if params.cfg.k != data.k:
        raise ValueError(f"{name}: model has K={params.cfg.k}, dataset has K={data.k}")
    heat = np.concatenate(_rollout_batches(params, data, "filter", cfg, 0), axis=0)
    step_l2 = per_step_l2(heat, data.coords)
    err = normalized_l2(render.heatmap_to_coords(heat), data.coords)
    obs = cfg.observed
    strata = visible_hidden_split(err[:, :obs], data.visible[:, :obs], data.roles)
    samples = [np.concatenate(_rollout_batches(params, data, "sample", cfg, 1 + m), axis=0)
               for m in range(cfg.ll_samples)]
    fc = np.stack(samples)[:, :, obs:]
    gt = data.cells[:, obs:]
    ll = ll_ratio(fc[0] if cfg.ll_samples == 1 else fc, gt)
    return VariantReport(name, step_l2, strata, ll, len(data))


def run_benchmark(models: dict, data: StepData, cfg: EvalConfig | None = None,
                  train_cells=None) -> EvalReport:
    """Evaluate each variant on ``data``.

    ``models`` maps variant names to :class:`ModelParams` or checkpoint paths.
    With ``train_cells`` the prior baseline LL-ratio is added.
    """
    from . import checkpoint

    cfg = cfg or EvalConfig()
    report = EvalReport(config={"seed": cfg.seed, "observed": cfg.observed, "horizon": cfg.horizon,
                                "ll_samples": cfg.ll_samples, "examples": len(data)})
    for name, m in models.items():
        params = m if isinstance(m, ModelParams) else checkpoint.model_from(checkpoint.load(m))
        report.rows.append(evaluate_variant(name, params, data, cfg))
    if train_cells is not None:
        base = prior_baseline(train_cells)
        gt = data.cells[:, cfg.observed:]
        heat = np.broadcast_to(base, gt.shape + (base.shape[-1],))
        report.prior_ll = ll_ratio(heat, gt)
    return report


# ---------------------------------------------------------------- export

def export_samples(beliefs: BeliefSequence, episode: Episode, out_dir, example: int = 0,
                   frames_per_step: int = 1) -> list[Path]:
    """Write per-agent per-step PGM heatmaps and the sampled trajectory as JSONL.

    The trajectory holds one frame per step (cell centres of the sampled
    cells, repeated ``frames_per_step`` times) in the simulator wire format.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create {out}: {e}") from e
    written = []
    heat = beliefs.heat_array()[example]
    for t in range(heat.shape[0]):
        for k in range(heat.shape[1]):
            path = out / f"heat_t{t + 1:02d}_a{k}.pgm"
            try:
                render.write_pgm(path, heat[t, k])
            except OSError as e:
                raise OSError(f"cannot write {path}: {e}") from e
            written.append(path)
    centers = render.cell_centers()
    cells = np.stack(beliefs.samples, axis=1)[example]          # (S, K)
    frames = np.repeat(centers[cells], frames_per_step, axis=0)
    traj = Episode(episode.k, frames, list(episode.roles), seed=episode.seed)
    path = out / "samples.jsonl"
    try:
        write_jsonl(path, [traj])
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    written.append(path)
    meta = out / "samples_meta.json"
    meta.write_text(json.dumps({"example": example, "steps": int(heat.shape[0]),
                                "agents": int(heat.shape[1])}, sort_keys=True) + "\n", encoding="utf-8")
    written.append(meta)
    return written
