"""Command-line entry point: gen-data, simulate, train, eval, forecast, export.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, render
from .config import ConfigError, RunConfig, parse_config, require
from .data import build_steps
from .sim import gen_synthetic, load_basketball, read_jsonl, simulate_soccer, write_jsonl
from .sim.episode import TrajectorySet

log = logging.getLogger("beliefnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# flag name -> config key
FLAGS = {
    "data": "data", "test_data": "test_data", "out": "out", "variant": "variant", "seed": "seed",
    "kind": "kind", "episodes": "episodes", "checkpoint": "checkpoint", "steps": "total_steps",
    "example": "example",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--data", help="trajectory JSONL")
    p.add_argument("--test-data", dest="test_data", help="held-out trajectory JSONL")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--variant")
    p.add_argument("--seed", type=int)
    p.add_argument("--kind", choices=["synthetic", "soccer", "basketball"])
    p.add_argument("--episodes", type=int)
    p.add_argument("--checkpoint", help="checkpoint path (eval: comma-separated list)")
    p.add_argument("--steps", type=int, help="total training steps")
    p.add_argument("--example", type=int, help="test-set example index")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="beliefnet", description="Multi-agent belief-state tracking and forecasting.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    helps = {
        "gen-data": "generate a synthetic or soccer trajectory set (JSONL)",
        "simulate": "simulate one episode and render its frames",
        "train": "train one model variant",
        "eval": "evaluate checkpoints on a test set",
        "forecast": "sample forecasts for one test episode and export them",
        "export": "export filtered beliefs for one test episode",
    }
    for name, text in helps.items():
        _add_common(sub.add_parser(name, help=text, description=text))
    return parser


def resolve(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for flag, key in FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = str(v)
    return parse_config(args.config, overrides)


# ---------------------------------------------------------------- data helpers

def load_set(cfg: RunConfig, path: str) -> TrajectorySet:
    if cfg.kind == "basketball":
        court = (cfg.court_width, cfg.court_height) if cfg.court_width > 0 else None
        return load_basketball(path, court=court)
    return read_jsonl(path)


def step_data(cfg: RunConfig, ts: TrajectorySet):
    return build_steps(ts, frames_per_step=cfg.step_frames(), steps=cfg.observed + cfg.horizon,
                       observed=cfg.observed, occlusion=cfg.occlusion_mode(), period=cfg.period)


def split_sets(cfg: RunConfig) -> tuple[TrajectorySet, TrajectorySet]:
    """Train/test sets: an explicit test file, or a split of the main file."""
    ts = load_set(cfg, cfg.data)
    if cfg.test_data:
        return ts, load_set(cfg, cfg.test_data)
    n = int(round(cfg.train_fraction * len(ts)))
    if not 0 < n < len(ts):
        raise ValueError(f"train_fraction {cfg.train_fraction} leaves an empty split of {len(ts)} episodes")
    return ts.split_at(n)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(cfg.dump(), encoding="utf-8")
    return out


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg: RunConfig) -> None:
    require(cfg, "out")
    if cfg.kind == "synthetic":
        ts = gen_synthetic(cfg.synth(), cfg.seed)
        episodes = ts.episodes
    elif cfg.kind == "soccer":
        seeds = np.random.SeedSequence(cfg.seed).generate_state(cfg.episodes)
        episodes = [simulate_soccer(cfg.soccer(), int(s)) for s in seeds]
    else:
        raise ValueError("gen-data supports kind = synthetic or soccer")
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(cfg.out, episodes)
    log.info("wrote %d episodes to %s", len(episodes), cfg.out)


def cmd_simulate(cfg: RunConfig) -> None:
    """One episode: JSONL, per-frame PPM rasters and a trajectory plot."""
    require(cfg, "out")
    from .data import frame_visibility
    from .sim.synthetic import simulate_synthetic_episode

    out = _out_dir(cfg)
    if cfg.kind == "soccer":
        ep = simulate_soccer(cfg.soccer(), cfg.seed)
    else:
        ep = simulate_synthetic_episode(cfg.synth(), cfg.seed)
    mode = cfg.occlusion_mode()
    write_jsonl(out / "episode.jsonl", [ep])
    vis, local = frame_visibility(ep, mode, cfg.period)
    colors, order = render.palette(ep.roles), render.draw_order(ep.roles)
    frames_dir = out / "frames"
    frames_dir.mkdir(exist_ok=True)
    for f in range(ep.num_frames):
        if local is None:
            grid = render.render_frame(ep.frames[f], vis[f], colors, order=order)
        else:
            bg = render.field_markings(ep.camera[f])
            grid = render.render_frame(local[f], vis[f], colors, order=order, background=bg)
        render.write_ppm(frames_dir / f"frame_{f:03d}.ppm", grid)
    _plot_tracks(ep, out / "tracks.png")


def _plot_tracks(ep, path) -> None:
    from . import plotting  # noqa: F401  (selects the Agg backend)
    import matplotlib.pyplot as plt

    colors = render.palette(ep.roles)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k in range(ep.k):
        ax.plot(ep.frames[:, k, 0], ep.frames[:, k, 1], color=colors[k] * 0.8, lw=1, label=ep.roles[k])
    ax.set_xlim(0, 1)
    ax.set_ylim(1, 0)
    ax.set_aspect(1.0)
    if ep.k <= 6:
        ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_train(cfg: RunConfig) -> None:
    require(cfg, "data", "out", "variant")
    from .model import init_params
    from .plotting import plot_loss
    from .train import Trainer

    out = _out_dir(cfg)
    train_set, _ = split_sets(cfg)
    data = step_data(cfg, train_set)
    params = init_params(cfg.model(data.k), cfg.seed)
    trainer = Trainer(params, data, cfg.train())
    metrics = out / "metrics.csv"
    if metrics.exists():
        metrics.unlink()
    hist = trainer.run(metrics_path=metrics, log_every=cfg.log_every)
    checkpoint.save(out / "model.gvrn", checkpoint.snapshot(trainer))
    plot_loss([m.step for m in hist], [m.loss for m in hist], out / "loss.png")
    log.info("trained %s for %d steps; final loss %.3f", cfg.variant, trainer.step,
             hist[-1].loss if hist else float("nan"))


def _checkpoints(cfg: RunConfig) -> dict[str, Path]:
    require(cfg, "checkpoint")
    models = {}
    for item in cfg.checkpoint.split(","):
        path = Path(item.strip())
        if path.is_dir():
            path = path / "model.gvrn"
        ck = checkpoint.load(path)
        name = ck.config["model"]["variant"]
        if name in models:
            name = f"{name}@{path.parent.name}"
        models[name] = path
    return models


def cmd_eval(cfg: RunConfig) -> None:
    require(cfg, "data", "out", "checkpoint")
    from .eval import EvalConfig, run_benchmark
    from .plotting import plot_step_l2

    out = _out_dir(cfg)
    train_set, test_set = split_sets(cfg)
    train, test = step_data(cfg, train_set), step_data(cfg, test_set)
    ecfg = EvalConfig(seed=cfg.eval_seed, batch=cfg.eval_batch, ll_samples=cfg.ll_samples,
                      observed=cfg.observed, horizon=cfg.horizon)
    report = run_benchmark(_checkpoints(cfg), test, ecfg, train_cells=train.cells)
    report.to_csv(out / "report.csv")
    (out / "report.txt").write_text(report.table(), encoding="utf-8")
    plot_step_l2(report, out / "l2.png")
    sys.stdout.write(report.table())


def _single(cfg: RunConfig, mode: str) -> None:
    require(cfg, "data", "out", "checkpoint")
    from .autodiff import no_grad
    from .eval import export_samples
    from .model import rollout
    from .plotting import plot_heatmaps

    out = _out_dir(cfg)
    _, test_set = split_sets(cfg)
    if not 0 <= cfg.example < len(test_set):
        raise ValueError(f"example {cfg.example} outside test set of {len(test_set)} episodes")
    ep = test_set.episodes[cfg.example]
    data = step_data(cfg, TrajectorySet([ep], "test", "single"))
    ck_path = Path(cfg.checkpoint)
    params = checkpoint.model_from(checkpoint.load(ck_path / "model.gvrn" if ck_path.is_dir() else ck_path))
    if params.cfg.k != data.k:
        raise ValueError(f"checkpoint has K={params.cfg.k}, episode has K={data.k}")
    with no_grad():
        beliefs = rollout(params, data.grids, observed=cfg.observed, horizon=cfg.horizon, mode=mode,
                          rng=np.random.default_rng(cfg.eval_seed))
    export_samples(beliefs, ep, out, frames_per_step=cfg.step_frames())
    plot_heatmaps(beliefs.heat_array()[0], out / "heatmaps.png", truth=data.coords[0], roles=data.roles)


def cmd_forecast(cfg: RunConfig) -> None:
    _single(cfg, "sample")


def cmd_export(cfg: RunConfig) -> None:
    _single(cfg, "filter")


COMMANDS = {"gen-data": cmd_gen_data, "simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval,
            "forecast": cmd_forecast, "export": cmd_export}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        cfg = resolve(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"beliefnet: config error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"beliefnet: config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001  runtime failures map to exit code 2
        print(f"beliefnet {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
