"""Flat ``key = value`` run configuration shared by every subcommand."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .sim import SoccerConfig, SynthConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # run
    variant: str = "graph-vrnn"
    seed: int = 0
    data: str = ""
    test_data: str = ""
    out: str = ""
    checkpoint: str = ""
    # data generation
    kind: str = "synthetic"          # synthetic | soccer | basketball
    episodes: int = 100
    k: int = 3
    frames: int = 50
    interaction: float = 1.0
    repulsion: bool = True
    repulsion_scale: float = 0.08
    damping: float = 0.08
    switch_prob: float = 0.02
    burn_in: int = 100
    team_size: int = 5
    duration_s: float = 10.0
    kick_prob: float = 0.3
    court_width: float = 0.0         # basketball rescaling; 0 means already normalized
    court_height: float = 0.0
    # step grouping
    frames_per_step: int = 0         # 0: 4 for soccer, 5 otherwise
    occlusion: str = "auto"          # auto | schedule | camera | none; auto = camera for soccer
    period: int = 10
    train_fraction: float = 0.8
    # model
    hidden: int = 64
    latent: int = 16
    embed: int = 32
    mlp_hidden: int = 64
    att_hidden: int = 32
    # training
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
    clip_norm: float = 5.0
    literal_lambda: bool = False
    kl_forecast: bool = False
    log_every: int = 100
    # evaluation
    eval_seed: int = 0
    eval_batch: int = 25
    ll_samples: int = 1
    example: int = 0

    def synth(self) -> SynthConfig:
        return SynthConfig(k=self.k, episodes=self.episodes, frames=self.frames,
                           interaction=self.interaction, repulsion=self.repulsion,
                           repulsion_scale=self.repulsion_scale, damping=self.damping,
                           switch_prob=self.switch_prob, burn_in=self.burn_in)

    def soccer(self) -> SoccerConfig:
        return SoccerConfig(team_size=self.team_size, duration_s=self.duration_s,
                            kick_prob=self.kick_prob)

    def step_frames(self) -> int:
        if self.frames_per_step > 0:
            return self.frames_per_step
        return SoccerConfig().frames_per_step if self.kind == "soccer" else 5

    def occlusion_mode(self) -> str:
        if self.occlusion != "auto":
            return self.occlusion
        return "camera" if self.kind == "soccer" else "schedule"

    def model(self, k: int) -> ModelConfig:
        return ModelConfig(variant=self.variant, k=k, hidden=self.hidden, latent=self.latent,
                           embed=self.embed, mlp_hidden=self.mlp_hidden, att_hidden=self.att_hidden,
                           horizon=self.horizon)

    def train(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{n: getattr(self, n) for n in names})

    def dump(self) -> str:
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"


FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key: str, raw: str, where: str):
    typ = FIELD_TYPES[key]
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: {key} expects {typ.__name__}, got {raw!r}") from None


def apply(cfg: RunConfig, key: str, raw: str, where: str) -> None:
    if key not in FIELD_TYPES:
        raise ConfigError(f"{where}: unknown key {key!r}")
    setattr(cfg, key, _coerce(key, raw, where))


def parse_text(text: str, source: str = "<config>", cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        apply(cfg, key, raw, f"{source}:{lineno}")
    return cfg


def parse_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read a config file (later keys win), then apply flag overrides."""
    cfg = RunConfig()
    if path:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {p}: {e}") from None
        parse_text(text, str(p), cfg)
    for key, raw in (overrides or {}).items():
        apply(cfg, key, str(raw), "command line")
    return cfg


def require(cfg: RunConfig, *keys: str) -> None:
    missing = [k for k in keys if getattr(cfg, k) in ("", None)]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")


def replace(cfg: RunConfig, **kw) -> RunConfig:
    return dataclasses.replace(cfg, **kw)
