"""Model configuration and parameter construction for every variant."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import render
from ..autodiff.nn import ConvParams, GRUParams, Subnet, glorot, zeros
from ..autodiff.tensor import Tensor

VARIANTS = ("visual-only", "rnn-shared", "vrnn-shared", "indep-rnn", "social-rnn", "graph-rnn", "graph-vrnn")


@dataclass
class ModelConfig:
    variant: str = "graph-vrnn"
    k: int = 3
    hidden: int = 64
    latent: int = 16
    embed: int = 32
    mlp_hidden: int = 64
    att_hidden: int = 32
    channels: tuple[int, int] = (8, 16)
    resolution: tuple[int, int] = render.RASTER
    horizon: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.k < 1:
            raise ValueError("need at least one agent")

    @property
    def variational(self) -> bool:
        return self.variant in ("vrnn-shared", "graph-vrnn")

    @property
    def shared(self) -> bool:
        return self.variant in ("rnn-shared", "vrnn-shared")

    @property
    def recurrent(self) -> bool:
        return self.variant != "visual-only"

    @property
    def message(self) -> str | None:
        return {"graph-rnn": "graph", "graph-vrnn": "graph", "social-rnn": "social"}.get(self.variant)

    @property
    def cells(self) -> int:
        h, w = self.resolution
        return (h // 2) * (w // 2)

    @property
    def state_embed(self) -> int:
        return self.embed + 2  # learned table row plus the cell-centre coordinates


@dataclass
class ModelParams:
    """All learned weights. Every variant builds the same groups in the same
    order so that shared parts get identical initial values from one seed."""

    cfg: ModelConfig
    conv: ConvParams
    head_w: Tensor          # (K, C) per-agent 1x1 conv over the pooled map
    head_b: Tensor          # (K, 1)
    dv_w: Tensor            # (3, 3, 1, 1) visible decoder
    dv_b: Tensor            # (G,)
    fv: list[tuple[Tensor, Tensor]]  # visual-only forecast heads, one per horizon
    table: Tensor           # (G, E) state embedding
    prior: Subnet
    enc: Subnet
    dh: Subnet
    sv: Subnet
    sh: Subnet
    edge: Subnet
    node: Subnet
    gru: GRUParams
    extra: dict = field(default_factory=dict)

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for k, v in self.conv.parameters().items():
            out[f"conv.{k}"] = v
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        out["dv.w"] = self.dv_w
        out["dv.b"] = self.dv_b
        for i, (w, b) in enumerate(self.fv):
            out[f"fv{i}.w"] = w
            out[f"fv{i}.b"] = b
        out["embed.table"] = self.table
        for name in ("prior", "enc", "dh", "sv", "sh", "edge", "node"):
            for k, v in getattr(self, name).parameters().items():
                out[f"{name}.{k}"] = v
        for k, v in self.gru.parameters().items():
            out[f"gru.{k}"] = v
        return out

    def groups(self) -> dict[str, list[str]]:
        """Parameter names grouped by subnet."""
        out: dict[str, list[str]] = {}
        for name in self.named():
            out.setdefault(name.split(".")[0], []).append(name)
        return out

    def used(self) -> list[str]:
        """Names of the parameters the configured variant actually touches."""
        c = self.cfg
        skip = set()
        if c.recurrent:
            skip |= {n for n in self.named() if n.startswith("fv")}
        else:
            keep = ("conv.", "head.", "dv.", "fv")
            return [n for n in self.named() if n.startswith(keep)]
        if not c.variational:
            skip |= {n for n in self.named() if n.startswith(("prior.", "enc."))}
        if c.message is None:
            skip |= {n for n in self.named() if n.startswith(("edge.", "node."))}
        return [n for n in self.named() if n not in skip]


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    hd, zd, g = cfg.hidden, cfg.latent, cfg.cells
    es = cfg.state_embed
    agent_id = cfg.k if cfg.shared else 0
    conv = ConvParams.create(rng, 3, cfg.channels, cfg.resolution)
    c2 = cfg.channels[1]
    head_w = glorot(rng, c2, 1, shape=(cfg.k, c2))
    head_b = zeros(cfg.k, 1)
    dv_w = glorot(rng, 9, 9, shape=(3, 3, 1, 1))
    dv_b = zeros(g)
    fv = [(glorot(rng, 9, 9, shape=(3, 3, 1, 1)), zeros(g)) for _ in range(cfg.horizon)]
    table = Tensor(rng.normal(0.0, 0.1, size=(g, cfg.embed)), requires_grad=True)
    enc_in = hd + (cfg.k * es if cfg.shared else es)
    prior = Subnet.create(rng, [hd, cfg.mlp_hidden, 2 * zd], ["relu", "linear"])
    enc = Subnet.create(rng, [enc_in, cfg.mlp_hidden, 2 * zd], ["relu", "linear"])
    ctx = hd + agent_id
    dh = Subnet.create(rng, [ctx + 2 * zd, cfg.mlp_hidden, g], ["relu", "linear"])
    att_in = g + ctx + 2 * zd + g
    sv = Subnet.create(rng, [att_in, cfg.att_hidden, 1], ["relu", "linear"])
    sh = Subnet.create(rng, [att_in, cfg.att_hidden, 1], ["relu", "linear"])
    edge = Subnet.create(rng, [2 * hd, cfg.mlp_hidden, hd], ["relu", "linear"])
    node = Subnet.create(rng, [2 * hd, cfg.mlp_hidden, hd], ["relu", "linear"])
    gru_in = (cfg.k * es if cfg.shared else es) + zd
    gru = GRUParams.create(rng, gru_in, hd)
    return ModelParams(cfg, conv, head_w, head_b, dv_w, dv_b, fv, table, prior, enc, dh, sv, sh,
                       edge, node, gru)
