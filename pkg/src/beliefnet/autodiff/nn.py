"""Neural building blocks on top of the tape: MLPs, GRU cell, conv encoder, Gaussians."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as ad
from .tensor import ShapeError, Tensor

SIGMA_FLOOR = 1e-4

_ACTIVATIONS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "softplus": ad.softplus,
    "linear": lambda x: x,
}


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class Subnet:
    """Stack of affine layers, each followed by its activation tag."""

    weights: list[Tensor]
    biases: list[Tensor]
    activations: list[str]

    @classmethod
    def create(cls, rng: np.random.Generator, sizes: list[int], activations: list[str]) -> "Subnet":
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        ws = [glorot(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        bs = [zeros(b) for b in sizes[1:]]
        return cls(ws, bs, list(activations))

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"subnet: input width {x.shape[-1]} != expected {self.in_dim}")
        for w, b, act in zip(self.weights, self.biases, self.activations):
            x = _ACTIVATIONS[act](ad.add(ad.matmul(x, w), b))
        return x


@dataclass
class GRUParams:
    w_x: Tensor  # (in, 3H) for update, reset, candidate
    w_h: Tensor  # (H, 3H)
    b: Tensor    # (3H,)

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, hidden: int) -> "GRUParams":
        wx = np.concatenate([glorot(rng, in_dim, hidden).data for _ in range(3)], axis=1)
        wh = np.concatenate([glorot(rng, hidden, hidden).data for _ in range(3)], axis=1)
        return cls(Tensor(wx, True), Tensor(wh, True), zeros(3 * hidden))

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}


def gru_cell(x: Tensor, h: Tensor, p: GRUParams) -> Tensor:
    """One GRU update.

    u = sigmoid(x Wxu + h Whu + bu), r = sigmoid(x Wxr + h Whr + br),
    n = tanh(x Wxn + (r*h) Whn + bn), h' = u*h + (1-u)*n.
    """
    hd = p.hidden
    if h.shape[-1] != hd or x.shape[-1] != p.w_x.shape[0]:
        raise ShapeError(f"gru_cell: got x {x.shape}, h {h.shape}; params expect "
                         f"x[..., {p.w_x.shape[0]}], h[..., {hd}]")
    xw = ad.add(ad.matmul(x, p.w_x), p.b)
    hw = ad.matmul(h, p.w_h[:, : 2 * hd])
    u = ad.sigmoid(ad.add(xw[..., :hd], hw[..., :hd]))
    r = ad.sigmoid(ad.add(xw[..., hd:2 * hd], hw[..., hd:]))
    n = ad.tanh(ad.add(xw[..., 2 * hd:], ad.matmul(ad.mul(r, h), p.w_h[:, 2 * hd:])))
    return ad.add(n, ad.mul(u, ad.sub(h, n)))


@dataclass
class GaussianStats:
    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ShapeError(f"GaussianStats: mu {self.mu.shape} vs sigma {self.sigma.shape}")


def gaussian_head(raw: Tensor) -> GaussianStats:
    """Split ``raw`` (..., 2Z) into a mean and a floored softplus scale."""
    z = raw.shape[-1] // 2
    return GaussianStats(raw[..., :z], ad.add(ad.softplus(raw[..., z:]), SIGMA_FLOOR))


def reparameterize(stats: GaussianStats, rng: np.random.Generator) -> Tensor:
    eps = rng.standard_normal(stats.mu.shape)
    return ad.add(stats.mu, ad.mul(stats.sigma, eps))


def gaussian_kl(q: GaussianStats, p: GaussianStats) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the last axis."""
    if q.mu.shape != p.mu.shape:
        raise ShapeError(f"gaussian_kl: length mismatch {q.mu.shape} vs {p.mu.shape}")
    # with r = vq/vp the divergence is 0.5*(r - 1 - log r) + 0.5*(mu_q - mu_p)^2/vp; writing the
    # first part as x - log1p(x), x = r - 1, keeps every term non-negative after rounding
    vp = ad.square(p.sigma)
    x = ad.sub(ad.div(ad.square(q.sigma), vp), 1.0)
    spread = ad.sub(x, ad.log1p(x))
    shift = ad.div(ad.square(ad.sub(q.mu, p.mu)), vp)
    return ad.sum_(ad.mul(ad.add(spread, shift), 0.5), axis=-1)


@dataclass
class ConvParams:
    """Two 3x3 conv layers; the second adds a channel-padded identity shortcut."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    resolution: tuple[int, int] = field(default=(32, 48))  # (height, width)

    @classmethod
    def create(cls, rng: np.random.Generator, in_ch: int = 3, channels=(8, 16),
               resolution=(32, 48)) -> "ConvParams":
        c1, c2 = channels
        w1 = glorot(rng, in_ch * 9, c1 * 9, shape=(3, 3, in_ch, c1))
        w2 = glorot(rng, c1 * 9, c2 * 9, shape=(3, 3, c1, c2))
        return cls(w1, zeros(c1), w2, zeros(c2), tuple(resolution))

    def parameters(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def conv_encoder(grid: Tensor, p: ConvParams, global_pool: bool = False) -> Tensor:
    """Encode (N, H, W, 3) grids into (N, H/2, W/2, C2) max-pooled feature maps.

    With ``global_pool`` the map is further max-pooled over space into an
    (N, C2) vector. The model keeps the spatial map: its cells line up with
    the discretized state grid, and a global pool would discard location.
    """
    if grid.ndim != 4 or tuple(grid.shape[1:3]) != tuple(p.resolution):
        raise ShapeError(f"conv_encoder: grid {grid.shape} does not match resolution {p.resolution}")
    a1 = ad.relu(ad.add(ad.conv2d(grid, p.w1), p.b1))
    c1, c2 = p.w1.shape[-1], p.w2.shape[-1]
    a2 = ad.add(ad.conv2d(a1, p.w2), p.b2)
    if c2 == c1:
        shortcut = a1
    else:
        pad = Tensor(np.zeros(a1.shape[:3] + (c2 - c1,)))
        shortcut = ad.concat([a1, pad], axis=-1)
    a2 = ad.relu(ad.add(a2, shortcut))
    pooled = ad.maxpool2d(a2, 2)
    if global_pool:
        return ad.max_(ad.reshape(pooled, (pooled.shape[0], -1, pooled.shape[-1])), axis=1)
    return pooled
