"""Per-step building blocks: prior, posterior, fused decoder, message passing, recurrence."""
from __future__ import annotations

import numpy as np

from .. import render
from ..autodiff import tensor as ad
from ..autodiff.nn import GaussianStats, conv_encoder, gaussian_head, gru_cell
from ..autodiff.tensor import ShapeError, Tensor
from .params import ModelParams

_CENTERS = render.cell_centers()


def expand(x: Tensor, shape) -> Tensor:
    """Broadcast ``x`` to ``shape`` as a recorded op."""
    return ad.add(x, np.zeros(shape))


def embed_cells(p: ModelParams, cells) -> Tensor:
    """Learned row of the embedding table joined with the cell-centre coordinates."""
    cells = np.asarray(cells, dtype=np.int64)
    return ad.concat([ad.gather_rows(p.table, cells), Tensor(_CENTERS[cells])], axis=-1)


def _check_width(name: str, x: Tensor, want: int) -> None:
    if x.shape[-1] != want:
        raise ShapeError(f"{name}: input width {x.shape[-1]} != {want}")


def prior_step(p: ModelParams, h: Tensor) -> GaussianStats:
    _check_width("prior_step", h, p.prior.in_dim)
    return gaussian_head(p.prior(h))


def encode_posterior(p: ModelParams, h: Tensor, target_cells) -> GaussianStats:
    """Posterior stats from the (pre-recurrence) hidden state and the target cells.

    For shared-state variants ``target_cells`` is (B, K) and all agents'
    embeddings are concatenated; otherwise it has the same leading shape as h.
    """
    emb = embed_cells(p, target_cells)
    if p.cfg.shared:
        emb = ad.reshape(emb, emb.shape[:-2] + (-1,))
    x = ad.concat([h, emb], axis=-1)
    _check_width("encode_posterior", x, p.enc.in_dim)
    return gaussian_head(p.enc(x))


def encode_frames(p: ModelParams, grids: np.ndarray | Tensor) -> Tensor:
    """(N, H, W, 3) grids to per-agent score maps (N, K, G).

    Each agent's head is a 1x1 convolution over the pooled map, whose cells
    coincide with the state grid.
    """
    x = grids if isinstance(grids, Tensor) else Tensor(grids)
    fmap = conv_encoder(x, p.conv)
    n, c = fmap.shape[0], fmap.shape[-1]
    flat = ad.reshape(fmap, (n, -1, c))                              # (N, G, C)
    scores = ad.matmul(flat, ad.transpose(p.head_w, (1, 0)))         # (N, G, K)
    return ad.add(ad.transpose(scores, (0, 2, 1)), p.head_b)


def _cell_conv(v: Tensor, w: Tensor, b: Tensor) -> Tensor:
    lead = v.shape[:-1]
    n = int(np.prod(lead)) if lead else 1
    img = ad.reshape(v, (n, render.GRID_ROWS, render.GRID_COLS, 1))
    out = ad.reshape(ad.conv2d(img, w), lead + (v.shape[-1],))
    return ad.add(out, b)


def visible_decode(p: ModelParams, v_feat: Tensor) -> Tensor:
    return _cell_conv(v_feat, p.dv_w, p.dv_b)


def visual_forecast(p: ModelParams, v_feat: Tensor, horizon: int) -> Tensor:
    w, b = p.fv[horizon]
    return _cell_conv(v_feat, w, b)


def fuse_decode(p: ModelParams, v_feat: Tensor, h: Tensor, stats: Tensor, prev_heat: Tensor):
    """Attention-gated blend of the visible and hidden decoders.

    ``stats`` is the prior (mu, sigma) concatenated on the last axis. Returns
    (logits, alpha_v, alpha_h) with alphas shaped (..., 1).
    """
    ctx = ad.concat([v_feat, h, stats, prev_heat], axis=-1)
    _check_width("fuse_decode", ctx, p.sv.in_dim)
    alpha_v = ad.sigmoid(p.sv(ctx))
    alpha_h = ad.sigmoid(p.sh(ctx))
    dv = visible_decode(p, v_feat)
    dh = p.dh(ad.concat([h, stats], axis=-1))
    logits = ad.add(ad.mul(alpha_v, dv), ad.mul(alpha_h, dh))
    return logits, alpha_v, alpha_h


def _canonical_sum(x: Tensor, axis: int) -> Tensor:
    """Sum whose value does not depend on the order of entries along ``axis``.

    Entries are sorted before adding, so permuting neighbours leaves the result
    bit-identical. The gradient of a sum is order-free anyway.
    """
    y = np.sort(x.data, axis=axis).sum(axis=axis)

    def fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return ad._make(y, (x,), fn, "canonical_sum")


def graph_message_pass(p: ModelParams, hs: Tensor, kind: str = "graph") -> Tensor:
    """One round of fully connected message passing over agents.

    hs: (B, K, H). ``kind="graph"`` averages edge messages over the K-1
    neighbours (relation network); ``kind="social"`` max-pools them. The node
    update is residual: h' = h + node([h, m]).
    """
    b, k, hd = hs.shape
    if k == 1:
        m = Tensor(np.zeros((b, k, hd)))
    else:
        w0, b0 = p.edge.weights[0], p.edge.biases[0]
        own = ad.matmul(hs, w0[:hd])          # (B, K, M) for receiver k
        other = ad.matmul(hs, w0[hd:])        # (B, K, M) for sender j
        pre = ad.add(ad.add(ad.reshape(own, (b, k, 1, -1)), ad.reshape(other, (b, 1, k, -1))), b0)
        act = ad.relu(pre)
        msg = ad.add(ad.matmul(act, p.edge.weights[1]), p.edge.biases[1])  # (B, K, K, H)
        off = 1.0 - np.eye(k)[None, :, :, None]
        if kind == "graph":
            m = ad.mul(_canonical_sum(ad.mul(msg, off), axis=2), 1.0 / (k - 1))
        elif kind == "social":
            m = ad.max_(ad.add(msg, (1.0 - off) * -1e9), axis=2)
        else:
            raise ValueError(f"unknown message kind {kind!r}")
    return ad.add(hs, p.node(ad.concat([hs, m], axis=-1)))


def recurrence(p: ModelParams, cells, z: Tensor, h: Tensor) -> Tensor:
    """GRU step on [embed(sampled cells), z]; shared-state variants concatenate all agents."""
    emb = embed_cells(p, cells)
    if p.cfg.shared:
        emb = ad.reshape(emb, emb.shape[:-2] + (-1,))
    return gru_cell(ad.concat([emb, z], axis=-1), h, p.gru)
