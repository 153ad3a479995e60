"""Bird's-eye rasterization, occlusion, camera cropping and the discrete state codec.

Grids are stored channel-last, (height, width, 3). The default raster is 48
pixels wide by 32 high; the state grid is 24 columns by 16 rows, so every
state cell covers a 2x2 pixel block.
"""
from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np

GRID_COLS = 24
GRID_ROWS = 16
NUM_CELLS = GRID_COLS * GRID_ROWS
RASTER = (32, 48)  # (height, width)
DISC_RADIUS = 2
BALL_COLOR = (1.0, 1.0, 0.0)

_disc = [(dr, dc) for dr in range(-DISC_RADIUS, DISC_RADIUS + 1)
         for dc in range(-DISC_RADIUS, DISC_RADIUS + 1) if dr * dr + dc * dc <= DISC_RADIUS ** 2]


def palette(roles: list[str]) -> np.ndarray:
    """K evenly spaced hues with the ball pinned to the yellow slot."""
    k = len(roles)
    colors = np.empty((k, 3))
    others = [i for i, r in enumerate(roles) if r != "ball"]
    has_ball = len(others) < k
    base = 1.0 / 6.0  # yellow
    for j, i in enumerate(others):
        hue = (base + (j + has_ball) / k) % 1.0
        colors[i] = colorsys.hsv_to_rgb(hue, 1.0, 1.0)
    if has_ball:
        colors[roles.index("ball")] = BALL_COLOR
    return colors


def draw_order(roles: list[str]) -> list[int]:
    return [i for i, r in enumerate(roles) if r != "ball"] + [i for i, r in enumerate(roles) if r == "ball"]


def _pixel(pos: np.ndarray, resolution) -> tuple[int, int]:
    h, w = resolution
    col = min(int(np.floor(pos[0] * w)), w - 1)
    row = min(int(np.floor(pos[1] * h)), h - 1)
    return row, col


def field_markings(rect=(0.0, 0.0, 1.0, 1.0), resolution=RASTER, level: float = 0.25) -> np.ndarray:
    """Faint grey pitch lines seen through camera ``rect`` (used for soccer frames)."""
    h, w = resolution
    x0, y0, x1, y1 = rect
    xs = x0 + (np.arange(w) + 0.5) / w * (x1 - x0)
    ys = y0 + (np.arange(h) + 0.5) / h * (y1 - y0)
    px = (x1 - x0) / w
    py = (y1 - y0) / h
    mask = np.zeros((h, w), dtype=bool)
    for lx in (0.0, 0.15, 0.5, 0.85, 1.0):
        col = np.abs(xs - lx) <= px / 2 + 1e-12
        rows = np.ones(h, dtype=bool) if lx in (0.0, 0.5, 1.0) else (np.abs(ys - 0.5) <= 0.25)
        mask |= rows[:, None] & col[None, :]
    for ly in (0.0, 1.0, 0.25, 0.75):
        row = np.abs(ys - ly) <= py / 2 + 1e-12
        cols = np.ones(w, dtype=bool) if ly in (0.0, 1.0) else ((xs <= 0.15) | (xs >= 0.85))
        mask |= row[:, None] & cols[None, :]
    out = np.zeros((h, w, 3))
    out[mask] = level
    return out


def render_frame(positions, mask, colors, resolution=RASTER, order=None,
                 background: np.ndarray | None = None) -> np.ndarray:
    """Draw each visible agent as a radius-2 disc in its colour.

    Agents are painted in ``order`` (default: index order), so later agents
    cover earlier ones; pass :func:`draw_order` to paint the ball last.
    """
    h, w = resolution
    grid = np.zeros((h, w, 3)) if background is None else np.array(background, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    for i in (range(len(positions)) if order is None else order):
        if not mask[i]:
            continue
        r0, c0 = _pixel(positions[i], resolution)
        for dr, dc in _disc:
            r, c = r0 + dr, c0 + dc
            if 0 <= r < h and 0 <= c < w:
                grid[r, c] = colors[i]
    return grid


def apply_occlusion_schedule(num_frames: int, k: int, period: int = 10, seed: int = 0) -> np.ndarray:
    """(F, K) visibility: in each ``period``-frame window one random agent is hidden."""
    if num_frames % period:
        raise ValueError(f"period {period} does not divide {num_frames} frames")
    rng = np.random.default_rng(seed)
    mask = np.ones((num_frames, k), dtype=bool)
    for start in range(0, num_frames, period):
        mask[start:start + period, int(rng.integers(k))] = False
    return mask


def crop_camera(positions, rect) -> tuple[np.ndarray, np.ndarray]:
    """Map field positions into ``rect``-local coordinates; outside agents are hidden."""
    positions = np.asarray(positions, dtype=np.float64)
    x0, y0, x1, y1 = rect
    visible = ((positions[:, 0] >= x0) & (positions[:, 0] <= x1)
               & (positions[:, 1] >= y0) & (positions[:, 1] <= y1))
    local = np.empty_like(positions)
    local[:, 0] = (positions[:, 0] - x0) / (x1 - x0)
    local[:, 1] = (positions[:, 1] - y0) / (y1 - y0)
    return np.clip(local, 0.0, 1.0), visible


def discretize(pos) -> np.ndarray | int:
    """Row-major cell index on the 24x16 grid; 1.0 falls in the last row/column."""
    p = np.asarray(pos, dtype=np.float64)
    if np.any((p < 0.0) | (p > 1.0)) or np.any(~np.isfinite(p)):
        raise ValueError(f"position outside [0,1]^2: {p.tolist() if p.size < 8 else '...'}")
    col = np.minimum(np.floor(p[..., 0] * GRID_COLS), GRID_COLS - 1).astype(np.int64)
    row = np.minimum(np.floor(p[..., 1] * GRID_ROWS), GRID_ROWS - 1).astype(np.int64)
    cell = row * GRID_COLS + col
    return int(cell) if cell.ndim == 0 else cell


def cell_centers() -> np.ndarray:
    """(G, 2) array of cell-centre coordinates in row-major order."""
    rows, cols = np.divmod(np.arange(NUM_CELLS), GRID_COLS)
    return np.stack([(cols + 0.5) / GRID_COLS, (rows + 0.5) / GRID_ROWS], axis=1)


_CENTERS = cell_centers()


def heatmap_to_coords(heat) -> np.ndarray:
    """Probability-weighted mean of cell centres, over the last axis."""
    return np.asarray(heat, dtype=np.float64) @ _CENTERS


def write_pgm(path, heat) -> None:
    """Plain PGM (P2), 24x16, max cell mapped to 255."""
    h = np.asarray(heat, dtype=np.float64).reshape(GRID_ROWS, GRID_COLS)
    top = h.max()
    vals = np.zeros_like(h, dtype=np.int64) if top <= 0 else np.rint(h / top * 255).astype(np.int64)
    lines = ["P2", f"{GRID_COLS} {GRID_ROWS}", "255"]
    lines += [" ".join(str(v) for v in row) for row in vals]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def write_ppm(path, grid) -> None:
    """Plain PPM (P3) of an (H, W, 3) grid with values in [0, 1]."""
    g = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    h, w, _ = g.shape
    px = np.rint(g * 255).astype(np.int64)
    lines = ["P3", f"{w} {h}", "255"]
    lines += [" ".join(" ".join(str(c) for c in p) for p in row) for row in px]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_pnm(path) -> np.ndarray:
    """Parse a plain P2/P3 file back into an integer array (rows, cols[, 3])."""
    tokens = Path(path).read_text(encoding="ascii").split()
    magic, w, h = tokens[0], int(tokens[1]), int(tokens[2])
    vals = np.array([int(t) for t in tokens[4:]])
    return vals.reshape(h, w) if magic == "P2" else vals.reshape(h, w, 3)
