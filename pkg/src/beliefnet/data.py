"""Turn trajectory sets into step-level model inputs: rendered grids, target cells, masks."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import render
from .sim.episode import Episode, TrajectorySet


def worker_count() -> int:
    env = os.environ.get("BELIEFNET_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class StepData:
    """Step-level arrays for N episodes, S = observed + forecast steps.

    grids:   (N, observed, H, W, 3) float32, frames averaged within each step
    cells:   (N, S, K) target cell per agent
    coords:  (N, S, K, 2) mean position within each step
    visible: (N, S, K) agent drawn in at least one frame of the step
    """

    grids: np.ndarray
    cells: np.ndarray
    coords: np.ndarray
    visible: np.ndarray
    roles: list[str]
    observed: int

    def __len__(self) -> int:
        return self.cells.shape[0]

    @property
    def k(self) -> int:
        return self.cells.shape[2]

    @property
    def steps(self) -> int:
        return self.cells.shape[1]

    def subset(self, idx) -> "StepData":
        return StepData(self.grids[idx], self.cells[idx], self.coords[idx], self.visible[idx],
                        self.roles, self.observed)

    def permute_agents(self, perm) -> "StepData":
        """Reorder agents; grids are unchanged because pixels carry no agent order."""
        perm = np.asarray(perm)
        return StepData(self.grids, self.cells[:, :, perm], self.coords[:, :, perm],
                        self.visible[:, :, perm], [self.roles[i] for i in perm], self.observed)


def frame_visibility(ep: Episode, mode: str, period: int = 10) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-frame visibility and, for camera mode, per-frame local positions."""
    if mode == "schedule":
        return render.apply_occlusion_schedule(ep.num_frames, ep.k, period, ep.seed), None
    if mode == "camera":
        if ep.camera is None:
            raise ValueError("camera occlusion needs an episode with camera rectangles")
        local = np.empty_like(ep.frames)
        vis = np.empty(ep.frames.shape[:2], dtype=bool)
        for f in range(ep.num_frames):
            local[f], vis[f] = render.crop_camera(ep.frames[f], ep.camera[f])
        return vis, local
    if mode == "none":
        return np.ones(ep.frames.shape[:2], dtype=bool), None
    raise ValueError(f"unknown occlusion mode {mode!r}")


def episode_steps(ep: Episode, frames_per_step: int, steps: int, observed: int, occlusion: str,
                  period: int = 10, resolution=render.RASTER):
    need = frames_per_step * steps
    if ep.num_frames < need:
        raise ValueError(f"episode has {ep.num_frames} frames, need {need}")
    frames = ep.frames[:need]
    vis, local = frame_visibility(ep, occlusion, period)
    vis = vis[:need]
    colors = render.palette(ep.roles)
    order = render.draw_order(ep.roles)
    grids = np.zeros((observed,) + tuple(resolution) + (3,))
    for s in range(observed):
        for f in range(s * frames_per_step, (s + 1) * frames_per_step):
            if local is None:
                grids[s] += render.render_frame(frames[f], vis[f], colors, resolution, order)
            else:
                bg = render.field_markings(ep.camera[f], resolution)
                grids[s] += render.render_frame(local[f], vis[f], colors, resolution, order, bg)
        grids[s] /= frames_per_step
    coords = frames.reshape(steps, frames_per_step, ep.k, 2).mean(axis=1)
    visible = vis.reshape(steps, frames_per_step, ep.k).any(axis=1)
    return grids.astype(np.float32), render.discretize(coords), coords, visible


def build_steps(ts: TrajectorySet, frames_per_step: int = 5, steps: int = 10, observed: int = 6,
                occlusion: str = "schedule", period: int = 10, resolution=render.RASTER) -> StepData:
    """Render and group every episode; runs on ``BELIEFNET_THREADS`` worker threads."""
    def one(ep):
        return episode_steps(ep, frames_per_step, steps, observed, occlusion, period, resolution)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        parts = list(pool.map(one, ts.episodes))
    k = ts.k
    if not parts:
        h, w = resolution
        return StepData(np.zeros((0, observed, h, w, 3), np.float32), np.zeros((0, steps, k), np.int64),
                        np.zeros((0, steps, k, 2)), np.zeros((0, steps, k), bool), ts.roles, observed)
    grids, cells, coords, visible = (np.stack(x) for x in zip(*parts))
    return StepData(grids, cells, coords, visible, list(ts.roles), observed)
