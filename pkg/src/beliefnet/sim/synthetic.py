"""Synthetic interacting-agents generator used when no real dataset is at hand."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episode import Episode, TrajectorySet


@dataclass
class SynthConfig:
    k: int = 3
    episodes: int = 100
    frames: int = 50
    interaction: float = 1.0  # scales every force in the system
    repulsion: bool = True
    repulsion_scale: float = 0.08
    damping: float = 0.08
    init_speed: float = 0.012
    player_max_speed: float = 0.02
    ball_max_speed: float = 0.045
    switch_prob: float = 0.02
    waypoint_prob: float = 0.02
    burn_in: int = 100  # unrecorded frames so episodes start in the settled regime


def reflect(pos: np.ndarray, vel: np.ndarray) -> None:
    """Mirror positions and velocities off the unit-square walls, in place."""
    low = pos < 0.0
    pos[low] = -pos[low]
    vel[low] = -vel[low]
    high = pos > 1.0
    pos[high] = 2.0 - pos[high]
    vel[high] = -vel[high]
    np.clip(pos, 0.0, 1.0, out=pos)


def _cap(vel: np.ndarray, vmax: float) -> None:
    speed = np.linalg.norm(vel)
    if speed > vmax:
        vel *= vmax / speed


def simulate_synthetic_episode(cfg: SynthConfig, seed: int) -> Episode:
    rng = np.random.default_rng(seed)
    k = cfg.k
    n_players = k - 1
    ball = k - 1
    pos = rng.uniform(0.1, 0.9, size=(k, 2))
    angle = rng.uniform(0, 2 * np.pi, size=k)
    vel = cfg.init_speed * rng.uniform(0.5, 1.0, size=(k, 1)) * np.stack([np.cos(angle), np.sin(angle)], 1)
    waypoints = rng.uniform(0.1, 0.9, size=(n_players, 2))
    carrier = int(rng.integers(n_players))
    g = cfg.interaction

    out = np.empty((cfg.frames, k, 2))
    for f in range(-cfg.burn_in, cfg.frames):
        if f >= 0:
            out[f] = pos
        acc = -cfg.damping * vel
        players = pos[:n_players]
        # players roam toward waypoints and drift toward the ball
        acc[:n_players] += g * 0.0015 * (waypoints - players)
        acc[:n_players] += g * 0.0008 * (pos[ball] - players)
        if cfg.repulsion and n_players > 1:
            d = players[:, None, :] - players[None, :, :]
            r = np.linalg.norm(d, axis=-1) + np.eye(n_players)
            push = np.exp(-r / cfg.repulsion_scale) / r
            np.fill_diagonal(push, 0.0)
            acc[:n_players] += g * 0.004 * (push[..., None] * d).sum(axis=1)
        acc[ball] += g * 0.02 * (pos[carrier] - pos[ball]) - g * 0.15 * vel[ball]

        vel += acc
        for i in range(n_players):
            _cap(vel[i], cfg.player_max_speed)
        _cap(vel[ball], cfg.ball_max_speed)
        pos = pos + vel
        reflect(pos, vel)

        if n_players > 1 and rng.random() < cfg.switch_prob:
            carrier = int((carrier + rng.integers(1, n_players)) % n_players)
        moves = rng.random(n_players) < cfg.waypoint_prob
        waypoints[moves] = rng.uniform(0.1, 0.9, size=(int(moves.sum()), 2))
    roles = [f"player:0:{i}" for i in range(n_players)] + ["ball"]
    return Episode(k, out, roles, seed)


def gen_synthetic(cfg: SynthConfig, seed: int) -> TrajectorySet:
    """Generate ``cfg.episodes`` episodes; episode ``i`` uses a seed derived from (seed, i)."""
    if cfg.k < 2:
        raise ValueError(f"synthetic generator needs K >= 2 (players plus ball), got {cfg.k}")
    seeds = np.random.SeedSequence(seed).generate_state(cfg.episodes, dtype=np.uint32)
    episodes = [simulate_synthetic_episode(cfg, int(s)) for s in seeds]
    return TrajectorySet(episodes, "train", "synthetic")
