"""2D soccer-world-lite: decision-tree players, kick/friction ball, ball-tracking camera."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episode import Episode


@dataclass
class SoccerConfig:
    team_size: int = 5        # goalkeeper + outfield players per team
    duration_s: float = 10.0
    tick_hz: int = 4
    frames_per_step: int = 4
    window: tuple[float, float] = (0.4, 0.6)
    player_speed: float = 0.03   # field units per tick
    kick_prob: float = 0.3
    kick_power: tuple[float, float] = (0.05, 0.1)
    friction: float = 0.75
    contact_radius: float = 0.02
    gk_jitter: float = 0.005


@dataclass
class Action:
    kind: str  # "move", "kick" or "idle"
    target: np.ndarray | None = None
    power: float = 0.0


@dataclass
class AgentState:
    index: int
    role: str
    home: np.ndarray

    @property
    def team(self) -> int:
        return int(self.role.split(":")[1])

    @property
    def is_goalkeeper(self) -> bool:
        return self.role.startswith("goalkeeper")


@dataclass
class WorldState:
    positions: np.ndarray   # (K, 2); the ball is the last row
    roles: list[str]
    carrier: int | None = None

    @property
    def ball(self) -> np.ndarray:
        return self.positions[-1]


def soccer_roles(team_size: int) -> list[str]:
    roles = []
    for team in (0, 1):
        roles.append(f"goalkeeper:{team}")
        roles.extend(f"player:{team}:{i}" for i in range(1, team_size))
    return roles + ["ball"]


def opponent_goal(team: int) -> np.ndarray:
    return np.array([1.0, 0.5]) if team == 0 else np.array([0.0, 0.5])


def _nearest_teammate_to_ball(world: WorldState, team: int) -> int:
    best, best_d = -1, np.inf
    for i, role in enumerate(world.roles[:-1]):
        if not role.startswith(f"player:{team}:"):
            continue
        d = float(np.linalg.norm(world.positions[i] - world.ball))
        if d < best_d:
            best, best_d = i, d
    return best


def decision_tree_step(agent: AgentState, world: WorldState, rng: np.random.Generator,
                       kick_prob: float = 0.3, kick_power=(0.05, 0.1)) -> Action:
    """Pick one action for ``agent`` with the fixed probabilistic tree."""
    if agent.is_goalkeeper:
        return Action("idle")
    goal = opponent_goal(agent.team)
    if world.carrier == agent.index:
        if rng.random() < kick_prob:
            aim = goal + np.array([0.0, rng.uniform(-0.1, 0.1)])
            return Action("kick", aim, float(rng.uniform(*kick_power)))
        return Action("move", goal)
    if world.carrier is None and _nearest_teammate_to_ball(world, agent.team) == agent.index:
        return Action("move", world.ball.copy())
    w = rng.uniform(0.4, 0.9)
    return Action("move", w * agent.home + (1.0 - w) * world.ball)


def camera_window(ball: np.ndarray, window=(0.4, 0.6)) -> np.ndarray:
    """Window of size ``window`` centred on the ball, shifted to stay in the field."""
    out = np.empty(4)
    for axis in (0, 1):
        size = float(window[axis])
        if size > 1.0:
            raise ValueError(f"window {window} larger than the field")
        lo = min(max(ball[axis] - size / 2, 0.0), 1.0 - size)
        lo = min(lo, ball[axis])
        out[axis] = lo
        out[axis + 2] = max(lo + size, ball[axis])
    return out


def _random_homes(rng: np.random.Generator, team_size: int) -> np.ndarray:
    homes = []
    for team in (0, 1):
        homes.append([0.03, 0.5] if team == 0 else [0.97, 0.5])
        for _ in range(1, team_size):
            x = rng.uniform(0.1, 0.48)
            homes.append([x if team == 0 else 1.0 - x, rng.uniform(0.08, 0.92)])
    return np.asarray(homes)


def simulate_soccer(cfg: SoccerConfig, seed: int) -> Episode:
    if cfg.team_size < 2:
        raise ValueError(f"team size must be >= 2 (goalkeeper plus one player), got {cfg.team_size}")
    rng = np.random.default_rng(seed)
    roles = soccer_roles(cfg.team_size)
    k = len(roles)
    homes = _random_homes(rng, cfg.team_size)
    agents = [AgentState(i, roles[i], homes[i]) for i in range(k - 1)]
    pos = np.vstack([homes, [[0.5, 0.5]]])
    world = WorldState(pos, roles)
    ball_vel = np.zeros(2)
    cooldown = np.zeros(k - 1, dtype=int)
    n_frames = int(round(cfg.duration_s * cfg.tick_hz))
    n_frames -= n_frames % cfg.frames_per_step

    frames = np.empty((n_frames, k, 2))
    camera = np.empty((n_frames, 4))
    for f in range(n_frames):
        frames[f] = world.positions
        camera[f] = camera_window(world.ball, cfg.window)

        actions = [decision_tree_step(a, world, rng, cfg.kick_prob, cfg.kick_power) for a in agents]
        for a, act in zip(agents, actions):
            p = world.positions[a.index]
            if act.kind == "idle":
                jitter = rng.uniform(-cfg.gk_jitter, cfg.gk_jitter, size=2)
                world.positions[a.index] = np.clip(a.home + jitter, 0.0, 1.0)
            elif act.kind == "move":
                step = act.target - p
                dist = np.linalg.norm(step)
                if dist > cfg.player_speed:
                    step *= cfg.player_speed / dist
                world.positions[a.index] = np.clip(p + step, 0.0, 1.0)
            else:
                direction = act.target - world.ball
                direction /= max(np.linalg.norm(direction), 1e-9)
                ball_vel = direction * act.power
                world.carrier = None
                cooldown[a.index] = 3
        cooldown = np.maximum(cooldown - 1, 0)

        if world.carrier is not None:
            holder = world.positions[world.carrier]
            ahead = opponent_goal(agents[world.carrier].team) - holder
            ahead /= max(np.linalg.norm(ahead), 1e-9)
            world.positions[-1] = np.clip(holder + 0.5 * cfg.contact_radius * ahead, 0.0, 1.0)
            ball_vel[:] = 0.0
        else:
            b = world.positions[-1] + ball_vel
            for axis in (0, 1):
                if b[axis] < 0.0 or b[axis] > 1.0:
                    b[axis] = -b[axis] if b[axis] < 0.0 else 2.0 - b[axis]
                    ball_vel[axis] = -ball_vel[axis]
            world.positions[-1] = np.clip(b, 0.0, 1.0)
            ball_vel *= cfg.friction
            if (b[0] <= 0.01 or b[0] >= 0.99) and abs(b[1] - 0.5) < 0.1:
                world.positions[-1] = [0.5, 0.5]
                ball_vel[:] = 0.0

        # possession: free ball goes to the nearest outfield player in reach; an
        # opponent in reach of a held ball takes it (tackle)
        d = np.linalg.norm(world.positions[:-1] - world.ball, axis=1)
        eligible = [i for i in range(k - 1) if not agents[i].is_goalkeeper and cooldown[i] == 0
                    and d[i] <= cfg.contact_radius]
        if world.carrier is None and eligible:
            world.carrier = min(eligible, key=lambda i: (d[i], i))
        elif world.carrier is not None:
            team = agents[world.carrier].team
            rivals = [i for i in eligible if agents[i].team != team]
            if rivals:
                world.carrier = min(rivals, key=lambda i: (d[i], i))
    return Episode(k, frames, roles, seed, camera)
