"""Episode containers and the trajectory JSONL wire format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class TrajectoryFormatError(ValueError):
    pass


@dataclass
class Episode:
    """Ground-truth positions of ``k`` agents over ``frames.shape[0]`` frames.

    ``frames`` is (F, K, 2) in normalized field coordinates. Roles are
    ``"player:<team>:<index>"``, ``"goalkeeper:<team>"`` or ``"ball"``.
    ``camera`` is an optional (F, 4) array of ``[x0, y0, x1, y1]`` rectangles.
    """

    k: int
    frames: np.ndarray
    roles: list[str]
    seed: int = 0
    camera: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (self.k, 2):
            raise TrajectoryFormatError(f"frames must be (F, {self.k}, 2), got {self.frames.shape}")
        if len(self.roles) != self.k:
            raise TrajectoryFormatError(f"{len(self.roles)} roles for {self.k} agents")
        if self.camera is not None:
            self.camera = np.asarray(self.camera, dtype=np.float64).reshape(-1, 4)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def ball_index(self) -> int | None:
        return self.roles.index("ball") if "ball" in self.roles else None

    def to_json(self) -> str:
        obj = {
            "k": self.k,
            "roles": list(self.roles),
            "frames": self.frames.tolist(),
            "seed": int(self.seed),
        }
        if self.camera is not None:
            obj["camera"] = self.camera.tolist()
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_obj(cls, obj: dict) -> "Episode":
        try:
            return cls(
                k=int(obj["k"]),
                frames=np.asarray(obj["frames"], dtype=np.float64),
                roles=[str(r) for r in obj["roles"]],
                seed=int(obj.get("seed", 0)),
                camera=obj.get("camera"),
            )
        except KeyError as err:
            raise TrajectoryFormatError(f"missing field {err}") from None


@dataclass
class TrajectorySet:
    episodes: list[Episode] = field(default_factory=list)
    split: str = "train"
    provenance: str = "synthetic"

    def __post_init__(self):
        if self.episodes:
            ks = {e.k for e in self.episodes}
            fs = {e.num_frames for e in self.episodes}
            if len(ks) > 1 or len(fs) > 1:
                raise TrajectoryFormatError(f"non-uniform set: K in {ks}, frame counts in {fs}")

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self):
        return iter(self.episodes)

    @property
    def k(self) -> int:
        return self.episodes[0].k if self.episodes else 0

    @property
    def roles(self) -> list[str]:
        return self.episodes[0].roles if self.episodes else []

    def split_at(self, n_train: int) -> tuple["TrajectorySet", "TrajectorySet"]:
        return (TrajectorySet(self.episodes[:n_train], "train", self.provenance),
                TrajectorySet(self.episodes[n_train:], "test", self.provenance))


def write_jsonl(path, episodes) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ep in episodes:
            fh.write(ep.to_json())
            fh.write("\n")


def _check_range(ep: Episode, where: str) -> None:
    bad = np.argwhere((ep.frames < 0.0) | (ep.frames > 1.0))
    if bad.size:
        f, a, _ = bad[0]
        raise TrajectoryFormatError(
            f"{where}, frame {f}: agent {a} coordinate {ep.frames[f, a].tolist()} outside [0,1]")


def read_jsonl(path, split: str = "train", provenance: str = "loaded") -> TrajectorySet:
    """Read any file in the trajectory wire format, validating coordinate ranges."""
    episodes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                ep = Episode.from_obj(json.loads(line))
            except (json.JSONDecodeError, TrajectoryFormatError, TypeError, ValueError) as err:
                raise TrajectoryFormatError(f"{path}:{lineno}: {err}") from None
            _check_range(ep, f"{path}:{lineno} (episode {len(episodes)})")
            episodes.append(ep)
    return TrajectorySet(episodes, split, provenance)


BASKETBALL_FRAMES = 50


def load_basketball(path, court: tuple[float, float] | None = None, window: int = BASKETBALL_FRAMES,
                    split: str = "train") -> TrajectorySet:
    """Load basketball episodes, keeping the offense (team 0) and the ball.

    ``court`` gives (length, width) in source units; coordinates are divided
    by it before range checking. Sources longer than ``window`` frames are
    cut to a random window seeded by the episode seed.
    """
    path = Path(path)
    episodes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raw = Episode.from_obj(json.loads(line))
            except (json.JSONDecodeError, TrajectoryFormatError, TypeError, ValueError) as err:
                raise TrajectoryFormatError(f"{path}:{lineno}: {err}") from None
            keep = [i for i, r in enumerate(raw.roles) if r == "ball" or r.startswith("player:0:")
                    or r.startswith("offense")]
            frames = raw.frames[:, keep]
            if court is not None:
                frames = frames / np.asarray(court, dtype=np.float64)
            if frames.shape[0] < window:
                raise TrajectoryFormatError(
                    f"{path}:{lineno}: episode has {frames.shape[0]} frames, need {window}")
            if frames.shape[0] > window:
                start = np.random.default_rng(raw.seed).integers(0, frames.shape[0] - window + 1)
                frames = frames[start:start + window]
            ep = Episode(len(keep), frames, [raw.roles[i] for i in keep], raw.seed)
            _check_range(ep, f"{path}:{lineno} (episode {len(episodes)})")
            episodes.append(ep)
    return TrajectorySet(episodes, split, "loaded")
