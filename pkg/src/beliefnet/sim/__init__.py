from .episode import (
    Episode,
    TrajectoryFormatError,
    TrajectorySet,
    load_basketball,
    read_jsonl,
    write_jsonl,
)
from .soccer import SoccerConfig, camera_window, decision_tree_step, simulate_soccer
from .synthetic import SynthConfig, gen_synthetic

__all__ = [
    "Episode", "TrajectoryFormatError", "TrajectorySet", "load_basketball", "read_jsonl",
    "write_jsonl", "SoccerConfig", "camera_window", "decision_tree_step", "simulate_soccer",
    "SynthConfig", "gen_synthetic",
]
