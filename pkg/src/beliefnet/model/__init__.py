from .layers import (
    embed_cells,
    encode_frames,
    encode_posterior,
    fuse_decode,
    graph_message_pass,
    prior_step,
    recurrence,
)
from .params import VARIANTS, ModelConfig, ModelParams, init_params
from .rollout import BeliefSequence, RolloutError, rollout, sample_cells

__all__ = [
    "embed_cells", "encode_frames", "encode_posterior", "fuse_decode", "graph_message_pass",
    "prior_step", "recurrence", "VARIANTS", "ModelConfig", "ModelParams", "init_params",
    "BeliefSequence", "RolloutError", "rollout", "sample_cells",
]
