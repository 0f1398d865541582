"""Training engine: turn-based pipelined SGD and its barrier baseline."""

from .barrier import BarrierRank
from .checkpoint import load_model, load_model_bytes, save_model, serialize_model
from .config import TrainConfig
from .layout import SEG_GRAD, SEG_MODEL, SEG_WORK, SegmentLayout
from .pipelined import PipelinedRank
from .runtime import RankResult
from .sgd import batch_indices, master_update, sequential_sgd, tree_reduce

__all__ = [
    "BarrierRank",
    "PipelinedRank",
    "RankResult",
    "SEG_GRAD",
    "SEG_MODEL",
    "SEG_WORK",
    "SegmentLayout",
    "TrainConfig",
    "batch_indices",
    "load_model",
    "load_model_bytes",
    "master_update",
    "save_model",
    "sequential_sgd",
    "serialize_model",
    "tree_reduce",
]
