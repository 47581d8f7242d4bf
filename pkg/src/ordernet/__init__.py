"""OrderNet: learning to order unordered sets."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DatasetError, OrderingExample, read_jsonl, write_jsonl
from .inference import beam_search, greedy_decode, sequence_log_prob
from .kernels import BACKEND
from .model import ConfigError, InvalidPrefixError, ModelConfig, OrderNet, SetTooSmallError, parameter_count
from .trainer import TrainConfig, TrainReport, TrainingDiverged, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CheckpointError",
    "ConfigError",
    "DatasetError",
    "InvalidPrefixError",
    "ModelConfig",
    "OrderNet",
    "OrderingExample",
    "SetTooSmallError",
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "beam_search",
    "greedy_decode",
    "load_checkpoint",
    "parameter_count",
    "read_jsonl",
    "save_checkpoint",
    "sequence_log_prob",
    "train",
    "write_jsonl",
]
