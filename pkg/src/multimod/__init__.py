"""Modular multi-modal transformer stack with a from-scratch reverse-mode
autodiff core, a task composer, and a seeded synthetic-corpus training
harness."""

from .config import TrainConfig
from .corpus import SyntheticCorpus, Vocabulary, generate_corpus
from .errors import (ConfigError, ContractError, NumericError, ShapeError,
                     VocabularyError)
from .model import MultimodalModel
from .tasks import TASK_TABLE, compose_task, forward_task, instruction_for
from .tensor import Tensor, no_grad
from .train import train

__all__ = [
    "ConfigError", "ContractError", "MultimodalModel", "NumericError",
    "ShapeError", "SyntheticCorpus", "TASK_TABLE", "Tensor", "TrainConfig",
    "Vocabulary", "VocabularyError", "compose_task", "forward_task",
    "generate_corpus", "instruction_for", "no_grad", "train",
]
