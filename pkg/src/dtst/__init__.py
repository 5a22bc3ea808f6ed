"""Token-selective view-decoupled transformer for cross-view person
re-identification, with a self-contained float64 autodiff core and a
synthetic planted-signal benchmark."""

from .tensor import Tape, Tensor, backward
from .model import ModelConfig, TokenSequence, model_forward, init_params
from .selector import SelectorConfig, SelectorParams
from .losses import LossWeights, LossReport
from .data import GenConfig, Sample, generate_dataset, pk_batch
from .optim import ScheduleConfig, SgdState, cosine_lr, sgd_step
from .train import train_run
from .evaluate import RetrievalReport, evaluate_protocol

__all__ = [
    "Tape", "Tensor", "backward",
    "ModelConfig", "TokenSequence", "model_forward", "init_params",
    "SelectorConfig", "SelectorParams",
    "LossWeights", "LossReport",
    "GenConfig", "Sample", "generate_dataset", "pk_batch",
    "ScheduleConfig", "SgdState", "cosine_lr", "sgd_step",
    "train_run",
    "RetrievalReport", "evaluate_protocol",
]

__version__ = "0.1.0"
