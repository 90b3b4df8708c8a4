"""Infrastructure package: numerics, sequence models, vMF, grammars, data and metrics"""

from .tensor import Tape, Tensor, forward_backward
from .optim import AdamState, ModelParams, adam_step
from .base_model import BaseModel, LossResult, TrainingConfig

__all__ = [
    'Tape',
    'Tensor',
    'forward_backward',
    'AdamState',
    'ModelParams',
    'adam_step',
    'BaseModel',
    'LossResult',
    'TrainingConfig',
]
