"""
Base model interface for infrastructure layer
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging
import time

import numpy as np

from models import NumericsError, ValidationError
from infrastructure.tensor import Tape, Tensor, forward_backward
from infrastructure.optim import AdamState, Grads, ModelParams, adam_step, add_grads, zeros_like

logger = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    """Optimization settings shared by every trainable model"""
    learning_rate: float = 1e-3
    batch_size: int = 10
    epochs: int = 20
    dev_fraction: float = 0.1
    patience: int = 3
    dropout: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ValidationError(f"dev_fraction must be in [0, 1), got {self.dev_fraction}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class LossResult:
    """Mean loss and mean gradients over a batch"""
    loss: float
    grads: Grads
    count: int
    metadata: Dict[str, Any] = field(default_factory=dict)



@dataclass
class TrainingHistory:
    """Per-epoch losses of a training run"""
    train_losses: List[float] = field(default_factory=list)
    dev_losses: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    wall_time: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.train_losses[-1] if self.train_losses else float('nan')


class BaseModel(ABC):
    """A differentiable model trained example by example on its own tape"""

    def __init__(self, config: Any):
        self.config = config

    @abstractmethod
    def init_params(self, rng: np.random.Generator) -> ModelParams:
        """Fresh parameters"""
        pass

    @abstractmethod
    def example_loss(self, weights: Dict[str, Tensor], example: Any,
                     rng: Optional[np.random.Generator]) -> Tensor:
        """Scalar loss of one example; rng is None when dropout is off"""
        pass

    def loss_and_grad(self, params: ModelParams, examples: Sequence[Any],
                      rng: Optional[np.random.Generator] = None, train: bool = False) -> LossResult:
        """Mean loss and exact mean gradient over examples"""
        if not examples:
            raise ValidationError("loss_and_grad needs at least one example")
        total = zeros_like(params)
        loss_sum = 0.0
        for example in examples:
            tape = Tape()
            weights = params.bind(tape)
            loss = self.example_loss(weights, example, rng if train else None)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericsError(f"non-finite loss on example {getattr(example, 'id', example)!r}")
            loss_sum += value
            add_grads(total, forward_backward(tape, loss))
        n = len(examples)
        return LossResult(
            loss=loss_sum / n,
            grads={name: g / n for name, g in total.items()},
            count=n,
        )

    def mean_loss(self, params: ModelParams, examples: Sequence[Any]) -> float:
        """Mean loss without recording a tape"""
        if not examples:
            return float('nan')
        total = 0.0
        for example in examples:
            tape = Tape(record=False)
            total += self.example_loss(params.bind(tape), example, None).item()
        return total / len(examples)

    def fit(
        self,
        params: ModelParams,
        train: Sequence[Any],
        dev: Sequence[Any],
        config: TrainingConfig,
        rng: np.random.Generator,
    ) -> Tuple[ModelParams, TrainingHistory]:
        """Adam over shuffled mini-batches with early stopping on dev loss"""
        if not train:
            raise ValidationError("cannot train on an empty dataset")
        name = type(self).__name__
        history = TrainingHistory()
        state = AdamState.for_params(params)
        best_params, best_dev = params, float('inf')
        stale = 0
        start = time.time()

        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(train))
            epoch_loss, seen = 0.0, 0
            for begin in range(0, len(order), config.batch_size):
                batch = [train[i] for i in order[begin:begin + config.batch_size]]
                result = self.loss_and_grad(params, batch, rng=rng, train=True)
                params, state = adam_step(params, result.grads, state, config.learning_rate)
                epoch_loss += result.loss * result.count
                seen += result.count
            history.train_losses.append(epoch_loss / seen)

            if dev:
                dev_loss = self.mean_loss(params, dev)
                history.dev_losses.append(dev_loss)
                logger.info(f"{name} epoch {epoch}: train_loss={epoch_loss / seen:.4f} dev_loss={dev_loss:.4f}")
                if dev_loss < best_dev:
                    best_dev, best_params, history.best_epoch = dev_loss, params, epoch
                    stale = 0
                else:
                    stale += 1
                    if stale >= config.patience:
                        logger.info(f"{name}: early stopping at epoch {epoch}, best epoch {history.best_epoch}")
                        history.stopped_early = True
                        break
            else:
                logger.info(f"{name} epoch {epoch}: train_loss={epoch_loss / seen:.4f}")
                best_params, history.best_epoch = params, epoch

        history.wall_time = time.time() - start
        return best_params, history


def split_dev(examples: Sequence[Any], dev_fraction: float,
              rng: np.random.Generator) -> Tuple[List[Any], List[Any]]:
    """Random (train, dev) split; dev is empty when the fraction rounds to zero"""
    n_dev = int(round(len(examples) * dev_fraction))
    if n_dev == 0 or n_dev >= len(examples):
        return list(examples), []
    order = rng.permutation(len(examples))
    dev_ids = set(order[:n_dev].tolist())
    train = [e for i, e in enumerate(examples) if i not in dev_ids]
    dev = [e for i, e in enumerate(examples) if i in dev_ids]
    return train, dev
