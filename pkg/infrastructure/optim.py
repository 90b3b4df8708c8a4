"""
Named parameter collections and the Adam optimizer
"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Tuple
import logging

import numpy as np

from models import NumericsError, ValidationError
from infrastructure.tensor import Tape, Tensor

logger = logging.getLogger(__name__)

Grads = Dict[str, np.ndarray]

INIT_SCALE = 0.08


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64)
    out.setflags(write=False)
    return out


class ModelParams:
    """Immutable, name-sorted collection of learnable float64 arrays"""

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self._arrays: Dict[str, np.ndarray] = {
            name: _frozen(arrays[name]) for name in sorted(arrays)
        }
        for name, array in self._arrays.items():
            if not np.all(np.isfinite(array)):
                raise NumericsError(f"parameter '{name}' holds non-finite values")

    @classmethod
    def init_uniform(cls, shapes: Mapping[str, Tuple[int, ...]], rng: np.random.Generator,
                     scale: float = INIT_SCALE) -> 'ModelParams':
        """Uniform init in [-scale, scale], drawn in sorted name order"""
        return cls({name: rng.uniform(-scale, scale, size=shapes[name]) for name in sorted(shapes)})

    @classmethod
    def zeros(cls, shapes: Mapping[str, Tuple[int, ...]]) -> 'ModelParams':
        return cls({name: np.zeros(shape) for name, shape in shapes.items()})

    @property
    def names(self) -> List[str]:
        return list(self._arrays)

    @property
    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: a.shape for name, a in self._arrays.items()}

    @property
    def num_values(self) -> int:
        return int(sum(a.size for a in self._arrays.values()))

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def clone(self) -> 'ModelParams':
        return ModelParams({name: a.copy() for name, a in self._arrays.items()})

    def replace(self, **arrays: np.ndarray) -> 'ModelParams':
        merged = dict(self._arrays)
        merged.update(arrays)
        return ModelParams(merged)

    def axpy(self, alpha: float, grads: Mapping[str, np.ndarray]) -> 'ModelParams':
        """New params self + alpha * grads; names missing from grads are copied unchanged"""
        updated = {}
        for name, array in self._arrays.items():
            g = grads.get(name)
            if g is None:
                updated[name] = array
                continue
            if np.shape(g) != array.shape:
                raise NumericsError(f"gradient shape {np.shape(g)} does not match parameter '{name}' {array.shape}")
            updated[name] = array + alpha * np.asarray(g)
        return ModelParams(updated)

    def bind(self, tape: Tape) -> Dict[str, Tensor]:
        """Watch every array as a leaf of the tape"""
        return {name: tape.watch(name, array) for name, array in self._arrays.items()}

    def allclose(self, other: 'ModelParams', atol: float = 0.0) -> bool:
        if self.names != other.names:
            return False
        return all(np.allclose(self[n], other[n], rtol=0.0, atol=atol) for n in self.names)


def zeros_like(params: ModelParams) -> Grads:
    return {name: np.zeros(a.shape) for name, a in params.items()}


def add_grads(total: Grads, grads: Mapping[str, np.ndarray], weight: float = 1.0) -> Grads:
    """Accumulate weight * grads into total (in place) and return it"""
    for name, g in grads.items():
        if name in total:
            total[name] = total[name] + weight * g
        else:
            total[name] = weight * np.asarray(g)
    return total


def grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


@dataclass
class AdamState:
    """First/second moments per parameter and the step counter"""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> 'AdamState':
        return cls(m=zeros_like(params), v=zeros_like(params), t=0)


def adam_step(
    params: ModelParams,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns new params and a new state"""
    if lr <= 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    unknown = set(grads) - set(params.names)
    if unknown:
        raise NumericsError(f"gradients for unknown parameters: {sorted(unknown)}")

    t = state.t + 1
    m_new, v_new, updated = {}, {}, {}
    for name, theta in params.items():
        g = np.asarray(grads.get(name, np.zeros(theta.shape)), dtype=np.float64)
        if g.shape != theta.shape:
            raise NumericsError(f"gradient shape {g.shape} does not match parameter '{name}' {theta.shape}")
        m_prev = state.m.get(name, np.zeros(theta.shape))
        v_prev = state.v.get(name, np.zeros(theta.shape))
        if m_prev.shape != theta.shape or v_prev.shape != theta.shape:
            raise NumericsError(f"optimizer state shape mismatch for '{name}'")
        m = beta1 * m_prev + (1.0 - beta1) * g
        v = beta2 * v_prev + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        updated[name] = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[name] = m
        v_new[name] = v

    return ModelParams(updated), AdamState(m=m_new, v=v_new, t=t)
