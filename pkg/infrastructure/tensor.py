"""
Reverse-mode automatic differentiation over dense float64 arrays
Layer 3 - Infrastructure

Every primitive computes its value with numpy and, when at least one input is
tracked, records a backward closure on the tape shared by its inputs.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy.special import expit, logsumexp

from models import NumericsError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, int, np.ndarray, 'Tensor']
Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A float64 value, tracked when it carries a tape node id"""

    __slots__ = ('data', 'tape', 'node_id')

    def __init__(self, data, tape: Optional['Tape'] = None, node_id: int = -1):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def tracked(self) -> bool:
        return self.tape is not None and self.node_id >= 0

    def item(self) -> float:
        if self.data.size != 1:
            raise NumericsError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node_id})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)


@dataclass
class _Record:
    op: str
    inputs: Tuple[int, ...]
    output: int
    backward: Backward


class Tape:
    """Ordered record of primitive ops; inputs of op i are recorded before i"""

    def __init__(self, record: bool = True):
        self.record = record
        self._records: List[_Record] = []
        self._leaves: Dict[str, int] = {}
        self._leaf_shapes: Dict[str, Tuple[int, ...]] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return len(self._records)

    def _new_id(self) -> int:
        node_id = self._next_id
        self._next_id += 1
        return node_id

    def watch(self, name: str, array: np.ndarray) -> Tensor:
        """Register a parameter leaf"""
        if name in self._leaves:
            raise NumericsError(f"leaf '{name}' already watched")
        data = np.asarray(array, dtype=np.float64)
        _check_finite(data, f"leaf '{name}'")
        self._leaf_shapes[name] = data.shape
        if not self.record:
            self._leaves[name] = -1
            return Tensor(data)
        node_id = self._new_id()
        self._leaves[name] = node_id
        return Tensor(data, self, node_id)

    def emit(self, op: str, inputs: Sequence[Tensor], out: np.ndarray, backward: Backward) -> Tensor:
        if not self.record or not any(t.tracked for t in inputs):
            return Tensor(out)
        node_id = self._new_id()
        self._records.append(_Record(op, tuple(t.node_id for t in inputs), node_id, backward))
        return Tensor(out, self, node_id)

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """Exact gradients of a scalar w.r.t. every watched leaf"""
        if loss.size != 1:
            raise NumericsError(f"loss must be a scalar, got shape {loss.shape}")
        grads: Dict[int, np.ndarray] = {}
        if loss.tracked:
            if loss.tape is not self:
                raise NumericsError("loss was recorded on a different tape")
            grads[loss.node_id] = np.ones_like(loss.data)
            for record in reversed(self._records):
                g = grads.pop(record.output, None)
                if g is None:
                    continue
                for node_id, input_grad in zip(record.inputs, record.backward(g)):
                    if node_id < 0 or input_grad is None:
                        continue
                    if not np.all(np.isfinite(input_grad)):
                        raise NumericsError(f"non-finite gradient in backward of {record.op}")
                    if node_id in grads:
                        grads[node_id] = grads[node_id] + input_grad
                    else:
                        grads[node_id] = input_grad
        result = {}
        for name, node_id in self._leaves.items():
            g = grads.get(node_id)
            result[name] = np.zeros(self._leaf_shapes[name]) if g is None else np.asarray(g).reshape(self._leaf_shapes[name])
        return result


def forward_backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    """Gradients of a scalar loss node for every parameter leaf on the tape"""
    return tape.backward(loss)


def constant(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _check_finite(data: np.ndarray, what: str):
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by {what}")


def _tape_of(*tensors: Tensor) -> Optional[Tape]:
    tape = None
    for t in tensors:
        if t.tracked:
            if tape is not None and t.tape is not tape:
                raise NumericsError("tensors recorded on different tapes")
            tape = t.tape
    return tape


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward: Backward) -> Tensor:
    _check_finite(out, op)
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    return tape.emit(op, inputs, out, backward)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------------------
# Elementwise
# ----------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = constant(a), constant(b)
    return _emit('add', (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = constant(a), constant(b)
    return _emit('sub', (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = constant(a), constant(b)
    return _emit('mul', (a, b), a.data * b.data,
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: ArrayLike, factor: float) -> Tensor:
    a = constant(a)
    return _emit('scale', (a,), a.data * factor, lambda g: (g * factor,))


def tanh(a: ArrayLike) -> Tensor:
    a = constant(a)
    out = np.tanh(a.data)
    return _emit('tanh', (a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a: ArrayLike) -> Tensor:
    a = constant(a)
    out = expit(a.data)
    return _emit('sigmoid', (a,), out, lambda g: (g * out * (1.0 - out),))


def exp(a: ArrayLike) -> Tensor:
    a = constant(a)
    out = np.exp(a.data)
    return _emit('exp', (a,), out, lambda g: (g * out,))


def log(a: ArrayLike) -> Tensor:
    a = constant(a)
    if np.any(a.data <= 0):
        raise NumericsError("log of non-positive value")
    return _emit('log', (a,), np.log(a.data), lambda g: (g / a.data,))


# ----------------------------------------------------------------------------
# Linear algebra and reductions
# ----------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix/vector products for 1-D and 2-D operands"""
    a, b = constant(a), constant(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise NumericsError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise NumericsError(f"shape mismatch in matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.data.ndim == 2 and b.data.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        if a.data.ndim == 1 and b.data.ndim == 2:
            return b.data @ g, np.outer(a.data, g)
        if a.data.ndim == 1:
            return g * b.data, g * a.data
        return g @ b.data.T, a.data.T @ g

    return _emit('matmul', (a, b), out, backward)


def dot(a: ArrayLike, b: ArrayLike) -> Tensor:
    return matmul(a, b)


def sum_(a: ArrayLike) -> Tensor:
    a = constant(a)
    return _emit('sum', (a,), np.asarray(a.data.sum()), lambda g: (np.full(a.shape, float(g)),))


def concat(parts: Sequence[ArrayLike]) -> Tensor:
    """Concatenate 1-D tensors"""
    parts = [constant(p) for p in parts]
    if not parts:
        raise NumericsError("concat of an empty list")
    if any(p.data.ndim != 1 for p in parts):
        raise NumericsError("concat expects 1-D tensors")
    bounds = np.cumsum([0] + [p.size for p in parts])

    def backward(g):
        return [g[bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return _emit('concat', parts, np.concatenate([p.data for p in parts]), backward)


def slice_(a: ArrayLike, start: int, stop: int) -> Tensor:
    a = constant(a)

    def backward(g):
        full = np.zeros(a.shape)
        full[start:stop] = g
        return (full,)

    return _emit('slice', (a,), a.data[start:stop], backward)


def mean_pool(parts: Sequence[ArrayLike]) -> Tensor:
    """Elementwise mean of equally shaped tensors"""
    parts = [constant(p) for p in parts]
    if not parts:
        raise NumericsError("mean_pool of an empty list")
    n = len(parts)
    out = np.mean([p.data for p in parts], axis=0)
    return _emit('mean_pool', parts, out, lambda g: [g / n] * n)


def embedding_lookup(table: ArrayLike, index: int) -> Tensor:
    table = constant(table)
    if not 0 <= index < table.shape[0]:
        raise NumericsError(f"embedding index {index} out of range {table.shape[0]}")

    def backward(g):
        full = np.zeros(table.shape)
        full[index] = g
        return (full,)

    return _emit('embedding', (table,), table.data[index], backward)


def pick(a: ArrayLike, index: int) -> Tensor:
    """Scalar element of a 1-D tensor"""
    a = constant(a)

    def backward(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _emit('pick', (a,), np.asarray(a.data[index]), backward)


# ----------------------------------------------------------------------------
# Distributions over legitimate entries
# ----------------------------------------------------------------------------

def _as_mask(mask, n: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise NumericsError(f"mask shape {mask.shape} does not match logits ({n},)")
    if not mask.any():
        raise NumericsError("softmax over an all-masked input")
    return mask


def softmax_masked(logits: ArrayLike, mask) -> Tensor:
    """Softmax restricted to unmasked entries; masked entries are exactly 0"""
    logits = constant(logits)
    mask = _as_mask(mask, logits.size)
    z = logits.data[mask]
    e = np.exp(z - z.max())
    probs = np.zeros(logits.shape)
    probs[mask] = e / e.sum()

    def backward(g):
        return (probs * (g - np.dot(probs, g)),)

    return _emit('softmax_masked', (logits,), probs, backward)


def log_softmax_pick(logits: ArrayLike, mask, index: int) -> Tensor:
    """log softmax_masked(logits, mask)[index] as a scalar"""
    logits = constant(logits)
    mask = _as_mask(mask, logits.size)
    if not mask[index]:
        raise NumericsError(f"index {index} is masked")
    lse = logsumexp(logits.data[mask])
    probs = np.zeros(logits.shape)
    probs[mask] = np.exp(logits.data[mask] - lse)

    def backward(g):
        grad = -probs * g
        grad[index] += g
        return (grad,)

    return _emit('log_softmax_pick', (logits,), np.asarray(logits.data[index] - lse), backward)


# ----------------------------------------------------------------------------
# Geometry
# ----------------------------------------------------------------------------

def l2_normalize(a: ArrayLike, eps: float = 1e-12) -> Tensor:
    a = constant(a)
    norm = float(np.linalg.norm(a.data))
    denom = norm + eps
    out = a.data / denom

    def backward(g):
        if norm == 0.0:
            return (g / denom,)
        return (g / denom - a.data * (np.dot(a.data, g) / (denom * denom * norm)),)

    return _emit('l2_normalize', (a,), out, backward)


def householder_reflect(u: ArrayLike, x: ArrayLike) -> Tensor:
    """(I - 2 u u^T) x for a unit vector u"""
    u, x = constant(u), constant(x)
    ux = float(np.dot(u.data, x.data))
    out = x.data - 2.0 * ux * u.data

    def backward(g):
        ug = float(np.dot(u.data, g))
        return -2.0 * (ux * g + ug * x.data), g - 2.0 * ug * u.data

    return _emit('householder', (u, x), out, backward)


def dropout(a: ArrayLike, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no rng is given"""
    a = constant(a)
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, keep)
