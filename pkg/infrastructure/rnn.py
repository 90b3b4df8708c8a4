"""
LSTM cells, stacked unidirectional LSTMs and bidirectional encoders
Layer 3 - Infrastructure

Gate rows of the stacked weights are ordered input, forget, candidate, output.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from models import NumericsError
from infrastructure import tensor as T
from infrastructure.tensor import Tensor

logger = logging.getLogger(__name__)

LstmState = Tuple[Tensor, Tensor]


@dataclass(frozen=True)
class LstmCellParams:
    """Stacked gate weights: w_x (4H, in), w_h (4H, H), b (4H,)"""
    w_x: Tensor
    w_h: Tensor
    b: Tensor

    def __post_init__(self):
        rows = self.w_x.shape[0]
        if rows % 4 != 0:
            raise NumericsError(f"LSTM input weights need 4*H rows, got {rows}")
        hidden = rows // 4
        if self.w_h.shape != (4 * hidden, hidden):
            raise NumericsError(f"LSTM recurrent weights {self.w_h.shape} inconsistent with hidden size {hidden}")
        if self.b.shape != (4 * hidden,):
            raise NumericsError(f"LSTM bias {self.b.shape} inconsistent with hidden size {hidden}")

    @property
    def input_size(self) -> int:
        return self.w_x.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[1]

    @classmethod
    def from_weights(cls, weights: Dict[str, Tensor], prefix: str) -> 'LstmCellParams':
        return cls(weights[f"{prefix}.w_x"], weights[f"{prefix}.w_h"], weights[f"{prefix}.b"])


def lstm_shapes(prefix: str, input_size: int, hidden_size: int) -> Dict[str, Tuple[int, ...]]:
    return {
        f"{prefix}.w_x": (4 * hidden_size, input_size),
        f"{prefix}.w_h": (4 * hidden_size, hidden_size),
        f"{prefix}.b": (4 * hidden_size,),
    }


def bilstm_shapes(prefix: str, input_size: int, hidden_size: int, layers: int) -> Dict[str, Tuple[int, ...]]:
    """Parameter shapes of a bidirectional stack; deeper layers read 2H-wide states"""
    shapes = {}
    for k in range(layers):
        width = input_size if k == 0 else 2 * hidden_size
        for direction in ('fwd', 'bwd'):
            shapes.update(lstm_shapes(f"{prefix}.l{k}.{direction}", width, hidden_size))
    return shapes


def stacked_shapes(prefix: str, input_size: int, hidden_size: int, layers: int) -> Dict[str, Tuple[int, ...]]:
    shapes = {}
    for k in range(layers):
        shapes.update(lstm_shapes(f"{prefix}.l{k}", input_size if k == 0 else hidden_size, hidden_size))
    return shapes


def bilstm_layers(weights: Dict[str, Tensor], prefix: str, layers: int) -> List[Tuple[LstmCellParams, LstmCellParams]]:
    return [
        (LstmCellParams.from_weights(weights, f"{prefix}.l{k}.fwd"),
         LstmCellParams.from_weights(weights, f"{prefix}.l{k}.bwd"))
        for k in range(layers)
    ]


def stacked_layers(weights: Dict[str, Tensor], prefix: str, layers: int) -> List[LstmCellParams]:
    return [LstmCellParams.from_weights(weights, f"{prefix}.l{k}") for k in range(layers)]


def zero_state(hidden_size: int) -> LstmState:
    return Tensor(np.zeros(hidden_size)), Tensor(np.zeros(hidden_size))


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmCellParams) -> LstmState:
    """One LSTM step; h = o * tanh(c)"""
    H = p.hidden_size
    if x.shape != (p.input_size,):
        raise NumericsError(f"LSTM input of shape {x.shape}, expected ({p.input_size},)")
    if h_prev.shape != (H,) or c_prev.shape != (H,):
        raise NumericsError(f"LSTM state of shapes {h_prev.shape}/{c_prev.shape}, expected ({H},)")
    gates = T.add(T.add(T.matmul(p.w_x, x), T.matmul(p.w_h, h_prev)), p.b)
    i = T.sigmoid(T.slice_(gates, 0, H))
    f = T.sigmoid(T.slice_(gates, H, 2 * H))
    g = T.tanh(T.slice_(gates, 2 * H, 3 * H))
    o = T.sigmoid(T.slice_(gates, 3 * H, 4 * H))
    c = T.add(T.mul(f, c_prev), T.mul(i, g))
    h = T.mul(o, T.tanh(c))
    return h, c


def run_lstm(inputs: Sequence[Tensor], p: LstmCellParams,
             initial: Optional[LstmState] = None) -> List[Tensor]:
    h, c = initial if initial is not None else zero_state(p.hidden_size)
    outputs = []
    for x in inputs:
        h, c = lstm_cell(x, h, c, p)
        outputs.append(h)
    return outputs


@dataclass
class EncoderOutput:
    """Per-token forward||backward states of the top layer"""
    states: List[Tensor]
    hidden_size: int

    @property
    def last_state(self) -> Tensor:
        """Both directions at the last token"""
        return self.states[-1]

    @property
    def both_ends(self) -> Tensor:
        """Forward state at the last token || backward state at the first token"""
        H = self.hidden_size
        return T.concat([T.slice_(self.states[-1], 0, H), T.slice_(self.states[0], H, 2 * H)])


def bilstm_encode(embeddings: Sequence[Tensor],
                  layers: Sequence[Tuple[LstmCellParams, LstmCellParams]],
                  dropout_rate: float = 0.0,
                  rng: Optional[np.random.Generator] = None) -> EncoderOutput:
    """Bidirectional stack; layer k+1 reads the concatenated states of layer k"""
    if not embeddings:
        raise NumericsError("bilstm_encode needs a non-empty sequence")
    if not layers:
        raise NumericsError("bilstm_encode needs at least one layer")
    inputs = [T.dropout(x, dropout_rate, rng) for x in embeddings]
    for fwd, bwd in layers:
        forward = run_lstm(inputs, fwd)
        backward = run_lstm(inputs[::-1], bwd)[::-1]
        inputs = [T.concat([hf, hb]) for hf, hb in zip(forward, backward)]
    return EncoderOutput(states=inputs, hidden_size=layers[-1][0].hidden_size)


def stacked_lstm_step(layers: Sequence[LstmCellParams], x: Tensor,
                      states: Sequence[LstmState]) -> Tuple[Tensor, List[LstmState]]:
    """Advance every layer by one step; returns the top-layer h"""
    if len(layers) != len(states):
        raise NumericsError(f"{len(layers)} LSTM layers but {len(states)} states")
    new_states = []
    for p, (h, c) in zip(layers, states):
        h, c = lstm_cell(x, h, c, p)
        new_states.append((h, c))
        x = h
    return x, new_states


def split_initial_state(vector: Tensor, layers: int, hidden_size: int) -> List[LstmState]:
    """Split a layers*2H vector into per-layer (h0, c0), h0 first"""
    if vector.shape != (layers * 2 * hidden_size,):
        raise NumericsError(f"initial state vector {vector.shape}, expected ({layers * 2 * hidden_size},)")
    states = []
    for k in range(layers):
        base = k * 2 * hidden_size
        states.append((T.slice_(vector, base, base + hidden_size),
                       T.slice_(vector, base + hidden_size, base + 2 * hidden_size)))
    return states
