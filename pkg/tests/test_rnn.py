"""
Unit tests for LSTM cells and encoders
"""
import numpy as np
import pytest

from models import NumericsError
from infrastructure import tensor as T
from infrastructure.optim import ModelParams
from infrastructure.rnn import (
    LstmCellParams, bilstm_encode, bilstm_layers, bilstm_shapes, lstm_cell, lstm_shapes,
    split_initial_state, stacked_layers, stacked_lstm_step, stacked_shapes,
)
from infrastructure.tensor import Tape, Tensor, forward_backward
from tests.test_numerics import numeric_grad


class TestLstmCell:
    """Tests for a single LSTM step"""

    @pytest.fixture
    def params(self):
        shapes = lstm_shapes('cell', 3, 2)
        shapes['x'] = (3,)
        return ModelParams.init_uniform(shapes, np.random.default_rng(5), scale=0.5)

    @staticmethod
    def loss(w):
        p = LstmCellParams.from_weights(w, 'cell')
        h, c = lstm_cell(w['x'], Tensor(np.array([0.1, -0.2])), Tensor(np.array([0.3, 0.0])), p)
        h, c = lstm_cell(w['x'], h, c, p)
        return T.add(T.sum_(h), T.sum_(T.mul(c, c)))

    def test_zero_weights_give_zero_state(self):
        """Test h = 0 when every gate pre-activation is 0 and c_prev = 0"""
        w = ModelParams.zeros(lstm_shapes('cell', 3, 2)).bind(Tape(record=False))
        h, c = lstm_cell(Tensor(np.ones(3)), Tensor(np.zeros(2)), Tensor(np.zeros(2)),
                         LstmCellParams.from_weights(w, 'cell'))
        np.testing.assert_array_equal(h.data, np.zeros(2))
        np.testing.assert_array_equal(c.data, np.zeros(2))

    def test_forget_gate_halves_memory_at_zero_weights(self):
        """Test c = sigmoid(0) * c_prev when the candidate is tanh(0)"""
        w = ModelParams.zeros(lstm_shapes('cell', 3, 2)).bind(Tape(record=False))
        _, c = lstm_cell(Tensor(np.ones(3)), Tensor(np.zeros(2)), Tensor(np.array([2.0, -4.0])),
                         LstmCellParams.from_weights(w, 'cell'))
        np.testing.assert_allclose(c.data, [1.0, -2.0])

    def test_gradients_match_finite_differences(self, params):
        """Test backprop through two recurrent steps"""
        tape = Tape()
        grads = forward_backward(tape, self.loss(params.bind(tape)))
        value = lambda p: self.loss(p.bind(Tape(record=False))).item()
        for name in params.names:
            np.testing.assert_allclose(grads[name], numeric_grad(value, params, name), rtol=1e-5, atol=1e-8)

    def test_input_shape_checked(self):
        """Test wrong input width"""
        w = ModelParams.zeros(lstm_shapes('cell', 3, 2)).bind(Tape(record=False))
        with pytest.raises(NumericsError):
            lstm_cell(Tensor(np.ones(4)), Tensor(np.zeros(2)), Tensor(np.zeros(2)),
                      LstmCellParams.from_weights(w, 'cell'))

    def test_inconsistent_weights_rejected(self):
        """Test gate weight shape validation"""
        with pytest.raises(NumericsError):
            LstmCellParams(Tensor(np.zeros((8, 3))), Tensor(np.zeros((8, 3))), Tensor(np.zeros(8)))


class TestEncoders:
    """Tests for bidirectional and stacked LSTMs"""

    @pytest.fixture
    def rng(self):
        return np.random.default_rng(11)

    def test_bilstm_shapes_and_outputs(self, rng):
        """Test state widths of a two-layer bidirectional encoder"""
        shapes = bilstm_shapes('enc', 4, 3, 2)
        assert shapes['enc.l0.fwd.w_x'] == (12, 4)
        assert shapes['enc.l1.bwd.w_x'] == (12, 6)
        w = ModelParams.init_uniform(shapes, rng).bind(Tape(record=False))
        embs = [Tensor(rng.standard_normal(4)) for _ in range(5)]
        out = bilstm_encode(embs, bilstm_layers(w, 'enc', 2))
        assert len(out.states) == 5
        assert out.last_state.shape == (6,)
        assert out.both_ends.shape == (6,)

    def test_both_ends_reads_opposite_positions(self, rng):
        """Test forward half from the last token and backward half from the first"""
        w = ModelParams.init_uniform(bilstm_shapes('enc', 2, 3, 1), rng).bind(Tape(record=False))
        out = bilstm_encode([Tensor(rng.standard_normal(2)) for _ in range(4)], bilstm_layers(w, 'enc', 1))
        np.testing.assert_array_equal(out.both_ends.data[:3], out.states[-1].data[:3])
        np.testing.assert_array_equal(out.both_ends.data[3:], out.states[0].data[3:])

    def test_empty_sequence_rejected(self, rng):
        """Test encoding nothing"""
        w = ModelParams.init_uniform(bilstm_shapes('enc', 2, 3, 1), rng).bind(Tape(record=False))
        with pytest.raises(NumericsError):
            bilstm_encode([], bilstm_layers(w, 'enc', 1))

    def test_stacked_step(self, rng):
        """Test one step of a stacked decoder seeded from a flat initial vector"""
        w = ModelParams.init_uniform(stacked_shapes('dec', 4, 3, 2), rng).bind(Tape(record=False))
        states = split_initial_state(Tensor(rng.standard_normal(12)), 2, 3)
        h, new_states = stacked_lstm_step(stacked_layers(w, 'dec', 2), Tensor(rng.standard_normal(4)), states)
        assert h.shape == (3,)
        assert len(new_states) == 2
        np.testing.assert_array_equal(h.data, new_states[-1][0].data)

    def test_initial_state_split_order(self):
        """Test h0 precedes c0 within each layer"""
        states = split_initial_state(Tensor(np.arange(8.0)), 2, 2)
        np.testing.assert_array_equal(states[0][0].data, [0.0, 1.0])
        np.testing.assert_array_equal(states[0][1].data, [2.0, 3.0])
        np.testing.assert_array_equal(states[1][1].data, [6.0, 7.0])

    def test_initial_state_wrong_size(self):
        """Test split_initial_state size check"""
        with pytest.raises(NumericsError):
            split_initial_state(Tensor(np.zeros(7)), 2, 2)
