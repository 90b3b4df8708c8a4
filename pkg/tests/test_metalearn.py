"""
Unit tests for Retrieval-MAML and spurious-candidate filtering
"""
import math
from unittest.mock import Mock

import numpy as np
import pytest

from models import Action, ValidationError
from infrastructure.optim import AdamState, ModelParams, adam_step
from usecases.meta.maml import (
    MetaConfig, MetaLearner, RetrievalSupport, filter_spurious, inner_adapt, pool_supports,
    resolve_weak_examples, sample_batch,
)
from usecases.retriever.index import Neighbour
from tests.test_numerics import Point, QuadraticModel

A = Action.apply
var = lambda i: Action.instantiate('ClassVariable', i)


def scalar(value: float) -> ModelParams:
    return ModelParams({'theta': np.array([value])})


def point(name: str, value: float) -> Point:
    return Point(name, np.array([value]))


class TestMetaConfig:
    """Tests for meta-training settings"""

    def test_zero_alpha_allowed(self):
        """Test alpha = 0 is a valid setting"""
        assert MetaConfig(alpha=0.0).alpha == 0.0

    @pytest.mark.parametrize('kwargs', [{'alpha': -0.1}, {'beta': 0.0}, {'k': 0}, {'test_batch': 0},
                                        {'inner_steps': 0}, {'iterations': 0}])
    def test_invalid(self, kwargs):
        """Test range checks"""
        with pytest.raises(ValidationError):
            MetaConfig(**kwargs)


class TestInnerAdapt:
    """Tests for the inner gradient step"""

    @pytest.fixture
    def model(self):
        return QuadraticModel(dim=1)

    def test_single_step(self, model):
        """Test theta' = theta - alpha * grad on 0.5 * theta^2"""
        theta = scalar(1.0)
        adapted, loss = inner_adapt(model, theta, [point('s', 0.0)], alpha=0.1)
        assert adapted['theta'][0] == pytest.approx(0.9)
        assert loss == pytest.approx(0.5)
        assert theta['theta'][0] == 1.0

    def test_multiple_steps(self, model):
        """Test repeated inner steps"""
        adapted, _ = inner_adapt(model, scalar(1.0), [point('s', 0.0)], alpha=0.1, steps=3)
        assert adapted['theta'][0] == pytest.approx(0.9 ** 3)

    def test_support_mean(self, model):
        """Test the inner gradient averages over the support set"""
        adapted, _ = inner_adapt(model, scalar(0.0), [point('a', 1.0), point('b', 3.0)], alpha=0.5)
        assert adapted['theta'][0] == pytest.approx(1.0)

    def test_empty_support(self, model):
        """Test adaptation needs data"""
        with pytest.raises(ValidationError):
            inner_adapt(model, scalar(1.0), [], alpha=0.1)


class TestMetaLearner:
    """Tests for the first-order outer update"""

    @pytest.fixture
    def model(self):
        return QuadraticModel(dim=1)

    def test_outer_gradient_is_taken_at_adapted_params(self, model):
        """Test the update direction follows grad at theta', applied at theta"""
        learner = MetaLearner(model, MetaConfig(alpha=0.5, beta=0.01), lambda q: [point('s', -10.0)])
        params = scalar(1.0)
        new, state, inner_loss, outer_loss, size = learner.meta_step(
            params, [point('q', 0.0)], AdamState.for_params(params))
        # theta' = 1 - 0.5 * 11 = -4.5, so the outer gradient is negative and theta grows
        assert new['theta'][0] == pytest.approx(1.01, abs=1e-9)
        assert inner_loss == pytest.approx(60.5)
        assert outer_loss == pytest.approx(0.5 * 4.5 ** 2)
        assert size == 1
        assert state.t == 1

    def test_matches_first_order_oracle(self, model):
        """Test against adam_step on the gradient at theta'"""
        learner = MetaLearner(model, MetaConfig(alpha=0.2, beta=0.05), lambda q: [point('s', 2.0)])
        params = scalar(0.5)
        state = AdamState.for_params(params)
        new, _, _, _, _ = learner.meta_step(params, [point('q', -1.0)], state)
        adapted = 0.5 - 0.2 * (0.5 - 2.0)
        expected, _ = adam_step(params, {'theta': np.array([adapted + 1.0])}, state, 0.05)
        np.testing.assert_allclose(new['theta'], expected['theta'])

    def test_zero_alpha_is_plain_adam(self, model):
        """Test alpha = 0 reduces meta-training to ordinary training"""
        learner = MetaLearner(model, MetaConfig(alpha=0.0, beta=0.05), lambda q: [point('s', 7.0)])
        params = scalar(0.5)
        batch = [point('q', -1.0), point('r', 2.0)]
        state = AdamState.for_params(params)
        new, _, inner_loss, _, _ = learner.meta_step(params, batch, state)
        expected, _ = adam_step(params, model.loss_and_grad(params, batch).grads, state, 0.05)
        np.testing.assert_allclose(new['theta'], expected['theta'])
        assert math.isnan(inner_loss)

    def test_zero_alpha_meta_train_follows_plain_adam(self, model):
        """Test 50 meta-iterations at alpha = 0 retrace a plain Adam loop step for step"""
        config = MetaConfig(alpha=0.0, beta=0.05, test_batch=2, iterations=50)
        learner = MetaLearner(model, config, lambda q: [point('s', 7.0)])
        examples = [point(f'p{i}', float(v)) for i, v in enumerate([-2.0, -0.5, 1.0, 2.5, 4.0])]
        params, _ = learner.meta_train(scalar(0.5), examples, np.random.default_rng(3))

        rng = np.random.default_rng(3)
        expected = scalar(0.5)
        state = AdamState.for_params(expected)
        for _ in range(50):
            batch = sample_batch(examples, 2, rng)
            expected, state = adam_step(expected, model.loss_and_grad(expected, batch).grads, state, 0.05)
        np.testing.assert_allclose(params['theta'], expected['theta'], rtol=0.0, atol=1e-12)

    def test_small_alpha_approaches_plain_training(self, model):
        """Test the distance to the alpha = 0 trajectory shrinks with alpha"""
        examples = [point(f'p{i}', float(v)) for i, v in enumerate([-2.0, -0.5, 1.0, 2.5, 4.0])]

        def final_theta(alpha):
            config = MetaConfig(alpha=alpha, beta=0.05, test_batch=2, iterations=20)
            learner = MetaLearner(model, config, lambda q: [point('s', 7.0)])
            params, _ = learner.meta_train(scalar(0.5), examples, np.random.default_rng(5))
            return params['theta'][0]

        baseline = final_theta(0.0)
        gaps = [abs(final_theta(alpha) - baseline) for alpha in (1e-2, 1e-4, 1e-6)]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 1e-3

    def test_empty_support_skips_inner_step(self, model, caplog):
        """Test a batch without neighbours falls back to the gradient at theta"""
        learner = MetaLearner(model, MetaConfig(alpha=0.5, beta=0.01), lambda q: [])
        params = scalar(1.0)
        new, _, inner_loss, _, size = learner.meta_step(params, [point('q', 0.0)], AdamState.for_params(params))
        assert size == 0
        assert math.isnan(inner_loss)
        assert new['theta'][0] == pytest.approx(0.99, abs=1e-9)
        assert 'Empty support set' in caplog.text

    def test_meta_train_writes_iteration_log(self, model, tmp_path):
        """Test one log line per iteration"""
        config = MetaConfig(alpha=0.1, beta=0.05, test_batch=2, iterations=4)
        learner = MetaLearner(model, config, lambda q: [point('s', 1.0)])
        examples = [point('a', 1.0), point('b', 2.0), point('c', 3.0)]
        params, history = learner.meta_train(scalar(0.0), examples, np.random.default_rng(0),
                                             log_path=tmp_path / 'meta.log')
        lines = (tmp_path / 'meta.log').read_text().splitlines()
        assert len(lines) == 4 and len(history.iterations) == 4
        assert lines[0].startswith('iteration=1 inner_loss=')
        assert 'support_size=1' in lines[-1]
        assert history.skipped == 0
        assert params['theta'][0] > 0.0

    def test_meta_train_needs_supervised_examples(self, model):
        """Test meta-training on nothing trainable"""
        learner = MetaLearner(model, MetaConfig(), lambda q: [])
        with pytest.raises(ValidationError):
            learner.meta_train(scalar(0.0), [Point('a', np.zeros(1), is_supervised=False)],
                               np.random.default_rng(0))


class TestSupports:
    """Tests for batch sampling and support pooling"""

    def test_sample_batch_is_distinct(self):
        """Test sampling without replacement"""
        examples = [point(str(i), float(i)) for i in range(10)]
        batch = sample_batch(examples, 4, np.random.default_rng(0))
        assert len({e.id for e in batch}) == 4

    def test_sample_batch_caps_at_dataset_size(self):
        """Test small datasets"""
        assert len(sample_batch([point('a', 0.0)], 10, np.random.default_rng(0))) == 1

    def test_pool_supports_deduplicates(self):
        """Test the union keeps first occurrences"""
        shared = point('s', 0.0)
        supports = {'a': [shared, point('t', 1.0)], 'b': [shared]}
        pooled = pool_supports([point('a', 0.0), point('b', 0.0)], lambda q: supports[q.id])
        assert [e.id for e in pooled] == ['s', 't']

    def test_retrieval_support_uses_the_index(self, by_id):
        """Test neighbours map back to pool examples"""
        index = Mock()
        index.__contains__ = Mock(return_value=True)
        index.nearest.return_value = [Neighbour(1, 'fx-1', 0.1), Neighbour(2, 'fx-2', 0.2)]
        support = RetrievalSupport(index, retriever=Mock(), params=None, pool=by_id, k=2)
        assert [e.id for e in support(by_id['fx-0'])] == ['fx-1', 'fx-2']
        index.code.assert_called_once_with('fx-0')
        assert index.nearest.call_args.kwargs['exclude'] == 'fx-0'


class TestSpuriousFilter:
    """Tests for choosing among candidate derivations"""

    def test_closest_to_retrieved(self):
        """Test minimum token edit distance wins"""
        candidates = [[A(0), A(5), A(8), var(0)], [A(3), A(8), var(0)]]
        assert filter_spurious(candidates, [[A(3), A(8), var(2)]]) == [A(3), A(8), var(0)]

    def test_minimum_over_retrieved_sequences(self):
        """Test the distance to the nearest of several retrieved sequences"""
        candidates = [[A(2), A(8), var(0)], [A(3), A(8), var(0)]]
        retrieved = [[A(0), A(5), A(8), var(1)], [A(2), A(8), var(0)]]
        assert filter_spurious(candidates, retrieved) == [A(2), A(8), var(0)]

    def test_shorter_candidate_wins_ties(self):
        """Test length tie-break"""
        candidates = [[A(0), A(5), A(8), var(0)], [A(3), A(8), var(0)]]
        assert filter_spurious(candidates, []) == [A(3), A(8), var(0)]

    def test_lowest_ids_win_remaining_ties(self):
        """Test action-id order tie-break"""
        candidates = [[A(3), A(8), var(0)], [A(2), A(8), var(0)]]
        assert filter_spurious(candidates, [[A(1), A(7), var(0)]]) == [A(2), A(8), var(0)]

    def test_no_candidates(self):
        """Test an empty candidate list"""
        with pytest.raises(ValidationError):
            filter_spurious([], [])

    def test_resolve_weak_examples(self, small_examples, by_id, java_grammar):
        """Test candidates-only examples get a gold sequence and surface"""
        resolved, count = resolve_weak_examples(small_examples, java_grammar, lambda q: [by_id['fx-0']])
        assert count == 1
        weak = next(e for e in resolved if e.id == 'fx-3')
        assert weak.actions == [A(0), A(5), A(8), var(0)]
        assert weak.surface == ['return', 'this', '.', 'itemCount', ';']
        assert weak.candidates == by_id['fx-3'].candidates
        assert not by_id['fx-3'].is_supervised
