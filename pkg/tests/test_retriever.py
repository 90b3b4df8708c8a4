"""
Unit tests for the context-aware retriever and the retrieval index
"""
import numpy as np
import pytest

from models import ClassEnv, DialogHistory, Example, RetrievalMode, ValidationError
from infrastructure.dataset import build_vocab
from infrastructure.synthetic import SyntheticTaskConfig, generate_synthetic
from infrastructure.tensor import Tape, forward_backward
from infrastructure.vmf import LatentCode, c_kappa
from usecases.retriever.index import (
    RetrievalIndex, ambiguous_queries, build_index, retrieval_accuracy, retrieve,
)
from usecases.retriever.model import ContextAwareRetriever, RetrieverConfig
from tests.test_numerics import numeric_grad

E1, E2, E3 = np.eye(3)


@pytest.fixture
def config():
    return RetrieverConfig(embedding_dim=4, hidden_dim=3, encoder_layers=1, decoder_layers=1,
                           latent_dim=3, kappa=50.0, dropout=0.0, epochs=2, dev_fraction=0.0)


@pytest.fixture
def retriever(config, small_vocab):
    return ContextAwareRetriever(config, small_vocab)


@pytest.fixture
def params(retriever):
    return retriever.init_params(np.random.default_rng(0))


class TestRetrieverConfig:
    """Tests for retriever settings"""

    def test_latent_dim_lower_bound(self):
        """Test a vMF needs at least three dimensions"""
        with pytest.raises(ValidationError):
            RetrieverConfig(latent_dim=2)

    def test_kappa_positive(self):
        """Test the concentration check"""
        with pytest.raises(ValidationError):
            RetrieverConfig(kappa=0.0)


class TestContextAwareRetriever:
    """Tests for encoders, latent codes and the reconstruction loss"""

    def test_encoder_widths(self, retriever, params, by_id):
        """Test h_x and h_c are 2H wide"""
        w = params.bind(Tape(record=False))
        assert retriever.encode_utterance(w, by_id['fx-0'].utterance).shape == (6,)
        assert retriever.encode_context(w, by_id['fx-0'].context).shape == (6,)

    def test_empty_context_encodes_to_zeros(self, retriever, params):
        """Test a context without members"""
        w = params.bind(Tape(record=False))
        np.testing.assert_array_equal(retriever.encode_context(w, ClassEnv()).data, np.zeros(6))
        np.testing.assert_array_equal(retriever.encode_context(w, DialogHistory()).data, np.zeros(6))

    def test_dialog_history_encodes(self, retriever, params):
        """Test the question-history encoder"""
        w = params.bind(Tape(record=False))
        history = DialogHistory(utterances=[['who', 'is', 'it'], ['and', 'what']], entities=['adaLovelace'])
        assert retriever.encode_context(w, history).shape == (6,)

    def test_empty_utterance(self, retriever, params):
        """Test the utterance encoder rejects empty input"""
        with pytest.raises(ValidationError):
            retriever.encode_utterance(params.bind(Tape(record=False)), [])

    def test_latent_code_has_unit_halves(self, retriever, params, by_id):
        """Test both mean directions are unit vectors"""
        code = retriever.latent_code(params, by_id['fx-1'])
        assert code.dim == 3
        assert np.linalg.norm(code.mu_x) == pytest.approx(1.0)
        assert np.linalg.norm(code.mu_c) == pytest.approx(1.0)
        assert code.kappa == 50.0

    def test_latent_code_is_deterministic(self, retriever, params, by_id):
        """Test mean directions involve no sampling"""
        a = retriever.latent_code(params, by_id['fx-2'])
        b = retriever.latent_code(params, by_id['fx-2'])
        np.testing.assert_array_equal(a.vector, b.vector)

    def test_context_changes_only_the_context_half(self, retriever, params, by_id):
        """Test twins with one utterance share mu_x"""
        a = retriever.latent_code(params, by_id['fx-1'])
        b = retriever.latent_code(params, by_id['fx-2'])
        np.testing.assert_allclose(a.mu_x, b.mu_x)
        assert not np.allclose(a.mu_c, b.mu_c)

    def test_loss_is_positive(self, retriever, params, small_examples):
        """Test the reconstruction NLL"""
        supervised = [e for e in small_examples if e.is_supervised]
        assert retriever.mean_loss(params, supervised) > 0.0
        assert retriever.token_nll(params, supervised) > 0.0

    def test_sampled_loss_uses_rng(self, retriever, params, by_id):
        """Test training-time losses draw latent samples"""
        example = by_id['fx-0']
        deterministic = retriever.loss_and_grad(params, [example]).loss
        sampled = retriever.loss_and_grad(params, [example], rng=np.random.default_rng(1), train=True).loss
        assert sampled != deterministic

    def test_gradients_match_finite_differences(self, retriever, params, by_id):
        """Test backprop through encoders, heads and decoder on the mean-direction loss"""
        example = by_id['fx-0']
        tape = Tape()
        grads = forward_backward(tape, retriever.example_loss(params.bind(tape), example, None))
        value = lambda p: retriever.example_loss(p.bind(Tape(record=False)), example, None).item()
        for name in ('head_x.b', 'head_c.b', 'init.b', 'out.b'):
            np.testing.assert_allclose(grads[name], numeric_grad(value, params, name), rtol=1e-4, atol=1e-7)

    def test_train(self, retriever, small_examples):
        """Test training on supervised examples only"""
        params, history = retriever.train(small_examples, np.random.default_rng(3))
        assert len(history.train_losses) == 2
        assert params.names == retriever.init_params(np.random.default_rng(0)).names

    def test_train_needs_supervision(self, retriever, by_id):
        """Test a candidates-only training set"""
        with pytest.raises(ValidationError):
            retriever.train([by_id['fx-3']], np.random.default_rng(3))


class TestRetrievalIndex:
    """Tests for nearest-neighbour search"""

    @pytest.fixture
    def index(self):
        matrix = np.array([
            np.concatenate([E1, E1]),
            np.concatenate([E1, E2]),
            np.concatenate([E2, E1]),
        ])
        return RetrievalIndex(matrix, ['a', 'b', 'c'], kappa=50.0, dim=3)

    def test_context_aware_ranking_breaks_ties_by_id(self, index):
        """Test equal distances are ordered by id and the query is excluded"""
        neighbours = index.nearest(index.code('a'), 2, exclude='a')
        assert [n.example_id for n in neighbours] == ['b', 'c']
        assert [n.rank for n in neighbours] == [1, 2]
        assert neighbours[0].distance == pytest.approx(2.0 * c_kappa(3, 50.0))
        assert neighbours[1].distance == pytest.approx(neighbours[0].distance)

    def test_utterance_only_ignores_the_context_half(self, index):
        """Test the utterance-only distance"""
        neighbours = index.nearest(index.code('a'), 2, RetrievalMode.UTTERANCE_ONLY, exclude='a')
        assert neighbours[0].example_id == 'b'
        assert neighbours[0].distance == 0.0

    def test_self_is_nearest_without_exclusion(self, index):
        """Test a stored code is at distance zero from itself"""
        top = index.nearest(index.code('c'), 1)
        assert top[0].example_id == 'c' and top[0].distance == 0.0

    def test_k_larger_than_index(self, index):
        """Test K beyond the number of rows"""
        assert len(index.nearest(index.code('a'), 10, exclude='a')) == 2

    def test_invalid_k(self, index):
        """Test K >= 1"""
        with pytest.raises(ValidationError):
            index.nearest(index.code('a'), 0)

    def test_empty_index(self):
        """Test retrieval from nothing"""
        empty = RetrievalIndex(np.zeros((0, 6)), [], kappa=50.0, dim=3)
        with pytest.raises(ValidationError):
            empty.nearest(LatentCode(E1, E2, 50.0), 1)

    def test_mismatched_code(self, index):
        """Test queries from a differently configured retriever"""
        with pytest.raises(ValidationError):
            index.nearest(LatentCode(E1, E2, 10.0), 1)

    def test_shape_and_id_validation(self):
        """Test constructor checks"""
        with pytest.raises(ValidationError):
            RetrievalIndex(np.zeros((2, 5)), ['a', 'b'], kappa=50.0, dim=3)
        with pytest.raises(ValidationError):
            RetrievalIndex(np.zeros((2, 6)), ['a', 'a'], kappa=50.0, dim=3)
        with pytest.raises(ValidationError):
            RetrievalIndex(np.zeros((2, 6)), ['a'], kappa=50.0, dim=3)

    def test_save_load(self, index, tmp_path):
        """Test the on-disk index"""
        index.save(tmp_path / 'index' / 'index')
        loaded = RetrievalIndex.load(tmp_path / 'index' / 'index')
        assert loaded.ids == index.ids
        assert loaded.kappa == index.kappa and loaded.dim == index.dim
        np.testing.assert_array_equal(loaded.matrix, index.matrix)

    def test_load_missing(self, tmp_path):
        """Test loading an index that was never built"""
        with pytest.raises(ValidationError):
            RetrievalIndex.load(tmp_path / 'index')

    def test_load_truncated(self, index, tmp_path):
        """Test payload size check"""
        index.save(tmp_path / 'index')
        (tmp_path / 'index.bin').write_bytes(b"\x00" * 8)
        with pytest.raises(ValidationError):
            RetrievalIndex.load(tmp_path / 'index')


class TestRetrieval:
    """Tests for indexing and querying with a retriever"""

    @pytest.fixture
    def index(self, retriever, params, small_examples):
        return build_index(small_examples, retriever, params)

    def test_index_holds_supervised_examples(self, index):
        """Test candidates-only examples are not indexed"""
        assert index.ids == ['fx-0', 'fx-1', 'fx-2']
        assert 'fx-3' not in index

    def test_retrieve_excludes_the_query(self, index, retriever, params, by_id):
        """Test leave-one-out retrieval in ascending distance"""
        neighbours = retrieve(index, by_id['fx-0'], retriever, params, k=5)
        assert {n.example_id for n in neighbours} == {'fx-1', 'fx-2'}
        assert neighbours[0].distance <= neighbours[1].distance

    def test_unindexed_query(self, index, retriever, params, by_id):
        """Test a weakly supervised query retrieves every indexed example"""
        assert len(retrieve(index, by_id['fx-3'], retriever, params, k=3)) == 3

    def test_indexed_code_matches_fresh_code(self, index, retriever, params, by_id):
        """Test stored rows are the mean directions"""
        np.testing.assert_allclose(index.code('fx-1').vector, retriever.latent_code(params, by_id['fx-1']).vector)

    def test_ambiguous_queries(self, small_examples):
        """Test twins sharing an utterance with different patterns"""
        assert [e.id for e in ambiguous_queries(small_examples)] == ['fx-1', 'fx-2']

    @pytest.mark.slow
    def test_context_aware_beats_utterance_only_on_ambiguous_queries(self):
        """Test the context half lifts accuracy@1 on twins that share an utterance"""
        examples = generate_synthetic(SyntheticTaskConfig(task='code', num_examples=200, context_patterns=8,
                                                          ambiguity_rate=0.5, seed=0), id_prefix='train')
        retriever = ContextAwareRetriever(
            RetrieverConfig(embedding_dim=8, hidden_dim=8, encoder_layers=1, decoder_layers=1, latent_dim=8,
                            kappa=50.0, dropout=0.0, learning_rate=0.005, epochs=2, dev_fraction=0.0),
            build_vocab(examples))
        params, _ = retriever.train(examples, np.random.default_rng(1))
        index = build_index(examples, retriever, params)
        pool = {e.id: e for e in examples}
        queries = ambiguous_queries(examples)
        assert queries
        context_aware = retrieval_accuracy(index, queries, pool, retriever, params, RetrievalMode.CONTEXT_AWARE)
        utterance_only = retrieval_accuracy(index, queries, pool, retriever, params, RetrievalMode.UTTERANCE_ONLY)
        assert context_aware > utterance_only

    def test_retrieval_accuracy_range(self, index, retriever, params, small_examples, by_id):
        """Test accuracy@1 is a fraction"""
        accuracy = retrieval_accuracy(index, small_examples, by_id, retriever, params)
        assert 0.0 <= accuracy <= 1.0

    def test_retrieval_accuracy_needs_supervised_queries(self, index, retriever, params, by_id):
        """Test candidates-only queries cannot be scored"""
        with pytest.raises(ValidationError):
            retrieval_accuracy(index, [by_id['fx-3']], by_id, retriever, params)
