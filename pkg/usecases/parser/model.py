"""
Sequence-to-action parser

An utterance encoder initializes a parent-feeding LSTM decoder that emits
grammar actions. At every step only the legitimate actions of the frontier
symbol are scored; an instantiable category is filled by scoring the constants
the context provides against their name-subword encodings.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from models import Action, DerivationError, Example, ParseResult, RolloutStatus, ValidationError
from infrastructure import tensor as T
from infrastructure.base_model import BaseModel, TrainingConfig, TrainingHistory, split_dev
from infrastructure.dataset import Vocabulary, split_camel_case
from infrastructure.grammar import DerivationState, FrontierEntry, Grammar, ast_to_tokens
from infrastructure.optim import ModelParams
from infrastructure.rnn import (
    EncoderOutput, LstmCellParams, bilstm_encode, bilstm_layers, bilstm_shapes, lstm_cell, lstm_shapes,
)
from infrastructure.tensor import Tensor

logger = logging.getLogger(__name__)

Weights = Dict[str, Tensor]


@dataclass
class ParserConfig:
    """Parser dimensions and training settings"""
    embedding_dim: int = 64
    hidden_dim: int = 64
    encoder_layers: int = 1
    decoder_dim: int = 128
    node_dim: int = 32
    dropout: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 10
    epochs: int = 20
    dev_fraction: float = 0.1
    patience: int = 3

    def __post_init__(self):
        for name in ('embedding_dim', 'hidden_dim', 'encoder_layers', 'decoder_dim', 'node_dim'):
            if getattr(self, name) < 1:
                raise ValidationError(f"parser {name} must be >= 1")
        self.training()

    def training(self) -> TrainingConfig:
        return TrainingConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            dev_fraction=self.dev_fraction,
            patience=self.patience,
            dropout=self.dropout,
        )


@dataclass
class DecoderStep:
    """Decoder LSTM state after a step; `h` is s_t"""
    h: Tensor
    c: Tensor


@dataclass
class ParserEncoding:
    encoder: EncoderOutput
    initial: DecoderStep
    constants: Dict[str, List[Tensor]] = field(default_factory=dict)
    constant_names: Dict[str, List[str]] = field(default_factory=dict)


class Seq2ActionParser(BaseModel):
    """Grammar-constrained decoder over a fixed grammar and vocabulary"""

    def __init__(self, config: ParserConfig, vocab: Vocabulary, grammar: Grammar):
        super().__init__(config)
        self.vocab = vocab
        self.grammar = grammar
        self.symbols: List[str] = list(grammar.nonterminals) + list(grammar.category_names)
        self._symbol_ids = {s: i for i, s in enumerate(self.symbols)}

    @property
    def input_size(self) -> int:
        """[n_t; y_{t-1}; p_{n_t}; s_{n_t}]"""
        c = self.config
        return c.node_dim + 2 * c.hidden_dim + 2 * c.hidden_dim + c.decoder_dim

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        c = self.config
        E, H, Hd = c.embedding_dim, c.hidden_dim, c.decoder_dim
        shapes = {
            'emb': (len(self.vocab), E),
            'node_emb': (len(self.symbols), c.node_dim),
            'act_emb': (self.grammar.num_actions, 2 * H),
            'init.w': (2 * Hd, 2 * H), 'init.b': (2 * Hd,),
            'start.y': (2 * H,), 'start.p': (2 * H,), 'start.s': (Hd,),
            'act.w': (self.grammar.num_actions, Hd),
            'inst.w': (2 * H, Hd),
        }
        shapes.update(bilstm_shapes('enc', E, H, c.encoder_layers))
        shapes.update(bilstm_shapes('sub', E, H, 1))
        shapes.update(lstm_shapes('dec', self.input_size, Hd))
        return shapes

    def init_params(self, rng: np.random.Generator) -> ModelParams:
        return ModelParams.init_uniform(self.shapes(), rng)

    # ------------------------------------------------------------------
    # Encoding
    # ------------------------------------------------------------------

    def _embed(self, w: Weights, tokens: Sequence[str]) -> List[Tensor]:
        return [T.embedding_lookup(w['emb'], self.vocab.lookup(t)) for t in tokens]

    def encode_constant(self, w: Weights, name: str, rng: Optional[np.random.Generator] = None) -> Tensor:
        """v_m: both ends of the name-subword encoder"""
        layers = bilstm_layers(w, 'sub', 1)
        return bilstm_encode(self._embed(w, split_camel_case(name)), layers, self.config.dropout, rng).both_ends

    def parser_encode(self, w: Weights, example: Example,
                      rng: Optional[np.random.Generator] = None) -> ParserEncoding:
        """Encoder states, decoder initial state and constant encodings of one example"""
        if not example.utterance:
            raise ValidationError(f"example {example.id}: empty utterance")
        layers = bilstm_layers(w, 'enc', self.config.encoder_layers)
        encoder = bilstm_encode(self._embed(w, example.utterance), layers, self.config.dropout, rng)
        init = T.add(T.matmul(w['init.w'], encoder.both_ends), w['init.b'])
        Hd = self.config.decoder_dim
        initial = DecoderStep(h=T.slice_(init, 0, Hd), c=T.slice_(init, Hd, 2 * Hd))
        names = self.grammar.constants_for(example.context)
        return ParserEncoding(encoder=encoder, initial=initial, constant_names=names)

    def _constants(self, w: Weights, encoding: ParserEncoding, category: str,
                   rng: Optional[np.random.Generator]) -> List[Tensor]:
        if category not in encoding.constants:
            encoding.constants[category] = [
                self.encode_constant(w, name, rng) for name in encoding.constant_names.get(category, [])
            ]
        return encoding.constants[category]

    # ------------------------------------------------------------------
    # Decoding
    # ------------------------------------------------------------------

    def decoder_step(self, w: Weights, prev: DecoderStep, symbol: str, y_prev: Tensor,
                     parent: Tensor, parent_state: Tensor,
                     rng: Optional[np.random.Generator] = None) -> DecoderStep:
        """s_t = LSTM(s_{t-1}, [n_t; y_{t-1}; p_{n_t}; s_{n_t}])"""
        n_t = T.embedding_lookup(w['node_emb'], self._symbol_ids[symbol])
        x = T.dropout(T.concat([n_t, y_prev, parent, parent_state]), self.config.dropout, rng)
        h, c = lstm_cell(x, prev.h, prev.c, LstmCellParams.from_weights(w, 'dec'))
        return DecoderStep(h=h, c=c)

    def _parent_inputs(self, w: Weights, entry: FrontierEntry) -> Tuple[Tensor, Tensor]:
        if entry.parent_action is None:
            return w['start.p'], w['start.s']
        parent = T.embedding_lookup(w['act_emb'], self.grammar.action_index(entry.parent_action))
        return parent, entry.parent_state

    def _action_mask(self, legal: Sequence[Action]) -> np.ndarray:
        mask = np.zeros(self.grammar.num_actions, dtype=bool)
        for action in legal:
            mask[self.grammar.action_index(action)] = True
        return mask

    def action_logits(self, w: Weights, s_t: Tensor) -> Tensor:
        return T.matmul(w['act.w'], s_t)

    def action_distribution(self, w: Weights, s_t: Tensor, legal: Sequence[Action]) -> Tensor:
        """Probabilities over the action id space; zero outside the legitimate set"""
        if not legal:
            raise ValidationError("empty legitimate action set")
        return T.softmax_masked(self.action_logits(w, s_t), self._action_mask(legal))

    def instantiate_scores(self, w: Weights, s_t: Tensor, constants: Sequence[Tensor]) -> Tensor:
        if not constants:
            raise ValidationError("category has no constants in this context")
        query = T.tanh(T.matmul(w['inst.w'], s_t))
        return T.concat([T.dot(v_m, query) for v_m in constants])

    def instantiate_distribution(self, w: Weights, s_t: Tensor, constants: Sequence[Tensor]) -> Tensor:
        """softmax over constants of v_m . tanh(W s_t)"""
        scores = self.instantiate_scores(w, s_t, constants)
        return T.softmax_masked(scores, np.ones(scores.size, dtype=bool))

    def _y_for(self, w: Weights, action: Action, encoding: ParserEncoding,
               rng: Optional[np.random.Generator]) -> Tensor:
        if action.is_apply:
            return T.embedding_lookup(w['act_emb'], self.grammar.action_index(action))
        return self._constants(w, encoding, action.category, rng)[action.constant]

    # ------------------------------------------------------------------
    # Loss and greedy decoding
    # ------------------------------------------------------------------

    def seq2action_loss(self, w: Weights, example: Example, actions: Sequence[Action],
                        rng: Optional[np.random.Generator] = None) -> Tensor:
        """Teacher-forced NLL of an action sequence"""
        encoding = self.parser_encode(w, example, rng)
        state = DerivationState.initial(self.grammar, encoding.constant_names)
        step = encoding.initial
        y_prev = w['start.y']
        total = Tensor(np.asarray(0.0))
        for t, action in enumerate(actions):
            if state.is_complete or not state.is_legitimate(action):
                state.apply(action)  # raises with the offending index
            entry = state.top
            parent, parent_state = self._parent_inputs(w, entry)
            step = self.decoder_step(w, step, entry.symbol, y_prev, parent, parent_state, rng)
            if action.is_apply:
                mask = self._action_mask(state.legitimate_actions())
                logp = T.log_softmax_pick(self.action_logits(w, step.h), mask, self.grammar.action_index(action))
            else:
                constants = self._constants(w, encoding, action.category, rng)
                scores = self.instantiate_scores(w, step.h, constants)
                logp = T.log_softmax_pick(scores, np.ones(scores.size, dtype=bool), action.constant)
            total = T.sub(total, logp)
            state = state.apply(action, state_handle=step.h)
            y_prev = self._y_for(w, action, encoding, rng)
        if not state.is_complete:
            raise DerivationError("incomplete derivation", len(actions))
        return total

    def example_loss(self, w: Weights, example: Example, rng: Optional[np.random.Generator]) -> Tensor:
        if not example.is_supervised:
            raise ValidationError(f"example {example.id} has no resolved action sequence")
        return self.seq2action_loss(w, example, example.actions, rng)

    def parse_greedy(self, params: ModelParams, example: Example, max_actions: int) -> ParseResult:
        """Argmax rollout over legitimate actions; ties go to the lowest action id"""
        w = params.bind(T.Tape(record=False))
        encoding = self.parser_encode(w, example)
        state = DerivationState.initial(self.grammar, encoding.constant_names)
        step = encoding.initial
        y_prev = w['start.y']
        log_prob = 0.0
        step_probs: List[float] = []
        legal_counts: List[int] = []

        while not state.is_complete:
            if len(state.actions) >= max_actions:
                logger.debug(f"{example.id}: rollout hit max_actions={max_actions}")
                return self._failed(state, log_prob, step_probs, legal_counts)
            entry = state.top
            parent, parent_state = self._parent_inputs(w, entry)
            step = self.decoder_step(w, step, entry.symbol, y_prev, parent, parent_state)
            legal = state.legitimate_actions()
            if not legal:
                logger.debug(f"{example.id}: no legitimate action for '{entry.symbol}'")
                return self._failed(state, log_prob, step_probs, legal_counts)
            if self.grammar.is_category(entry.symbol):
                probs = self.instantiate_distribution(w, step.h, self._constants(w, encoding, entry.symbol, None))
                best = int(np.argmax(probs.data))
                action = Action.instantiate(entry.symbol, best)
            else:
                probs = self.action_distribution(w, step.h, legal)
                best = int(np.argmax(probs.data))
                action = Action.apply(best)
            p = float(probs.data[best])
            step_probs.append(p)
            legal_counts.append(len(legal))
            log_prob += math.log(p) if p > 0 else float('-inf')
            state = state.apply(action, state_handle=step.h)
            y_prev = self._y_for(w, action, encoding, None)

        return ParseResult(
            actions=list(state.actions),
            tokens=ast_to_tokens(state.ast()),
            status=RolloutStatus.OK,
            log_prob=log_prob,
            step_probs=step_probs,
            legal_counts=legal_counts,
        )

    @staticmethod
    def _failed(state: DerivationState, log_prob: float, step_probs: List[float],
                legal_counts: List[int]) -> ParseResult:
        return ParseResult(
            actions=list(state.actions),
            tokens=[],
            status=RolloutStatus.FAILED,
            log_prob=log_prob,
            step_probs=step_probs,
            legal_counts=legal_counts,
        )

    def train(self, examples: Sequence[Example], rng: np.random.Generator,
              params: Optional[ModelParams] = None) -> Tuple[ModelParams, TrainingHistory]:
        """Plain supervised training on examples with a gold sequence"""
        supervised = [e for e in examples if e.is_supervised]
        if not supervised:
            raise ValidationError("parser training needs examples with action sequences")
        if len(supervised) < len(examples):
            logger.warning(f"Skipping {len(examples) - len(supervised)} examples without a resolved sequence")
        training = self.config.training()
        train, dev = split_dev(supervised, training.dev_fraction, rng)
        params = params if params is not None else self.init_params(rng)
        logger.info(f"Training parser on {len(train)} examples ({len(dev)} dev), {params.num_values} parameters")
        return self.fit(params, train, dev, training, rng)
