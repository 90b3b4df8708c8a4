"""
Context-aware variational retriever

Utterance and context are encoded separately, mapped to two vMF mean
directions, and a latent sample z = [z_x; z_c] seeds a stacked LSTM decoder
that reconstructs the gold output. Training maximizes the reconstruction term
only; the KL term is the constant bounded by 8 C_kappa.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from models import ClassEnv, DialogHistory, Example, ValidationError
from infrastructure import tensor as T
from infrastructure.base_model import BaseModel, TrainingConfig, TrainingHistory, split_dev
from infrastructure.dataset import Vocabulary, split_camel_case
from infrastructure.optim import ModelParams
from infrastructure.rnn import (
    bilstm_encode, bilstm_layers, bilstm_shapes, split_initial_state, stacked_layers,
    stacked_lstm_step, stacked_shapes,
)
from infrastructure.tensor import Tensor
from infrastructure.vmf import LatentCode, VmfParams, unit_direction, vmf_sample

logger = logging.getLogger(__name__)

Weights = Dict[str, Tensor]


@dataclass
class RetrieverConfig:
    """Retriever dimensions and training settings"""
    embedding_dim: int = 64
    hidden_dim: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 4
    latent_dim: int = 32
    kappa: float = 50.0
    dropout: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 10
    epochs: int = 20
    dev_fraction: float = 0.1
    patience: int = 3

    def __post_init__(self):
        for name in ('embedding_dim', 'hidden_dim', 'encoder_layers', 'decoder_layers'):
            if getattr(self, name) < 1:
                raise ValidationError(f"retriever {name} must be >= 1")
        if self.latent_dim < 3:
            raise ValidationError(f"latent_dim must be >= 3, got {self.latent_dim}")
        if self.kappa <= 0:
            raise ValidationError(f"kappa must be > 0, got {self.kappa}")
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


class ContextAwareRetriever(BaseModel):
    """Encoders, latent heads and reconstruction decoder over a fixed vocabulary"""

    def __init__(self, config: RetrieverConfig, vocab: Vocabulary):
        super().__init__(config)
        self.vocab = vocab

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        c = self.config
        E, H, D = c.embedding_dim, c.hidden_dim, c.latent_dim
        shapes = {
            'emb': (len(self.vocab), E),
            'head_x.w': (D, 2 * H), 'head_x.b': (D,),
            'head_c.w': (D, 2 * H), 'head_c.b': (D,),
            'init.w': (c.decoder_layers * 2 * H, 2 * D), 'init.b': (c.decoder_layers * 2 * H,),
            'out.w': (len(self.vocab), H), 'out.b': (len(self.vocab),),
        }
        shapes.update(bilstm_shapes('utt', E, H, c.encoder_layers))
        shapes.update(bilstm_shapes('sub', E, H, 1))
        shapes.update(bilstm_shapes('mem', 2 * H, H, 1))
        shapes.update(bilstm_shapes('hist', E, H, 1))
        shapes.update(stacked_shapes('dec', E, H, c.decoder_layers))
        return shapes

    def init_params(self, rng: np.random.Generator) -> ModelParams:
        return ModelParams.init_uniform(self.shapes(), rng)

    # ------------------------------------------------------------------
    # Encoders
    # ------------------------------------------------------------------

    def _embed(self, w: Weights, tokens: Sequence[str]) -> List[Tensor]:
        return [T.embedding_lookup(w['emb'], self.vocab.lookup(t)) for t in tokens]

    def encode_utterance(self, w: Weights, tokens: Sequence[str],
                         rng: Optional[np.random.Generator] = None) -> Tensor:
        """h_x: both directions at the last token of the top layer"""
        if not tokens:
            raise ValidationError("cannot encode an empty utterance")
        layers = bilstm_layers(w, 'utt', self.config.encoder_layers)
        return bilstm_encode(self._embed(w, tokens), layers, self.config.dropout, rng).last_state

    def encode_identifier(self, w: Weights, name: str,
                          rng: Optional[np.random.Generator] = None) -> Tensor:
        layers = bilstm_layers(w, 'sub', 1)
        return bilstm_encode(self._embed(w, split_camel_case(name)), layers, self.config.dropout, rng).last_state

    def encode_member(self, w: Weights, name: str, type_name: str,
                      rng: Optional[np.random.Generator] = None) -> Tensor:
        """Second step over [type vector, name vector]"""
        parts = [self.encode_identifier(w, type_name, rng), self.encode_identifier(w, name, rng)]
        return bilstm_encode(parts, bilstm_layers(w, 'mem', 1)).last_state

    def encode_context(self, w: Weights, context, rng: Optional[np.random.Generator] = None) -> Tensor:
        """h_c: mean pool over member or question vectors; zeros for an empty context"""
        vectors = []
        if isinstance(context, ClassEnv):
            vectors = [self.encode_member(w, n, t, rng) for n, t in context.variables + context.methods]
        elif isinstance(context, DialogHistory):
            layers = bilstm_layers(w, 'hist', 1)
            vectors = [
                bilstm_encode(self._embed(w, q), layers, self.config.dropout, rng).last_state
                for q in context.utterances if q
            ]
        if not vectors:
            return Tensor(np.zeros(2 * self.config.hidden_dim))
        return T.mean_pool(vectors)

    def latent_params(self, w: Weights, h_x: Tensor, h_c: Tensor) -> Tuple[Tensor, Tensor]:
        """Unit directions mu_x, mu_c: tanh of a linear layer, then L2 normalization"""
        mu_x = unit_direction(T.tanh(T.add(T.matmul(w['head_x.w'], h_x), w['head_x.b'])))
        mu_c = unit_direction(T.tanh(T.add(T.matmul(w['head_c.w'], h_c), w['head_c.b'])))
        return mu_x, mu_c

    def directions(self, w: Weights, example: Example,
                   rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
        h_x = self.encode_utterance(w, example.utterance, rng)
        h_c = self.encode_context(w, example.context, rng)
        return self.latent_params(w, h_x, h_c)

    def latent_code(self, params: ModelParams, example: Example) -> LatentCode:
        """Mean directions of an example, no sampling and no dropout"""
        w = params.bind(T.Tape(record=False))
        mu_x, mu_c = self.directions(w, example)
        return LatentCode(mu_x=mu_x.numpy(), mu_c=mu_c.numpy(), kappa=self.config.kappa)

    # ------------------------------------------------------------------
    # Decoder
    # ------------------------------------------------------------------

    def target_ids(self, tokens: Sequence[str], allow_unk: bool = True) -> List[int]:
        return self.vocab.lookup_all(tokens, allow_unk)

    def reconstruction_logprob(self, w: Weights, z: Tensor, target: Sequence[int],
                               rng: Optional[np.random.Generator] = None) -> Tensor:
        """log p(y|z) under teacher forcing over <s> y -> y </s>"""
        c = self.config
        states = split_initial_state(T.add(T.matmul(w['init.w'], z), w['init.b']),
                                     c.decoder_layers, c.hidden_dim)
        layers = stacked_layers(w, 'dec', c.decoder_layers)
        inputs = [self.vocab.bos_id] + list(target)
        outputs = list(target) + [self.vocab.eos_id]
        mask = np.ones(len(self.vocab), dtype=bool)
        total = None
        for token_in, token_out in zip(inputs, outputs):
            x = T.dropout(T.embedding_lookup(w['emb'], token_in), c.dropout, rng)
            h, states = stacked_lstm_step(layers, x, states)
            logits = T.add(T.matmul(w['out.w'], h), w['out.b'])
            step = T.log_softmax_pick(logits, mask, token_out)
            total = step if total is None else T.add(total, step)
        return total

    def example_loss(self, w: Weights, example: Example, rng: Optional[np.random.Generator]) -> Tensor:
        """-log p(y|z), z sampled once per example while training and the mean direction otherwise"""
        mu_x, mu_c = self.directions(w, example, rng)
        if rng is not None:
            kappa = self.config.kappa
            z = T.concat([vmf_sample(VmfParams(mu_x, kappa), rng), vmf_sample(VmfParams(mu_c, kappa), rng)])
        else:
            z = T.concat([mu_x, mu_c])
        return T.scale(self.reconstruction_logprob(w, z, self.target_ids(example.surface), rng), -1.0)

    def token_nll(self, params: ModelParams, examples: Sequence[Example]) -> float:
        """Mean negative log-likelihood per target token (including </s>)"""
        total, tokens = 0.0, 0
        for example in examples:
            total += self.mean_loss(params, [example])
            tokens += len(example.surface) + 1
        return total / tokens if tokens else float('nan')

    def train(self, examples: Sequence[Example], rng: np.random.Generator,
              params: Optional[ModelParams] = None) -> Tuple[ModelParams, TrainingHistory]:
        """Adam on the reconstruction objective with early stopping on a dev split"""
        supervised = [e for e in examples if e.is_supervised]
        if not supervised:
            raise ValidationError("retriever training needs supervised examples")
        training = self.config.training()
        train, dev = split_dev(supervised, training.dev_fraction, rng)
        params = params if params is not None else self.init_params(rng)
        logger.info(f"Training retriever on {len(train)} examples ({len(dev)} dev), "
                    f"{params.num_values} parameters")
        return self.fit(params, train, dev, training, rng)
