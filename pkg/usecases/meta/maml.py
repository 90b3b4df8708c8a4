"""
Retrieval-MAML: first-order meta-learning over retrieved support sets, test-time
adaptation and the edit-distance filter for spurious action sequences
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union
import logging
import math
import time

import numpy as np

from models import Action, Example, ParseResult, RetrievalMode, ValidationError
from infrastructure.base_model import BaseModel
from infrastructure.grammar import Grammar, actions_to_ast, ast_to_tokens
from infrastructure.metrics import edit_distance
from infrastructure.optim import AdamState, ModelParams, adam_step
from usecases.retriever.index import RetrievalIndex
from usecases.retriever.model import ContextAwareRetriever

logger = logging.getLogger(__name__)

SupportFn = Callable[[Example], List[Example]]


@dataclass
class MetaConfig:
    """Step sizes, support size and batch size of meta-training"""
    alpha: float = 0.001
    beta: float = 0.0002
    k: int = 4
    test_batch: int = 10
    inner_steps: int = 1
    iterations: int = 200

    def __post_init__(self):
        # alpha == 0 is accepted: it turns meta-training into plain training
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta <= 0:
            raise ValidationError(f"beta must be > 0, got {self.beta}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.test_batch < 1:
            raise ValidationError(f"test_batch must be >= 1, got {self.test_batch}")
        if self.inner_steps < 1:
            raise ValidationError(f"inner_steps must be >= 1, got {self.inner_steps}")
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")


@dataclass
class MetaIteration:
    iteration: int
    inner_loss: float
    outer_loss: float
    wall_time: float
    support_size: int

    def to_line(self) -> str:
        return (f"iteration={self.iteration} inner_loss={self.inner_loss:.6f} "
                f"outer_loss={self.outer_loss:.6f} wall_time={self.wall_time:.3f} "
                f"support_size={self.support_size}")


@dataclass
class MetaHistory:
    iterations: List[MetaIteration] = field(default_factory=list)
    skipped: int = 0

    @property
    def final_loss(self) -> float:
        return self.iterations[-1].outer_loss if self.iterations else float('nan')


def inner_adapt(model: BaseModel, theta: ModelParams, support: Sequence[Example], alpha: float,
                steps: int = 1, rng: Optional[np.random.Generator] = None) -> Tuple[ModelParams, float]:
    """
    theta' = theta - alpha * grad of the mean support loss, repeated `steps` times.

    theta is never modified. Dropout is active only when an rng is given.
    Returns theta' and the support loss before the first step.
    """
    if not support:
        raise ValidationError("inner_adapt needs a non-empty support set")
    adapted, first_loss = theta, float('nan')
    for step in range(steps):
        result = model.loss_and_grad(adapted, support, rng=rng, train=rng is not None)
        if step == 0:
            first_loss = result.loss
        adapted = adapted.axpy(-alpha, result.grads)
    return adapted, first_loss


def sample_batch(examples: Sequence[Example], size: int, rng: np.random.Generator) -> List[Example]:
    """Up to `size` distinct examples"""
    if not examples:
        raise ValidationError("cannot sample from an empty dataset")
    picks = rng.choice(len(examples), size=min(size, len(examples)), replace=False)
    return [examples[int(i)] for i in picks]


def pool_supports(batch: Sequence[Example], supports: SupportFn) -> List[Example]:
    """Union of the batch's support sets, first occurrence order"""
    pooled: Dict[str, Example] = {}
    for query in batch:
        for example in supports(query):
            pooled.setdefault(example.id, example)
    return list(pooled.values())


class RetrievalSupport:
    """Support sets from the latent index: the K nearest indexed examples of a query"""

    def __init__(self, index: RetrievalIndex, retriever: ContextAwareRetriever, params: ModelParams,
                 pool: Mapping[str, Example], k: int, mode: RetrievalMode = RetrievalMode.CONTEXT_AWARE):
        self.index = index
        self.retriever = retriever
        self.params = params
        self.pool = pool
        self.k = k
        self.mode = mode

    def neighbours(self, query: Example):
        code = self.index.code(query.id) if query.id in self.index else self.retriever.latent_code(self.params, query)
        return self.index.nearest(code, self.k, self.mode, exclude=query.id)

    def __call__(self, query: Example) -> List[Example]:
        return [self.pool[n.example_id] for n in self.neighbours(query) if n.example_id in self.pool]


class MetaLearner:
    """First-order Retrieval-MAML over a model and a support-set provider"""

    def __init__(self, model: BaseModel, config: MetaConfig, supports: SupportFn):
        self.model = model
        self.config = config
        self.supports = supports

    def meta_step(self, params: ModelParams, batch: Sequence[Example], state: AdamState,
                  rng: Optional[np.random.Generator] = None) -> Tuple[ModelParams, AdamState, float, float, int]:
        """One outer update: the gradient at theta' applied at theta with Adam"""
        support = pool_supports(batch, self.supports)
        inner_loss = float('nan')
        if not support:
            logger.warning(f"Empty support set for a batch of {len(batch)} examples, skipping the inner step")
            adapted = params
        elif self.config.alpha == 0:
            adapted = params
        else:
            adapted, inner_loss = inner_adapt(self.model, params, support, self.config.alpha,
                                              self.config.inner_steps, rng)
        outer = self.model.loss_and_grad(adapted, batch, rng=rng, train=rng is not None)
        params, state = adam_step(params, outer.grads, state, self.config.beta)
        return params, state, inner_loss, outer.loss, len(support)

    def meta_train(self, params: ModelParams, examples: Sequence[Example], rng: np.random.Generator,
                   log_path: Optional[Union[str, Path]] = None) -> Tuple[ModelParams, MetaHistory]:
        trainable = [e for e in examples if e.is_supervised]
        if not trainable:
            raise ValidationError("meta-training needs examples with action sequences")
        history = MetaHistory()
        state = AdamState.for_params(params)
        start = time.time()
        log = open(log_path, 'w') if log_path is not None else None
        try:
            for iteration in range(1, self.config.iterations + 1):
                batch = sample_batch(trainable, self.config.test_batch, rng)
                params, state, inner_loss, outer_loss, support_size = self.meta_step(params, batch, state, rng)
                if support_size == 0:
                    history.skipped += 1
                record = MetaIteration(iteration, inner_loss, outer_loss, time.time() - start, support_size)
                history.iterations.append(record)
                logger.info(f"Meta iteration {iteration}: inner_loss={inner_loss:.4f} outer_loss={outer_loss:.4f}")
                if log is not None:
                    log.write(record.to_line() + "\n")
        finally:
            if log is not None:
                log.close()
        return params, history


def adapted_predict(model, params: ModelParams, query: Example, supports: Sequence[Example],
                    config: MetaConfig, max_actions: int, finetune: bool = True) -> ParseResult:
    """Greedy parse under theta adapted to the query's supports; dropout stays off"""
    if finetune and supports and config.alpha > 0:
        params, _ = inner_adapt(model, params, supports, config.alpha, config.inner_steps)
    return model.parse_greedy(params, query, max_actions)


def _sequence_key(actions: Sequence[Action]) -> Tuple:
    return tuple(a.sort_key for a in actions)


def filter_spurious(candidates: Sequence[Sequence[Action]],
                    retrieved: Sequence[Sequence[Action]]) -> List[Action]:
    """
    Candidate closest to any retrieved sequence by token edit distance.

    Ties go to the shorter candidate, then to the lowest action-id order.
    Without retrieved sequences every distance is infinite and only the
    tie-breaks decide.
    """
    if not candidates:
        raise ValidationError("filter_spurious needs at least one candidate")
    targets = [[a.token for a in r] for r in retrieved]

    def score(candidate):
        tokens = [a.token for a in candidate]
        distance = min((edit_distance(tokens, t) for t in targets), default=math.inf)
        return distance, len(candidate), _sequence_key(candidate)

    return list(min(candidates, key=score))


def resolve_weak_examples(examples: Sequence[Example], grammar: Grammar,
                          support: RetrievalSupport) -> Tuple[List[Example], int]:
    """Give every candidates-only example the candidate chosen by filter_spurious"""
    resolved, count = [], 0
    for example in examples:
        if example.is_supervised:
            resolved.append(example)
            continue
        retrieved = [e.actions for e in support(example) if e.is_supervised]
        chosen = filter_spurious(example.candidates, retrieved)
        surface = ast_to_tokens(actions_to_ast(grammar, chosen, grammar.constants_for(example.context)))
        resolved.append(replace(example, actions=chosen, surface=surface))
        count += 1
    return resolved, count
