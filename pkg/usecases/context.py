"""
Experiment profile configuration and the shared artifact context of a run
"""
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar
import logging
import zlib

import numpy as np

from models import Example, ExperimentMode, RetrievalMode, ValidationError
from infrastructure.checkpoint import load_checkpoint, save_checkpoint
from infrastructure.dataset import Vocabulary, build_vocab, load_dataset
from infrastructure.grammar import Grammar
from infrastructure.optim import ModelParams
from infrastructure.synthetic import SyntheticTaskConfig
from usecases.meta.maml import MetaConfig
from usecases.parser.model import ParserConfig, Seq2ActionParser
from usecases.retriever.index import RetrievalIndex
from usecases.retriever.model import ContextAwareRetriever, RetrieverConfig

logger = logging.getLogger(__name__)

C = TypeVar('C')


@dataclass
class DataConfig:
    """Dataset files, or the synthetic task that produces them"""
    task: str = 'code'
    train_examples: int = 200
    test_examples: int = 50
    context_patterns: int = 8
    ambiguity_rate: float = 0.5
    weak_supervision_rate: float = 0.0
    max_candidates: int = 4
    train_fraction: float = 1.0
    min_count: int = 1
    train_path: Optional[str] = None
    test_path: Optional[str] = None

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValidationError(f"train_fraction must be in (0, 1], got {self.train_fraction}")
        if self.train_examples < 1 or self.test_examples < 1:
            raise ValidationError("train_examples and test_examples must be >= 1")
        if (self.train_path is None) != (self.test_path is None):
            raise ValidationError("train_path and test_path must be given together")

    def synthetic(self, seed: int, split: str) -> SyntheticTaskConfig:
        return SyntheticTaskConfig(
            task=self.task,
            num_examples=self.train_examples if split == 'train' else self.test_examples,
            context_patterns=self.context_patterns,
            ambiguity_rate=self.ambiguity_rate,
            weak_supervision_rate=self.weak_supervision_rate if split == 'train' else 0.0,
            max_candidates=self.max_candidates,
            seed=seed,
        )


@dataclass
class ExperimentConfig:
    """Pipeline mode and evaluation settings"""
    mode: ExperimentMode = ExperimentMode.S2A_MAML
    retrieval: RetrievalMode = RetrievalMode.CONTEXT_AWARE
    warm_start: bool = False
    max_actions: int = 100
    seed: int = 0

    def __post_init__(self):
        try:
            self.mode = ExperimentMode(self.mode)
            self.retrieval = RetrievalMode(self.retrieval)
        except ValueError as e:
            raise ValidationError(str(e))
        if self.max_actions < 1:
            raise ValidationError(f"max_actions must be >= 1, got {self.max_actions}")


def _coerce(value: Any, target: Any) -> Any:
    """Turn ${VAR}-substituted strings into the field's scalar type"""
    if not isinstance(value, str):
        return value
    if target is bool:
        if value.lower() in ('true', '1', 'yes'):
            return True
        if value.lower() in ('false', '0', 'no'):
            return False
        raise ValidationError(f"expected a boolean, got '{value}'")
    if target in (int, float):
        try:
            return target(value)
        except ValueError:
            raise ValidationError(f"expected {target.__name__}, got '{value}'")
    return value


def build_section(cls: Type[C], section: Optional[Dict[str, Any]], name: str) -> C:
    section = dict(section or {})
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(section) - set(known))
    if unknown:
        raise ValidationError(f"unknown keys in '{name}' section: {', '.join(unknown)}")
    kwargs = {key: _coerce(value, known[key].type) for key, value in section.items()}
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ValidationError(f"invalid '{name}' section: {e}")


@dataclass
class ProfileConfig:
    """One named profile of config/experiments.yaml"""
    name: str = 'default'
    data: DataConfig = field(default_factory=DataConfig)
    retriever: RetrieverConfig = field(default_factory=RetrieverConfig)
    parser: ParserConfig = field(default_factory=ParserConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    @classmethod
    def from_dict(cls, name: str, profile: Dict[str, Any]) -> 'ProfileConfig':
        profile = dict(profile or {})
        sections = {'data': DataConfig, 'retriever': RetrieverConfig, 'parser': ParserConfig,
                    'meta': MetaConfig, 'experiment': ExperimentConfig}
        unknown = sorted(set(profile) - set(sections))
        if unknown:
            raise ValidationError(f"profile '{name}': unknown sections {', '.join(unknown)}")
        built = {key: build_section(section_cls, profile.get(key), key) for key, section_cls in sections.items()}
        return cls(name=name, **built)


@dataclass
class ArtifactPaths:
    """Files a run reads and writes under its output directory"""
    root: Path

    @property
    def train(self) -> Path:
        return self.root / 'data' / 'train.jsonl'

    @property
    def test(self) -> Path:
        return self.root / 'data' / 'test.jsonl'

    @property
    def vocab(self) -> Path:
        return self.root / 'vocab.json'

    @property
    def retriever(self) -> Path:
        return self.root / 'retriever' / 'params'

    @property
    def index(self) -> Path:
        return self.root / 'index' / 'index'

    @property
    def parser(self) -> Path:
        return self.root / 'parser' / 'params'

    @property
    def resolved_train(self) -> Path:
        return self.root / 'data' / 'train.resolved.jsonl'

    @property
    def predictions(self) -> Path:
        return self.root / 'predictions.tsv'

    @property
    def meta_log(self) -> Path:
        return self.root / 'meta_train.log'


class ExperimentContext:
    """Configuration, seeded randomness and lazily loaded artifacts shared by stages"""

    def __init__(self, profile: ProfileConfig, out_dir: Path, seed: Optional[int] = None):
        self.profile = profile
        self.seed = profile.experiment.seed if seed is None else seed
        self.paths = ArtifactPaths(Path(out_dir))
        self.paths.root.mkdir(parents=True, exist_ok=True)
        self._train: Optional[List[Example]] = None
        self._test: Optional[List[Example]] = None
        self._grammar: Optional[Grammar] = None
        self._vocab: Optional[Vocabulary] = None
        self._retriever_params: Optional[ModelParams] = None
        self._index: Optional[RetrievalIndex] = None
        self._parser_params: Optional[ModelParams] = None

    def stage_rng(self, stage: str) -> np.random.Generator:
        """Independent stream per stage name, so stages can run separately or chained"""
        return np.random.default_rng([self.seed, zlib.crc32(stage.encode('utf-8'))])

    def with_overrides(self, **sections: Any) -> 'ExperimentContext':
        """Fresh context over the same output directory with replaced profile sections"""
        return ExperimentContext(replace(self.profile, **sections), self.paths.root, self.seed)

    @property
    def train_source(self) -> Path:
        if self.paths.resolved_train.exists():
            return self.paths.resolved_train
        if self.profile.data.train_path:
            return Path(self.profile.data.train_path)
        return self.paths.train

    @property
    def test_source(self) -> Path:
        return Path(self.profile.data.test_path) if self.profile.data.test_path else self.paths.test

    def _subsample(self, examples: List[Example]) -> List[Example]:
        fraction = self.profile.data.train_fraction
        if fraction >= 1.0:
            return examples
        keep = max(1, int(round(len(examples) * fraction)))
        order = np.sort(self.stage_rng('train-fraction').permutation(len(examples))[:keep])
        logger.info(f"Using {keep}/{len(examples)} training examples (train_fraction={fraction})")
        return [examples[i] for i in order]

    @property
    def train_examples(self) -> List[Example]:
        if self._train is None:
            source = self.train_source
            examples, self._grammar = load_dataset(source, self._grammar)
            # the resolved file is written from an already subsampled set
            self._train = examples if source == self.paths.resolved_train else self._subsample(examples)
        return self._train

    @property
    def train_pool(self) -> Dict[str, Example]:
        return {e.id: e for e in self.train_examples}

    @property
    def test_examples(self) -> List[Example]:
        if self._test is None:
            self._test, self._grammar = load_dataset(self.test_source, self._grammar)
        return self._test

    @property
    def grammar(self) -> Grammar:
        if self._grammar is None:
            _ = self.train_examples
        return self._grammar

    def set_train_examples(self, examples: List[Example]):
        self._train = examples

    def clear_derived(self):
        """Forget the resolved training set and vocabulary of an earlier run"""
        for stale in (self.paths.resolved_train, self.paths.vocab):
            if stale.exists():
                logger.info(f"Removing stale {stale}")
                stale.unlink()
        self._train = self._test = self._grammar = self._vocab = None

    @property
    def vocab(self) -> Vocabulary:
        if self._vocab is None:
            if self.paths.vocab.exists():
                self._vocab = Vocabulary.load(self.paths.vocab)
            else:
                self._vocab = build_vocab(self.train_examples, self.profile.data.min_count)
                self._vocab.save(self.paths.vocab)
                logger.info(f"Vocabulary of {len(self._vocab)} tokens saved to {self.paths.vocab}")
        return self._vocab

    @property
    def retriever_params(self) -> ModelParams:
        if self._retriever_params is None:
            self._retriever_params, _ = load_checkpoint(self.paths.retriever)
        return self._retriever_params

    def set_retriever_params(self, params: ModelParams):
        self._retriever_params = params
        save_checkpoint(params, self.paths.retriever, {'model': 'retriever'})

    @property
    def index(self) -> RetrievalIndex:
        if self._index is None:
            self._index = RetrievalIndex.load(self.paths.index)
        return self._index

    def set_index(self, index: RetrievalIndex):
        self._index = index
        index.save(self.paths.index)

    @property
    def parser_params(self) -> ModelParams:
        if self._parser_params is None:
            self._parser_params, _ = load_checkpoint(self.paths.parser)
        return self._parser_params

    def set_parser_params(self, params: ModelParams):
        self._parser_params = params
        save_checkpoint(params, self.paths.parser, {'model': 'parser'})

    def retriever_model(self) -> ContextAwareRetriever:
        return ContextAwareRetriever(self.profile.retriever, self.vocab)

    def parser_model(self) -> Seq2ActionParser:
        return Seq2ActionParser(self.profile.parser, self.vocab, self.grammar)
