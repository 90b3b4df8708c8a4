"""
Shared models for datasets, grammar actions, predictions and reporting
"""
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Optional, Dict, List, Any, Tuple, Union


class ReproError(Exception):
    """Base error for the toolkit"""


class ValidationError(ReproError, ValueError):
    """Invalid input, configuration or dataset (CLI exit code 2)"""


class GrammarError(ValidationError):
    """Grammar file error"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class DerivationError(GrammarError):
    """Illegal, incomplete or overlong action sequence"""

    def __init__(self, message: str, index: Optional[int] = None):
        self.index = index
        suffix = f" (action index {index})" if index is not None else ""
        super().__init__(f"{message}{suffix}")


class NumericsError(ReproError, ArithmeticError):
    """Non-finite value, shape mismatch or invalid tensor operation"""


class StageError(ReproError):
    """A pipeline stage failed"""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")

    @property
    def is_validation(self) -> bool:
        return isinstance(self.cause, ValidationError)


class ActionKind(Enum):
    """Grammar action kinds"""
    APPLY = "apply"
    INSTANTIATE = "instantiate"


class ConstantSource(Enum):
    """Where an instantiable category copies its constants from"""
    CLASS_METHODS = "class_methods"
    CLASS_VARIABLES = "class_variables"
    HISTORY_ENTITIES = "history_entities"


class RolloutStatus(Enum):
    """Outcome of a greedy rollout"""
    OK = "ok"
    FAILED = "failed"


class ExperimentMode(Enum):
    """Pipelines run by run-experiment"""
    S2A = "s2a"
    S2A_MAML = "s2a+maml"
    S2A_MAML_NOFINETUNE = "s2a+maml-nofinetune"
    RETRIEVAL_ONLY = "retrieval-only"


class RetrievalMode(Enum):
    """Latent distance used for retrieval"""
    CONTEXT_AWARE = "context_aware"
    UTTERANCE_ONLY = "utterance_only"


@dataclass(frozen=True)
class Action:
    """Apply(rule) or Instantiate(category, constant index)"""
    kind: ActionKind
    rule_id: int = -1
    category: str = ""
    constant: int = -1

    @classmethod
    def apply(cls, rule_id: int) -> 'Action':
        return cls(ActionKind.APPLY, rule_id=rule_id)

    @classmethod
    def instantiate(cls, category: str, constant: int) -> 'Action':
        return cls(ActionKind.INSTANTIATE, category=category, constant=constant)

    @property
    def is_apply(self) -> bool:
        return self.kind == ActionKind.APPLY

    @property
    def token(self) -> str:
        """Compact text form used in dataset files and prediction dumps"""
        if self.is_apply:
            return str(self.rule_id)
        return f"{self.category}:{self.constant}"

    @property
    def sort_key(self) -> Tuple[int, int, str, int]:
        if self.is_apply:
            return (0, self.rule_id, "", -1)
        return (1, -1, self.category, self.constant)

    @classmethod
    def from_token(cls, token: str) -> 'Action':
        if ':' in token:
            category, _, index = token.rpartition(':')
            if not category or not index.isdigit():
                raise ValidationError(f"malformed instantiate action '{token}'")
            return cls.instantiate(category, int(index))
        if not token.isdigit():
            raise ValidationError(f"malformed apply action '{token}'")
        return cls.apply(int(token))

    def __str__(self) -> str:
        if self.is_apply:
            return f"Apply({self.rule_id})"
        return f"Instantiate({self.category}, {self.constant})"


@dataclass
class ClassEnv:
    """Class environment: variables and methods as (name, type) pairs"""
    variables: List[Tuple[str, str]] = field(default_factory=list)
    methods: List[Tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        for name, _ in self.variables + self.methods:
            if not name:
                raise ValidationError("class member names must be non-empty")

    def constants(self, source: ConstantSource) -> List[str]:
        if source == ConstantSource.CLASS_METHODS:
            return [name for name, _ in self.methods]
        if source == ConstantSource.CLASS_VARIABLES:
            return [name for name, _ in self.variables]
        return []

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": "class",
            "variables": [list(v) for v in self.variables],
            "methods": [list(m) for m in self.methods],
        }


@dataclass
class DialogHistory:
    """Preceding questions of a conversation and the entities they mention"""
    utterances: List[List[str]] = field(default_factory=list)
    entities: List[str] = field(default_factory=list)

    def __post_init__(self):
        if any(not e for e in self.entities):
            raise ValidationError("history entity names must be non-empty")

    def constants(self, source: ConstantSource) -> List[str]:
        if source == ConstantSource.HISTORY_ENTITIES:
            return list(self.entities)
        return []

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": "dialog",
            "history": [list(u) for u in self.utterances],
            "entities": list(self.entities),
        }


ContextEnv = Union[ClassEnv, DialogHistory]


def context_from_dict(data: Dict[str, Any]) -> ContextEnv:
    """Rebuild a context environment from its dataset record"""
    kind = data.get("type")
    if kind == "class":
        return ClassEnv(
            variables=[tuple(v) for v in data.get("variables", [])],
            methods=[tuple(m) for m in data.get("methods", [])],
        )
    if kind == "dialog":
        return DialogHistory(
            utterances=[list(u) for u in data.get("history", [])],
            entities=list(data.get("entities", [])),
        )
    raise ValidationError(f"unknown context type: {kind!r}")


@dataclass
class Example:
    """One datapoint: utterance, context environment and gold derivation"""
    id: str
    utterance: List[str]
    context: ContextEnv
    actions: List[Action] = field(default_factory=list)
    surface: List[str] = field(default_factory=list)
    candidates: List[List[Action]] = field(default_factory=list)

    @property
    def is_supervised(self) -> bool:
        return bool(self.actions)

    @property
    def pattern(self) -> Tuple[str, ...]:
        """Gold derivation with instantiated constants abstracted to their category"""
        return tuple(a.token if a.is_apply else a.category for a in self.actions)

    def to_dict(self) -> Dict[str, Any]:
        record = {
            "id": self.id,
            "nl": list(self.utterance),
            "context": self.context.to_dict(),
            "actions": [a.token for a in self.actions],
            "surface": list(self.surface),
        }
        if self.candidates:
            record["candidates"] = [[a.token for a in c] for c in self.candidates]
        return record


@dataclass
class ParseResult:
    """Greedy rollout output"""
    actions: List[Action]
    tokens: List[str]
    status: RolloutStatus
    log_prob: float = 0.0
    step_probs: List[float] = field(default_factory=list)
    legal_counts: List[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == RolloutStatus.OK


@dataclass
class Prediction:
    """One line of the prediction dump"""
    example_id: str
    status: RolloutStatus
    actions: List[str]
    tokens: List[str]

    def to_line(self) -> str:
        return "\t".join([
            self.example_id,
            self.status.value,
            " ".join(self.actions),
            " ".join(self.tokens),
        ])

    @classmethod
    def from_line(cls, line: str) -> 'Prediction':
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 4:
            raise ValidationError(f"malformed prediction line: {line!r}")
        example_id, status, actions, tokens = parts
        return cls(
            example_id=example_id,
            status=RolloutStatus(status),
            actions=actions.split() if actions else [],
            tokens=tokens.split() if tokens else [],
        )


@dataclass
class ExampleScore:
    """Per-example evaluation"""
    example_id: str
    exact: bool
    bleu: float
    status: RolloutStatus

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.example_id,
            "exact": self.exact,
            "bleu": self.bleu,
            "status": self.status.value,
        }


@dataclass
class EvalReport:
    """Exact match and corpus BLEU-4 over a prediction set"""
    scores: List[ExampleScore] = field(default_factory=list)
    corpus_bleu: float = 0.0

    @property
    def total_count(self) -> int:
        return len(self.scores)

    @property
    def exact_count(self) -> int:
        return sum(1 for s in self.scores if s.exact)

    @property
    def failure_count(self) -> int:
        return sum(1 for s in self.scores if s.status == RolloutStatus.FAILED)

    @property
    def exact_match(self) -> float:
        """Exact match as percentage"""
        if self.total_count == 0:
            return 0.0
        return (self.exact_count / self.total_count) * 100

    def to_dict(self) -> Dict[str, Any]:
        return {
            "summary": {
                "examples": self.total_count,
                "exact_match": self.exact_match,
                "corpus_bleu": self.corpus_bleu,
                "failures": self.failure_count,
            },
            "examples": [s.to_dict() for s in self.scores],
        }


@dataclass
class StageResult:
    """Timing and metadata of one executed pipeline stage"""
    stage: str
    started_at: Optional[datetime] = None
    completed_at: Optional[datetime] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def duration_seconds(self) -> float:
        if self.started_at and self.completed_at:
            return (self.completed_at - self.started_at).total_seconds()
        return 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stage": self.stage,
            "started_at": self.started_at.isoformat() if self.started_at else None,
            "completed_at": self.completed_at.isoformat() if self.completed_at else None,
            "duration_seconds": self.duration_seconds,
            "metadata": self.metadata,
        }


@dataclass
class ExperimentReport:
    """Overall run-experiment report"""
    experiment_id: str
    mode: ExperimentMode
    seed: int
    stages: List[StageResult] = field(default_factory=list)
    evaluation: Optional[EvalReport] = None

    @property
    def total_duration_seconds(self) -> float:
        return sum(s.duration_seconds for s in self.stages)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experiment_id": self.experiment_id,
            "mode": self.mode.value,
            "seed": self.seed,
            "total_duration_seconds": self.total_duration_seconds,
            "stages": [s.to_dict() for s in self.stages],
            "evaluation": self.evaluation.to_dict() if self.evaluation else None,
        }
