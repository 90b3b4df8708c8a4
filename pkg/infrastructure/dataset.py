"""
Dataset I/O, camel-case tokenization and vocabularies
"""
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
import json
import logging
import os
import re

from models import (
    Action, ClassEnv, DialogHistory, Example, Prediction, ReproError, ValidationError, context_from_dict,
)
from infrastructure.grammar import Grammar, actions_to_ast, ast_to_tokens, load_grammar_file

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

PAD, UNK, BOS, EOS = '<pad>', '<unk>', '<s>', '</s>'
RESERVED = (PAD, UNK, BOS, EOS)

# acronyms stay whole until the next capitalized word; digits stick to the preceding subword
_SUBWORD = re.compile(r'[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+[0-9]*|[A-Z]+[0-9]*|[0-9]+')

PathLike = Union[str, Path]


def split_camel_case(identifier: str) -> List[str]:
    """'getHTTPResponse' -> ['get', 'http', 'response']"""
    if not identifier:
        raise ValidationError("cannot split an empty identifier")
    subwords = []
    for chunk in re.split(r'[^A-Za-z0-9]+', identifier):
        subwords.extend(m.group(0).lower() for m in _SUBWORD.finditer(chunk))
    if not subwords:
        raise ValidationError(f"identifier '{identifier}' has no alphanumeric subwords")
    return subwords


def context_tokens(context) -> List[str]:
    """Every token a context environment contributes to the vocabulary"""
    tokens = []
    if isinstance(context, ClassEnv):
        for name, type_name in context.variables + context.methods:
            tokens.extend(split_camel_case(name))
            tokens.extend(split_camel_case(type_name))
    elif isinstance(context, DialogHistory):
        for utterance in context.utterances:
            tokens.extend(utterance)
        for entity in context.entities:
            tokens.extend(split_camel_case(entity))
    return tokens


def example_tokens(example: Example) -> List[str]:
    return list(example.utterance) + context_tokens(example.context) + list(example.surface)


class Vocabulary:
    """Token <-> id map; reserved tokens take ids 0..3"""

    def __init__(self, tokens: Sequence[str], counts: Optional[Dict[str, int]] = None):
        if tuple(tokens[:len(RESERVED)]) != RESERVED:
            raise ValidationError(f"vocabulary must start with {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary contains duplicate tokens")
        self.tokens: List[str] = list(tokens)
        self.counts: Dict[str, int] = dict(counts or {})
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    def lookup(self, token: str, allow_unk: bool = True) -> int:
        if token in self._ids:
            return self._ids[token]
        if not allow_unk:
            raise ValidationError(f"token '{token}' is not in the vocabulary")
        return self.unk_id

    def lookup_all(self, tokens: Iterable[str], allow_unk: bool = True) -> List[int]:
        return [self.lookup(t, allow_unk) for t in tokens]

    def save(self, path: PathLike):
        Path(path).write_text(json.dumps(self.tokens, indent=0))

    @classmethod
    def load(cls, path: PathLike) -> 'Vocabulary':
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"vocabulary file not found: {path}")
        return cls(json.loads(path.read_text()))


def build_vocab(examples: Iterable[Example], min_count: int = 1) -> Vocabulary:
    """Reserved tokens, then tokens seen >= min_count times by descending count, ties lexicographic"""
    if min_count < 1:
        raise ValidationError(f"min_count must be >= 1, got {min_count}")
    counts = Counter()
    for example in examples:
        counts.update(t for t in example_tokens(example) if t not in RESERVED)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept, counts=dict(counts))


# ----------------------------------------------------------------------------
# JSON-lines datasets
# ----------------------------------------------------------------------------

def _parse_actions(tokens, example_id: str, what: str) -> List[Action]:
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise ValidationError(f"example {example_id}: '{what}' must be a list of action tokens")
    try:
        return [Action.from_token(t) for t in tokens]
    except ValidationError as e:
        raise ValidationError(f"example {example_id}: {e}")


def validate_example(example: Example, grammar: Grammar):
    """Check gold and candidate sequences against the grammar and the stored surface"""
    constants = grammar.constants_for(example.context)
    try:
        if example.is_supervised:
            tokens = ast_to_tokens(actions_to_ast(grammar, example.actions, constants))
            if example.surface and tokens != example.surface:
                raise ValidationError(f"surface {example.surface} does not match derivation {tokens}")
        elif not example.candidates:
            raise ValidationError("neither gold actions nor candidates")
        for candidate in example.candidates:
            actions_to_ast(grammar, candidate, constants)
    except ReproError as e:
        raise ValidationError(f"example {example.id}: {e}")


def example_from_record(record: Dict, lineno: int) -> Example:
    for key in ('id', 'nl', 'context', 'actions'):
        if key not in record:
            raise ValidationError(f"line {lineno}: missing field '{key}'")
    example_id = record['id']
    if not isinstance(example_id, str) or not example_id:
        raise ValidationError(f"line {lineno}: example id must be a non-empty string")
    nl = record['nl']
    if not isinstance(nl, list) or not nl or not all(isinstance(t, str) for t in nl):
        raise ValidationError(f"example {example_id}: 'nl' must be a non-empty token list")
    if not isinstance(record['context'], dict):
        raise ValidationError(f"example {example_id}: 'context' must be an object")
    try:
        context = context_from_dict(record['context'])
    except (ValidationError, TypeError, ValueError) as e:
        raise ValidationError(f"example {example_id}: bad context: {e}")
    return Example(
        id=example_id,
        utterance=list(nl),
        context=context,
        actions=_parse_actions(record['actions'], example_id, 'actions'),
        surface=list(record.get('surface', [])),
        candidates=[_parse_actions(c, example_id, 'candidates') for c in record.get('candidates', [])],
    )


def _resolve_grammar_path(reference: str, dataset_path: Path) -> Path:
    candidate = Path(reference)
    if candidate.is_absolute():
        return candidate
    beside = dataset_path.parent / candidate
    return beside if beside.exists() else candidate


def load_dataset(path: PathLike, grammar: Optional[Grammar] = None) -> Tuple[List[Example], Grammar]:
    """Read and fully validate a dataset file; the grammar comes from its header unless given"""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"dataset file not found: {path}")
    examples: List[Example] = []
    seen = set()
    with open(path, 'r') as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: invalid JSON: {e}")
            if lineno == 1:
                if record.get('kind') != 'header':
                    raise ValidationError(f"{path}: first record must be the header")
                if record.get('schema_version') != SCHEMA_VERSION:
                    raise ValidationError(f"{path}: unsupported schema version {record.get('schema_version')!r}")
                if grammar is None:
                    if 'grammar' not in record:
                        raise ValidationError(f"{path}: header does not name a grammar")
                    grammar = load_grammar_file(_resolve_grammar_path(record['grammar'], path))
                continue
            example = example_from_record(record, lineno)
            if example.id in seen:
                raise ValidationError(f"duplicate example id '{example.id}'")
            seen.add(example.id)
            validate_example(example, grammar)
            examples.append(example)
    if grammar is None:
        raise ValidationError(f"{path}: empty dataset file")
    logger.info(f"Loaded {len(examples)} examples from {path}")
    return examples, grammar


def save_dataset(path: PathLike, examples: Sequence[Example], grammar_path: PathLike):
    """Write a header record and one record per example; the grammar path is stored relative to the file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grammar_path = Path(grammar_path)
    try:
        reference = os.path.relpath(grammar_path.resolve(), path.parent.resolve())
    except ValueError:
        reference = str(grammar_path.resolve())
    with open(path, 'w') as f:
        f.write(json.dumps({"kind": "header", "schema_version": SCHEMA_VERSION, "grammar": reference}) + "\n")
        for example in examples:
            f.write(json.dumps(example.to_dict()) + "\n")
    logger.info(f"Saved {len(examples)} examples to {path}")


# ----------------------------------------------------------------------------
# Prediction dumps
# ----------------------------------------------------------------------------

def save_predictions(path: PathLike, predictions: Sequence[Prediction]):
    """One tab-separated line per example, in the given order"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        for prediction in predictions:
            f.write(prediction.to_line() + "\n")
    logger.info(f"Saved {len(predictions)} predictions to {path}")


def load_predictions(path: PathLike) -> List[Prediction]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"prediction file not found: {path}")
    with open(path, 'r') as f:
        return [Prediction.from_line(line) for line in f if line.strip()]
