"""
Synthetic context-dependent parsing tasks

Two families share one recipe: a pool of context patterns (class skeletons or
dialog openings), unambiguous intents whose gold structure follows from the
utterance alone, and ambiguous intents whose gold structure is decided by the
context. Ambiguous examples are emitted as twins that share the utterance and
differ only in the deciding part of the context.
"""
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from models import Action, ClassEnv, DialogHistory, Example, ValidationError
from infrastructure.dataset import split_camel_case
from infrastructure.grammar import (
    Grammar, actions_to_ast, ast_to_tokens, enumerate_derivations, load_grammar_file,
)

logger = logging.getLogger(__name__)

GRAMMAR_DIR = Path(__file__).resolve().parent.parent / 'grammars'
TASK_GRAMMARS = {
    'code': GRAMMAR_DIR / 'java_toy.grammar',
    'dialog': GRAMMAR_DIR / 'dialog_toy.grammar',
}

A = Action.apply

# ----------------------------------------------------------------------------
# Code task vocabulary
# ----------------------------------------------------------------------------

CLASS_VARIABLES = {
    'vecElements': 'int[]', 'itemCount': 'int', 'userNames': 'String[]', 'totalScore': 'double',
    'bufferSize': 'int', 'nodeList': 'List<Node>', 'pageIndex': 'int', 'cacheEntries': 'Map<String,Entry>',
    'errorLog': 'List<String>', 'taskQueue': 'Queue<Task>', 'fileNames': 'String[]', 'retryLimit': 'int',
    'orderItems': 'List<Item>', 'maxWeight': 'double', 'wordCounts': 'int[]', 'pixelValues': 'float[]',
}
HELPER_VERBS = ('get', 'print', 'update', 'log', 'sort')
HELPER_RETURN_TYPES = {'get': 'int', 'print': 'void', 'update': 'void', 'log': 'void', 'sort': 'void'}

# verb -> (utterance lead words, structure with the method, structure without it)
CODE_AMBIGUOUS = {
    'increment': (['increment', 'this'], 'call', 'loop'),
    'clear': (['clear', 'the'], 'call', 'reset'),
    'count': (['count', 'the'], 'result', 'length'),
}
CODE_UNAMBIGUOUS = ('return', 'length', 'reset', 'call', 'result')

# ----------------------------------------------------------------------------
# Dialog task vocabulary
# ----------------------------------------------------------------------------

ENTITIES = (
    'marieCurie', 'victorHugo', 'adaLovelace', 'alanTuring', 'janeAusten', 'leoTolstoy',
    'franceCountry', 'peruCountry', 'kenyaCountry', 'japanCountry', 'nileRiver', 'mountFuji',
)
RELATIONS = ('spouse', 'capital', 'author')
DIALOG_UNAMBIGUOUS = ('find', 'count', 'verify')
DIALOG_OPERATIONS = ('find', 'count')

# rule ids of dialog_toy.grammar
_QUERY_RULES = {'find': 0, 'count': 1, 'verify': 2}
_RELATION_RULES = {'spouse': 3, 'capital': 4, 'author': 5}
_ENT_RULE = 6


@dataclass
class SyntheticTaskConfig:
    """Generator settings"""
    task: str = 'code'
    num_examples: int = 100
    context_patterns: int = 8
    ambiguity_rate: float = 0.5
    weak_supervision_rate: float = 0.0
    max_candidates: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASK_GRAMMARS:
            raise ValidationError(f"unknown synthetic task '{self.task}', expected one of {sorted(TASK_GRAMMARS)}")
        if self.num_examples < 1:
            raise ValidationError(f"num_examples must be >= 1, got {self.num_examples}")
        if self.context_patterns < 1:
            raise ValidationError(f"context_patterns must be >= 1, got {self.context_patterns}")
        if not 0.0 <= self.ambiguity_rate <= 1.0:
            raise ValidationError(f"ambiguity_rate must be in [0, 1], got {self.ambiguity_rate}")
        if not 0.0 <= self.weak_supervision_rate <= 1.0:
            raise ValidationError(f"weak_supervision_rate must be in [0, 1], got {self.weak_supervision_rate}")
        if self.max_candidates < 1:
            raise ValidationError(f"max_candidates must be >= 1, got {self.max_candidates}")

    @property
    def grammar_path(self) -> Path:
        return TASK_GRAMMARS[self.task]


@dataclass
class _Draft:
    utterance: List[str]
    context: object
    actions: List[Action]


@dataclass
class _ClassPattern:
    variables: List[str]
    helpers: List[Tuple[str, str]] = field(default_factory=list)


def _capitalize(name: str) -> str:
    return name[0].upper() + name[1:]


# ----------------------------------------------------------------------------
# Code task
# ----------------------------------------------------------------------------

def _class_patterns(count: int, rng: np.random.Generator) -> List[_ClassPattern]:
    names = sorted(CLASS_VARIABLES)
    if count > comb(len(names), 3):
        raise ValidationError(f"at most {comb(len(names), 3)} class patterns are available, got {count}")
    patterns, seen = [], set()
    while len(patterns) < count:
        chosen = tuple(sorted(rng.choice(len(names), size=3, replace=False).tolist()))
        if chosen in seen:
            continue
        seen.add(chosen)
        variables = [names[i] for i in chosen]
        verbs = rng.choice(len(HELPER_VERBS), size=2, replace=False)
        helpers = []
        for v in verbs:
            verb = HELPER_VERBS[int(v)]
            target = variables[int(rng.integers(len(variables)))]
            helpers.append((verb + _capitalize(target), HELPER_RETURN_TYPES[verb]))
        patterns.append(_ClassPattern(variables=variables, helpers=helpers))
    return patterns


def _code_actions(structure: str, variable: int, method: int) -> List[Action]:
    var = Action.instantiate('ClassVariable', variable)
    meth = Action.instantiate('ClassMethod', method)
    return {
        'return': [A(0), A(5), A(8), var],
        'length': [A(0), A(6), A(8), var],
        'reset': [A(3), A(8), var],
        'loop': [A(2), A(8), var],
        'call': [A(1), A(7), meth],
        'result': [A(0), A(4), A(7), meth],
    }[structure]


def _class_env(pattern: _ClassPattern, extra_method: Optional[Tuple[str, str]],
               rng: np.random.Generator) -> ClassEnv:
    variables = [(name, CLASS_VARIABLES[name]) for name in pattern.variables]
    methods = list(pattern.helpers)
    if extra_method is not None:
        methods.insert(int(rng.integers(len(methods) + 1)), extra_method)
    return ClassEnv(variables=variables, methods=methods)


def _code_unambiguous(pattern: _ClassPattern, rng: np.random.Generator) -> _Draft:
    intent = CODE_UNAMBIGUOUS[int(rng.integers(len(CODE_UNAMBIGUOUS)))]
    env = _class_env(pattern, None, rng)
    variable = int(rng.integers(len(env.variables)))
    method = int(rng.integers(len(env.methods)))
    var_words = split_camel_case(env.variables[variable][0])
    method_words = split_camel_case(env.methods[method][0])
    utterance = {
        'return': ['return', 'the'] + var_words,
        'length': ['get', 'the', 'length', 'of'] + var_words,
        'reset': ['reset'] + var_words + ['to', 'zero'],
        'call': ['call'] + method_words,
        'result': ['return', 'the', 'result', 'of'] + method_words,
    }[intent]
    return _Draft(utterance, env, _code_actions(intent, variable, method))


def _code_twins(pattern: _ClassPattern, count: int, rng: np.random.Generator) -> List[_Draft]:
    """Same utterance; the method named after the verb exists in one context only"""
    verb = sorted(CODE_AMBIGUOUS)[int(rng.integers(len(CODE_AMBIGUOUS)))]
    lead, with_method, without_method = CODE_AMBIGUOUS[verb]
    target = pattern.variables[int(rng.integers(len(pattern.variables)))]
    utterance = lead + split_camel_case(target)
    method_name = verb + _capitalize(target)

    presence = [True, False] if count == 2 else [bool(rng.integers(2))]
    drafts = []
    for has_method in presence:
        env = _class_env(pattern, (method_name, 'void') if has_method else None, rng)
        variable = [name for name, _ in env.variables].index(target)
        method = [name for name, _ in env.methods].index(method_name) if has_method else 0
        structure = with_method if has_method else without_method
        drafts.append(_Draft(list(utterance), env, _code_actions(structure, variable, method)))
    return drafts


# ----------------------------------------------------------------------------
# Dialog task
# ----------------------------------------------------------------------------

def _dialog_patterns(count: int, rng: np.random.Generator) -> List[List[str]]:
    """Each pattern is the list of entities its opening turns talk about"""
    patterns = []
    for _ in range(count):
        size = 1 + int(rng.integers(2))
        patterns.append([ENTITIES[int(i)] for i in rng.choice(len(ENTITIES), size=size, replace=False)])
    return patterns


def _question(operation: str, relation: str, entity: str) -> List[str]:
    words = split_camel_case(entity)
    if operation == 'find':
        return ['who', 'is', 'the', relation, 'of'] + words
    return ['how', 'many', relation, 'does'] + words + ['have']


def _history(opening: List[str], operation: str, relation: str, entity: str) -> DialogHistory:
    utterances = [['tell', 'me', 'about'] + split_camel_case(e) for e in opening]
    utterances.append(_question(operation, relation, entity))
    entities = list(dict.fromkeys(opening + [entity]))
    return DialogHistory(utterances=utterances, entities=entities)


def _dialog_actions(operation: str, relation: str, entities: Sequence[int]) -> List[Action]:
    actions = [A(_QUERY_RULES[operation]), A(_RELATION_RULES[relation])]
    for index in entities:
        actions.extend([A(_ENT_RULE), Action.instantiate('Entity', index)])
    return actions


def _pick(options: Sequence[str], rng: np.random.Generator, exclude: Sequence[str] = ()) -> str:
    pool = [o for o in options if o not in exclude]
    return pool[int(rng.integers(len(pool)))]


def _dialog_unambiguous(opening: List[str], rng: np.random.Generator) -> _Draft:
    focus = _pick(ENTITIES, rng, exclude=opening)
    history = _history(opening, _pick(DIALOG_OPERATIONS, rng), _pick(RELATIONS, rng), focus)
    intent = DIALOG_UNAMBIGUOUS[int(rng.integers(len(DIALOG_UNAMBIGUOUS)))]
    relation = _pick(RELATIONS, rng)
    n = len(history.entities)
    first = int(rng.integers(n))
    if intent == 'verify':
        second = (first + 1 + int(rng.integers(n - 1))) % n
        utterance = (['is'] + split_camel_case(history.entities[second]) + ['the', relation, 'of']
                     + split_camel_case(history.entities[first]))
        return _Draft(utterance, history, _dialog_actions('verify', relation, [first, second]))
    utterance = _question(intent, relation, history.entities[first])
    return _Draft(utterance, history, _dialog_actions(intent, relation, [first]))


def _dialog_twins(opening: List[str], count: int, rng: np.random.Generator) -> List[_Draft]:
    """Ellipsis 'and what about the R': the operation is inherited from the previous question"""
    focus = _pick(ENTITIES, rng, exclude=opening)
    previous_relation = _pick(RELATIONS, rng)
    relation = _pick(RELATIONS, rng, exclude=[previous_relation])
    utterance = ['and', 'what', 'about', 'the', relation]
    operations = list(DIALOG_OPERATIONS) if count == 2 else [_pick(DIALOG_OPERATIONS, rng)]
    drafts = []
    for operation in operations:
        history = _history(opening, operation, previous_relation, focus)
        index = history.entities.index(focus)
        drafts.append(_Draft(list(utterance), history, _dialog_actions(operation, relation, [index])))
    return drafts


# ----------------------------------------------------------------------------
# Generation
# ----------------------------------------------------------------------------

def _spurious_candidates(gold: List[Action], grammar: Grammar, constants: Dict[str, List[str]],
                         limit: int, rng: np.random.Generator) -> List[List[Action]]:
    """Gold plus legal derivations over the same constants, in random order"""
    used = {a for a in gold if not a.is_apply}
    pool = [
        list(d) for d in enumerate_derivations(grammar, constants, len(gold) + 2)
        if list(d) != gold and {a for a in d if not a.is_apply} == used
    ]
    chosen = []
    if pool and limit > 1:
        picks = rng.choice(len(pool), size=min(limit - 1, len(pool)), replace=False)
        chosen = [pool[int(i)] for i in sorted(picks.tolist())]
    chosen.insert(int(rng.integers(len(chosen) + 1)), list(gold))
    return chosen


def generate_synthetic(cfg: SyntheticTaskConfig, id_prefix: str = 'ex', split: int = 0,
                       grammar: Optional[Grammar] = None) -> List[Example]:
    """
    Deterministic dataset for a config.

    Context patterns depend on cfg.seed only, so splits generated with the same
    seed and different `split` values share them.
    """
    grammar = grammar or load_grammar_file(cfg.grammar_path)
    pattern_rng = np.random.default_rng([cfg.seed, 0])
    rng = np.random.default_rng([cfg.seed, 1, split])

    if cfg.task == 'code':
        patterns = _class_patterns(cfg.context_patterns, pattern_rng)
        unambiguous, twins = _code_unambiguous, _code_twins
    else:
        patterns = _dialog_patterns(cfg.context_patterns, pattern_rng)
        unambiguous, twins = _dialog_unambiguous, _dialog_twins

    n_ambiguous = int(round(cfg.ambiguity_rate * cfg.num_examples))
    drafts: List[_Draft] = []
    while len(drafts) < n_ambiguous:
        pattern = patterns[int(rng.integers(len(patterns)))]
        drafts.extend(twins(pattern, min(2, n_ambiguous - len(drafts)), rng))
    while len(drafts) < cfg.num_examples:
        drafts.append(unambiguous(patterns[int(rng.integers(len(patterns)))], rng))

    examples = []
    for i, position in enumerate(rng.permutation(len(drafts)).tolist()):
        draft = drafts[position]
        constants = grammar.constants_for(draft.context)
        surface = ast_to_tokens(actions_to_ast(grammar, draft.actions, constants))
        example = Example(
            id=f"{id_prefix}-{i:04d}",
            utterance=draft.utterance,
            context=draft.context,
            actions=list(draft.actions),
            surface=surface,
        )
        if cfg.weak_supervision_rate > 0 and rng.random() < cfg.weak_supervision_rate:
            example.candidates = _spurious_candidates(example.actions, grammar, constants, cfg.max_candidates, rng)
            example.actions, example.surface = [], []
        examples.append(example)

    logger.info(
        f"Generated {len(examples)} {cfg.task} examples "
        f"({n_ambiguous} ambiguous, {sum(1 for e in examples if not e.is_supervised)} weakly supervised)"
    )
    return examples
