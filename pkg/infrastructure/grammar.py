"""
Production-rule grammars and the leftmost derivation state machine
Layer 3 - Infrastructure

Grammar file format (line oriented):

    # comment
    @start Stmt
    @terminals return ; this .
    @category ClassMethod source=class_methods
    Stmt -> return Expr ;
          | Call ;

The start symbol defaults to the first left-hand side. Rule ids are dense and
follow file order.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union
import logging

from models import Action, ConstantSource, ContextEnv, DerivationError, GrammarError, ValidationError

logger = logging.getLogger(__name__)

ARROWS = ('->', '→')
DEFAULT_BUDGET = 200000

Constants = Mapping[str, Sequence[str]]


@dataclass(frozen=True)
class Rule:
    id: int
    lhs: str
    rhs: Tuple[str, ...]
    line: int = 0

    def __str__(self) -> str:
        return f"{self.lhs} -> {' '.join(self.rhs)}"


@dataclass(frozen=True)
class Category:
    """Instantiable symbol whose constants are copied from the context"""
    name: str
    source: ConstantSource


class Grammar:
    """Immutable grammar: nonterminals, terminals, rules and instantiable categories"""

    def __init__(self, start: str, terminals: Sequence[str], rules: Sequence[Rule],
                 categories: Sequence[Category], source: Optional[str] = None):
        self.start = start
        self.terminals = frozenset(terminals)
        self.rules: Tuple[Rule, ...] = tuple(rules)
        self.categories: Dict[str, Category] = {c.name: c for c in categories}
        self.category_names: Tuple[str, ...] = tuple(c.name for c in categories)
        self.source = source

        nonterminals: List[str] = []
        self._by_lhs: Dict[str, List[int]] = {}
        for rule in self.rules:
            if rule.lhs not in self._by_lhs:
                nonterminals.append(rule.lhs)
                self._by_lhs[rule.lhs] = []
            self._by_lhs[rule.lhs].append(rule.id)
        self.nonterminals: Tuple[str, ...] = tuple(nonterminals)

    @property
    def num_rules(self) -> int:
        return len(self.rules)

    @property
    def num_actions(self) -> int:
        """Size of the action id space: one id per rule plus one per category"""
        return len(self.rules) + len(self.category_names)

    def rules_for(self, symbol: str) -> List[int]:
        return list(self._by_lhs.get(symbol, []))

    def is_nonterminal(self, symbol: str) -> bool:
        return symbol in self._by_lhs

    def is_category(self, symbol: str) -> bool:
        return symbol in self.categories

    def is_terminal(self, symbol: str) -> bool:
        return symbol in self.terminals

    def action_index(self, action: Action) -> int:
        if action.is_apply:
            return action.rule_id
        return len(self.rules) + self.category_names.index(action.category)

    def all_actions(self, constants: Constants) -> List[Action]:
        """Every action the grammar can express for the given constants"""
        actions = [Action.apply(r.id) for r in self.rules]
        for name in self.category_names:
            actions.extend(Action.instantiate(name, i) for i in range(len(constants.get(name, ()))))
        return actions

    def constants_for(self, context: ContextEnv) -> Dict[str, List[str]]:
        """Category name -> constant names available in a context"""
        return {name: context.constants(cat.source) for name, cat in self.categories.items()}

    def __repr__(self) -> str:
        return (f"Grammar(start={self.start!r}, rules={self.num_rules}, "
                f"nonterminals={len(self.nonterminals)}, categories={list(self.category_names)})")


def load_grammar(text: str, source: Optional[str] = None) -> Grammar:
    """Parse grammar file contents"""
    start: Optional[Tuple[str, int]] = None
    terminals: Dict[str, int] = {}
    categories: List[Category] = []
    category_lines: Dict[str, int] = {}
    raw_rules: List[Tuple[str, Tuple[str, ...], int]] = []
    seen: Dict[Tuple[str, Tuple[str, ...]], int] = {}
    current_lhs: Optional[str] = None

    def add_alternatives(lhs: str, body: str, lineno: int):
        for alternative in body.split('|'):
            rhs = tuple(alternative.split())
            if not rhs:
                raise GrammarError(f"empty alternative for '{lhs}'", lineno)
            key = (lhs, rhs)
            if key in seen:
                raise GrammarError(f"duplicate rule '{lhs} -> {' '.join(rhs)}' (first on line {seen[key]})", lineno)
            seen[key] = lineno
            raw_rules.append((lhs, rhs, lineno))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if line.startswith('@'):
            directive, *args = line.split()
            if directive == '@start':
                if len(args) != 1:
                    raise GrammarError("@start takes exactly one symbol", lineno)
                start = (args[0], lineno)
            elif directive == '@terminals':
                for symbol in args:
                    terminals.setdefault(symbol, lineno)
            elif directive == '@category':
                if len(args) != 2 or not args[1].startswith('source='):
                    raise GrammarError("expected '@category NAME source=KIND'", lineno)
                try:
                    kind = ConstantSource(args[1][len('source='):])
                except ValueError:
                    raise GrammarError(f"unknown constant source '{args[1]}'", lineno)
                if args[0] in category_lines:
                    raise GrammarError(f"category '{args[0]}' declared twice", lineno)
                category_lines[args[0]] = lineno
                categories.append(Category(args[0], kind))
            else:
                raise GrammarError(f"unknown directive '{directive}'", lineno)
            continue
        if line.startswith('|'):
            if current_lhs is None:
                raise GrammarError("alternative without a rule", lineno)
            add_alternatives(current_lhs, line[1:], lineno)
            continue
        arrow = next((a for a in ARROWS if a in line), None)
        if arrow is None:
            raise GrammarError(f"expected 'LHS -> RHS', got '{line}'", lineno)
        lhs, _, body = line.partition(arrow)
        lhs = lhs.strip()
        if not lhs or len(lhs.split()) != 1:
            raise GrammarError("left-hand side must be a single symbol", lineno)
        current_lhs = lhs
        add_alternatives(lhs, body, lineno)

    if not raw_rules:
        raise GrammarError("grammar has no rules, missing start symbol")

    lhs_symbols = {lhs for lhs, _, _ in raw_rules}
    for lhs, _, lineno in raw_rules:
        if lhs in terminals:
            raise GrammarError(f"symbol '{lhs}' is both a terminal and a nonterminal", lineno)
        if lhs in category_lines:
            raise GrammarError(f"category '{lhs}' cannot have rules", lineno)
    for name, lineno in category_lines.items():
        if name in terminals:
            raise GrammarError(f"symbol '{name}' is both a terminal and a category", lineno)
    for lhs, rhs, lineno in raw_rules:
        for symbol in rhs:
            if symbol not in terminals and symbol not in lhs_symbols and symbol not in category_lines:
                raise GrammarError(f"undeclared symbol '{symbol}'", lineno)

    if start is None:
        start_symbol = raw_rules[0][0]
    else:
        start_symbol, lineno = start
        if start_symbol not in lhs_symbols:
            raise GrammarError(f"start symbol '{start_symbol}' has no rules", lineno)

    rules = [Rule(i, lhs, rhs, lineno) for i, (lhs, rhs, lineno) in enumerate(raw_rules)]
    grammar = Grammar(start_symbol, list(terminals), rules, categories, source)
    logger.debug(f"Loaded {grammar}")
    return grammar


def load_grammar_file(path: Union[str, Path]) -> Grammar:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"grammar file not found: {path}")
    return load_grammar(path.read_text(), source=str(path))


@dataclass
class AstNode:
    """Node of a (possibly partial) abstract syntax tree"""
    symbol: str
    action: Optional[Action] = None
    children: List['AstNode'] = field(default_factory=list)
    value: Optional[str] = None
    pending: bool = False

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def is_complete(self) -> bool:
        return not self.pending and all(c.is_complete for c in self.children)

    def dump(self, indent: int = 0) -> str:
        """Indented debug rendering, one node per line"""
        pad = '  ' * indent
        if self.pending:
            line = f"{pad}{self.symbol} <pending>"
        elif self.action is None:
            line = f"{pad}'{self.value}'"
        elif not self.action.is_apply:
            line = f"{pad}{self.symbol} = {self.value}  [{self.action}]"
        else:
            line = f"{pad}{self.symbol}  [{self.action}]"
        return "\n".join([line] + [c.dump(indent + 1) for c in self.children])


def ast_to_tokens(ast: AstNode) -> List[str]:
    """Left-to-right leaf yield; constants rendered by name"""
    if ast.pending:
        raise DerivationError(f"cannot render incomplete AST (pending '{ast.symbol}')")
    if ast.children:
        tokens = []
        for child in ast.children:
            tokens.extend(ast_to_tokens(child))
        return tokens
    return [ast.value if ast.value is not None else ast.symbol]


def ast_to_actions(ast: AstNode) -> List[Action]:
    """Leftmost derivation of an AST (preorder over action-bearing nodes)"""
    actions = []
    if ast.action is not None:
        actions.append(ast.action)
    for child in ast.children:
        actions.extend(ast_to_actions(child))
    return actions


@dataclass(frozen=True)
class FrontierEntry:
    """Pending symbol with the action that introduced it and the caller's state handle"""
    symbol: str
    parent_action: Optional[Action] = None
    parent_state: Any = None
    parent_step: int = -1


@dataclass(frozen=True, eq=False)
class DerivationState:
    """
    Value-typed leftmost derivation in progress.

    The frontier is a stack whose last entry is the next symbol to expand.
    When `constants` is None, constant indices are not range-checked.
    """
    grammar: Grammar
    constants: Optional[Dict[str, List[str]]]
    frontier: Tuple[FrontierEntry, ...]
    actions: Tuple[Action, ...] = ()

    @classmethod
    def initial(cls, grammar: Grammar, constants: Optional[Constants] = None) -> 'DerivationState':
        consts = None if constants is None else {k: list(v) for k, v in constants.items()}
        return cls(grammar, consts, (FrontierEntry(grammar.start),))

    @property
    def is_complete(self) -> bool:
        return not self.frontier

    @property
    def top(self) -> FrontierEntry:
        if not self.frontier:
            raise DerivationError("derivation is complete", len(self.actions))
        return self.frontier[-1]

    def legitimate_actions(self) -> List[Action]:
        """Apply actions for the top nonterminal, or one Instantiate per constant of the top category"""
        symbol = self.top.symbol
        if self.grammar.is_category(symbol):
            if self.constants is None:
                raise ValidationError(f"constants of category '{symbol}' are unknown")
            count = len(self.constants.get(symbol, ()))
            return [Action.instantiate(symbol, i) for i in range(count)]
        return [Action.apply(r) for r in self.grammar.rules_for(symbol)]

    def is_legitimate(self, action: Action) -> bool:
        if self.is_complete:
            return False
        symbol = self.top.symbol
        if action.is_apply:
            return (0 <= action.rule_id < self.grammar.num_rules
                    and self.grammar.rules[action.rule_id].lhs == symbol)
        if action.category != symbol or not self.grammar.is_category(symbol) or action.constant < 0:
            return False
        if self.constants is None:
            return True
        return action.constant < len(self.constants.get(symbol, ()))

    def apply(self, action: Action, state_handle: Any = None) -> 'DerivationState':
        """Expand the top symbol; pushed entries record `action` and `state_handle` as parent"""
        step = len(self.actions)
        if self.is_complete:
            raise DerivationError("trailing action after complete derivation", step)
        if not self.is_legitimate(action):
            raise DerivationError(f"illegal action {action} for symbol '{self.top.symbol}'", step)
        frontier = list(self.frontier[:-1])
        if action.is_apply:
            rule = self.grammar.rules[action.rule_id]
            pushed = [
                FrontierEntry(s, action, state_handle, step)
                for s in rule.rhs if not self.grammar.is_terminal(s)
            ]
            frontier.extend(reversed(pushed))
        return DerivationState(self.grammar, self.constants, tuple(frontier), self.actions + (action,))

    def ast(self) -> AstNode:
        """Tree built so far; unexpanded symbols are pending nodes"""
        replay: Iterator[Action] = iter(self.actions)
        return self._expand(self.grammar.start, replay)

    def _expand(self, symbol: str, replay: Iterator[Action]) -> AstNode:
        if self.grammar.is_terminal(symbol):
            return AstNode(symbol, value=symbol)
        action = next(replay, None)
        if action is None:
            return AstNode(symbol, pending=True)
        if not action.is_apply:
            return AstNode(symbol, action=action, value=self._constant_name(action))
        rule = self.grammar.rules[action.rule_id]
        return AstNode(symbol, action=action, children=[self._expand(s, replay) for s in rule.rhs])

    def _constant_name(self, action: Action) -> str:
        if self.constants is None:
            return action.token
        return self.constants[action.category][action.constant]


def actions_to_ast(grammar: Grammar, actions: Sequence[Action],
                   constants: Optional[Constants] = None) -> AstNode:
    """AST of a complete legal leftmost derivation; errors carry the offending index"""
    state = DerivationState.initial(grammar, constants)
    for action in actions:
        state = state.apply(action)
    if not state.is_complete:
        raise DerivationError("incomplete derivation", len(actions))
    return state.ast()


def enumerate_derivations(grammar: Grammar, constants: Optional[Constants], max_actions: int,
                          budget: int = DEFAULT_BUDGET) -> List[Tuple[Action, ...]]:
    """All complete legal derivations of at most max_actions actions, depth first"""
    constants = constants or {}
    results: List[Tuple[Action, ...]] = []
    expansions = 0
    stack = [DerivationState.initial(grammar, constants)]
    while stack:
        state = stack.pop()
        if state.is_complete:
            results.append(state.actions)
            continue
        # every pending symbol needs at least one more action
        if len(state.actions) + len(state.frontier) > max_actions:
            continue
        expansions += 1
        if expansions > budget:
            raise GrammarError(f"enumeration budget of {budget} expansions exceeded")
        for action in reversed(state.legitimate_actions()):
            stack.append(state.apply(action))
    return results
