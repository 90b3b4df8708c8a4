"""
Unit tests for grammar loading and the derivation state machine
"""
import pytest

from models import Action, ActionKind, DerivationError, GrammarError, ValidationError
from infrastructure.grammar import (
    DerivationState, actions_to_ast, ast_to_actions, ast_to_tokens, enumerate_derivations, load_grammar,
    load_grammar_file,
)
from tests.conftest import DIALOG_GRAMMAR, JAVA_GRAMMAR

A = Action.apply
var = lambda i: Action.instantiate('ClassVariable', i)
meth = lambda i: Action.instantiate('ClassMethod', i)

CONSTANTS = {'ClassVariable': ['itemCount', 'vecElements'], 'ClassMethod': ['printItemCount']}

UNARY = """
@terminals a
S -> a S | a
"""


class TestGrammarLoading:
    """Tests for the grammar file format"""

    def test_java_grammar_structure(self, java_grammar):
        """Test rule ids, categories and the action id space"""
        assert java_grammar.start == 'Stmt'
        assert java_grammar.num_rules == 9
        assert java_grammar.category_names == ('ClassMethod', 'ClassVariable')
        assert java_grammar.num_actions == 11
        assert java_grammar.rules_for('Expr') == [4, 5, 6]
        assert str(java_grammar.rules[8]) == 'Field -> this . ClassVariable'
        assert java_grammar.action_index(meth(3)) == 9
        assert java_grammar.action_index(var(0)) == 10

    def test_dialog_grammar_loads(self):
        """Test the conversational grammar"""
        grammar = load_grammar_file(DIALOG_GRAMMAR)
        assert grammar.start == 'Query'
        assert grammar.rules_for('Rel') == [3, 4, 5]
        assert grammar.is_category('Entity')

    def test_start_defaults_to_first_lhs(self):
        """Test the implicit start symbol"""
        assert load_grammar(UNARY).start == 'S'

    def test_arrow_variants(self):
        """Test the unicode arrow"""
        grammar = load_grammar("@terminals a b\nS → a | b\n")
        assert grammar.num_rules == 2

    @pytest.mark.parametrize('text,line', [
        ("@terminals a\nS -> a\nS -> a\n", 3),
        ("@terminals a\nS -> a B\n", 2),
        ("@terminals a\n@bogus x\nS -> a\n", 2),
        ("@terminals a\nS -> a |\n", 2),
        ("@start T\n@terminals a\nS -> a\n", 1),
        ("@terminals a\n| a\n", 2),
    ])
    def test_errors_carry_line_numbers(self, text, line):
        """Test duplicate rules, undeclared symbols, bad directives and orphan alternatives"""
        with pytest.raises(GrammarError) as exc:
            load_grammar(text)
        assert exc.value.line == line

    def test_empty_grammar(self):
        """Test a file without rules"""
        with pytest.raises(GrammarError):
            load_grammar("# nothing here\n@terminals a\n")

    def test_unknown_constant_source(self):
        """Test category source validation"""
        with pytest.raises(GrammarError):
            load_grammar("@category X source=nowhere\nS -> X\n")

    def test_missing_file(self, tmp_path):
        """Test loading an absent grammar file"""
        with pytest.raises(ValidationError):
            load_grammar_file(tmp_path / 'absent.grammar')


class TestDerivationState:
    """Tests for leftmost derivations"""

    def test_initial_legitimate_actions(self, java_grammar):
        """Test the start symbol's rules are the only choices"""
        state = DerivationState.initial(java_grammar, CONSTANTS)
        assert state.legitimate_actions() == [A(0), A(1), A(2), A(3)]

    def test_category_offers_one_action_per_constant(self, java_grammar):
        """Test instantiation choices come from the context"""
        state = DerivationState.initial(java_grammar, CONSTANTS)
        for action in (A(0), A(5), A(8)):
            state = state.apply(action)
        assert state.top.symbol == 'ClassVariable'
        assert state.legitimate_actions() == [var(0), var(1)]
        assert all(a.kind == ActionKind.INSTANTIATE for a in state.legitimate_actions())

    def test_category_without_constants_has_no_actions(self, java_grammar):
        """Test an empty legitimate set"""
        state = DerivationState.initial(java_grammar, {'ClassVariable': ['x'], 'ClassMethod': []})
        state = state.apply(A(1)).apply(A(7))
        assert state.legitimate_actions() == []

    def test_parent_is_recorded(self, java_grammar):
        """Test pushed symbols remember the introducing action and state handle"""
        state = DerivationState.initial(java_grammar, CONSTANTS).apply(A(0), state_handle='s0')
        assert state.top.symbol == 'Expr'
        assert state.top.parent_action == A(0)
        assert state.top.parent_state == 's0'
        assert state.top.parent_step == 0

    def test_apply_does_not_modify_the_state(self, java_grammar):
        """Test value semantics"""
        state = DerivationState.initial(java_grammar, CONSTANTS)
        state.apply(A(0))
        assert state.actions == ()
        assert state.top.symbol == 'Stmt'

    def test_illegal_action_reports_index(self, java_grammar):
        """Test the offending action index"""
        with pytest.raises(DerivationError) as exc:
            actions_to_ast(java_grammar, [A(0), A(8)], CONSTANTS)
        assert exc.value.index == 1

    def test_out_of_range_constant(self, java_grammar):
        """Test a constant index beyond the context"""
        with pytest.raises(DerivationError) as exc:
            actions_to_ast(java_grammar, [A(3), A(8), var(2)], CONSTANTS)
        assert exc.value.index == 2

    def test_incomplete_derivation(self, java_grammar):
        """Test a sequence that stops early"""
        with pytest.raises(DerivationError) as exc:
            actions_to_ast(java_grammar, [A(0), A(5)], CONSTANTS)
        assert exc.value.index == 2

    def test_trailing_action(self, java_grammar):
        """Test actions after completion"""
        with pytest.raises(DerivationError) as exc:
            actions_to_ast(java_grammar, [A(3), A(8), var(0), A(0)], CONSTANTS)
        assert exc.value.index == 3

    def test_unknown_constants(self, java_grammar):
        """Test legitimate actions of a category when no context is attached"""
        state = DerivationState.initial(java_grammar).apply(A(3)).apply(A(8))
        with pytest.raises(ValidationError):
            state.legitimate_actions()

    @pytest.mark.parametrize('path,constants', [
        (JAVA_GRAMMAR, CONSTANTS),
        (DIALOG_GRAMMAR, {'Entity': ['france', 'obama', 'paris']}),
    ])
    def test_legitimate_actions_match_brute_force(self, path, constants):
        """Test legitimate_actions equals trying every action with apply, on all states within 8 actions"""
        grammar = load_grammar_file(path)
        candidates = grammar.all_actions(constants)
        candidates += [Action.apply(-1), Action.apply(grammar.num_rules)]
        candidates += [Action.instantiate(name, len(constants.get(name, ()))) for name in grammar.category_names]
        candidates += [Action.instantiate(name, -1) for name in grammar.category_names]
        frontier, visited = [DerivationState.initial(grammar, constants)], 0
        while frontier:
            state = frontier.pop()
            if state.is_complete or len(state.actions) >= 8:
                continue
            visited += 1
            accepted = []
            for action in candidates:
                try:
                    state.apply(action)
                except DerivationError:
                    continue
                accepted.append(action)
            assert sorted(accepted, key=lambda a: a.sort_key) == \
                sorted(state.legitimate_actions(), key=lambda a: a.sort_key)
            frontier.extend(state.apply(a) for a in accepted)
        assert visited > 1


class TestAst:
    """Tests for AST rendering"""

    def test_surface_tokens(self, java_grammar):
        """Test the leaf yield with constants rendered by name"""
        ast = actions_to_ast(java_grammar, [A(0), A(5), A(8), var(1)], CONSTANTS)
        assert ast_to_tokens(ast) == ['return', 'this', '.', 'vecElements', ';']

    def test_loop_surface(self, java_grammar):
        """Test a longer statement"""
        ast = actions_to_ast(java_grammar, [A(2), A(8), var(1)], CONSTANTS)
        assert ' '.join(ast_to_tokens(ast)) == 'for ( int e : this . vecElements ) { e ++ ; }'

    def test_actions_round_trip(self, java_grammar):
        """Test preorder actions of a derived AST"""
        actions = [A(0), A(4), A(7), meth(0)]
        assert ast_to_actions(actions_to_ast(java_grammar, actions, CONSTANTS)) == actions

    def test_partial_ast_dump(self, java_grammar):
        """Test pending nodes in a partial tree"""
        ast = DerivationState.initial(java_grammar, CONSTANTS).apply(A(0)).ast()
        dump = ast.dump()
        assert 'Stmt  [Apply(0)]' in dump
        assert 'Expr <pending>' in dump
        assert not ast.is_complete
        with pytest.raises(DerivationError):
            ast_to_tokens(ast)


class TestEnumeration:
    """Tests for exhaustive derivation enumeration"""

    @pytest.mark.parametrize('max_actions,count', [(1, 1), (3, 3), (5, 5)])
    def test_unary_grammar_counts(self, max_actions, count):
        """Test S -> a S | a has one derivation per length"""
        assert len(enumerate_derivations(load_grammar(UNARY), {}, max_actions)) == count

    def test_every_enumerated_sequence_is_legal(self, java_grammar):
        """Test enumeration only yields complete legal derivations"""
        derivations = enumerate_derivations(java_grammar, CONSTANTS, 5)
        assert derivations
        for actions in derivations:
            actions_to_ast(java_grammar, actions, CONSTANTS)
        assert (A(3), A(8), var(0)) in derivations

    def test_budget(self, java_grammar):
        """Test the expansion budget"""
        with pytest.raises(GrammarError):
            enumerate_derivations(java_grammar, CONSTANTS, 6, budget=3)
