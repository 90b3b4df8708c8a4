"""
Shared fixtures: the small code dataset and its grammar
"""
from pathlib import Path

import pytest

from infrastructure.dataset import build_vocab, load_dataset
from infrastructure.grammar import load_grammar_file

ROOT = Path(__file__).resolve().parent.parent
FIXTURE_DATASET = ROOT / 'fixtures' / 'code_small.jsonl'
JAVA_GRAMMAR = ROOT / 'grammars' / 'java_toy.grammar'
DIALOG_GRAMMAR = ROOT / 'grammars' / 'dialog_toy.grammar'


@pytest.fixture
def java_grammar():
    return load_grammar_file(JAVA_GRAMMAR)


@pytest.fixture
def small_examples():
    examples, _ = load_dataset(FIXTURE_DATASET)
    return examples


@pytest.fixture
def by_id(small_examples):
    return {e.id: e for e in small_examples}


@pytest.fixture
def small_vocab(small_examples):
    return build_vocab(small_examples)
