"""
Exact match, corpus BLEU-4 and token edit distance
"""
from collections import Counter
from typing import List, Sequence, Tuple
import logging

from sacrebleu.metrics import BLEU

from models import ValidationError

logger = logging.getLogger(__name__)

MAX_ORDER = 4


def exact_match(pred: Sequence[str], gold: Sequence[str]) -> bool:
    return list(pred) == list(gold)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_statistics(corpus: Sequence[Tuple[Sequence[str], Sequence[str]]]) -> Tuple[List[int], List[int], int, int]:
    """Clipped n-gram matches, n-gram totals, hypothesis length, reference length"""
    correct = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    sys_len = ref_len = 0
    for pred, gold in corpus:
        sys_len += len(pred)
        ref_len += len(gold)
        for n in range(1, MAX_ORDER + 1):
            hyp, ref = _ngrams(pred, n), _ngrams(gold, n)
            correct[n - 1] += sum(min(c, ref[g]) for g, c in hyp.items())
            total[n - 1] += max(0, len(pred) - n + 1)
    return correct, total, sys_len, ref_len


def bleu4(corpus: Sequence[Tuple[Sequence[str], Sequence[str]]]) -> float:
    """
    Corpus BLEU-4 in [0, 100] over pre-tokenized (pred, gold) pairs.

    Orders 2-4 with no match get add-one on both counts; a zero unigram match
    gives 0.
    """
    if not corpus:
        raise ValidationError("bleu4 needs a non-empty corpus")
    correct, total, sys_len, ref_len = bleu_statistics(corpus)
    if sys_len == 0 or correct[0] == 0:
        return 0.0
    for n in range(1, MAX_ORDER):
        if correct[n] == 0:
            correct[n] += 1
            total[n] += 1
    score = BLEU.compute_bleu(correct, total, sys_len, ref_len, smooth_method='none', max_ngram_order=MAX_ORDER)
    return float(score.score)


def edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Levenshtein distance with unit costs"""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (x != y)))
        previous = current
    return previous[-1]
