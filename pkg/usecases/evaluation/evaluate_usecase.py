"""
Evaluation stage: exact match and BLEU-4 of predictions.tsv against the test set
"""
from typing import Any, Dict, List, Optional, Sequence
import logging

from models import EvalReport, Example, ExampleScore, Prediction, RolloutStatus, ValidationError
from infrastructure.dataset import load_predictions
from infrastructure.metrics import bleu4, exact_match
from usecases.base_usecase import BaseStageUseCase

logger = logging.getLogger(__name__)


def score_predictions(predictions: Sequence[Prediction], gold: Sequence[Example]) -> EvalReport:
    """Per-example scores in gold order plus corpus BLEU; failed rollouts count as empty output"""
    by_id = {p.example_id: p for p in predictions}
    missing = [e.id for e in gold if e.id not in by_id]
    if missing:
        raise ValidationError(f"no prediction for {len(missing)} examples, e.g. {missing[0]}")

    scores: List[ExampleScore] = []
    corpus = []
    for example in gold:
        prediction = by_id[example.id]
        tokens = prediction.tokens if prediction.status == RolloutStatus.OK else []
        corpus.append((tokens, example.surface))
        scores.append(ExampleScore(
            example_id=example.id,
            exact=prediction.status == RolloutStatus.OK and exact_match(tokens, example.surface),
            bleu=bleu4([(tokens, example.surface)]),
            status=prediction.status,
        ))
    return EvalReport(scores=scores, corpus_bleu=bleu4(corpus))


class EvaluateUseCase(BaseStageUseCase):
    """Scores the prediction dump; the report is kept on `self.report`"""

    stage_name = 'evaluate'

    report: Optional[EvalReport] = None

    def execute(self) -> Dict[str, Any]:
        gold = [e for e in self.ctx.test_examples if e.is_supervised]
        if not gold:
            raise ValidationError("test set has no examples with a gold output")
        self.report = score_predictions(load_predictions(self.ctx.paths.predictions), gold)
        logger.info(f"Exact match {self.report.exact_match:.2f}%, corpus BLEU-4 {self.report.corpus_bleu:.2f}, "
                    f"{self.report.failure_count} failed rollouts")
        return {
            'examples': self.report.total_count,
            'exact_match': self.report.exact_match,
            'corpus_bleu': self.report.corpus_bleu,
            'failures': self.report.failure_count,
        }
