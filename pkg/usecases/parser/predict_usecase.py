"""
Prediction stage for every experiment mode
"""
from typing import Any, Dict, List, Optional
import logging

from models import Example, ExperimentMode, Prediction, RolloutStatus
from infrastructure.dataset import save_predictions
from usecases.base_usecase import BaseStageUseCase
from usecases.context import ExperimentContext
from usecases.meta.maml import RetrievalSupport, adapted_predict

logger = logging.getLogger(__name__)


class PredictUseCase(BaseStageUseCase):
    """Write predictions.tsv for the test set"""

    stage_name = 'predict'

    def __init__(self, ctx: ExperimentContext, mode: Optional[ExperimentMode] = None):
        super().__init__(ctx)
        self.mode = ExperimentMode(mode) if mode is not None else ctx.profile.experiment.mode

    def _support(self) -> RetrievalSupport:
        profile = self.ctx.profile
        return RetrievalSupport(
            index=self.ctx.index,
            retriever=self.ctx.retriever_model(),
            params=self.ctx.retriever_params,
            pool=self.ctx.train_pool,
            k=profile.meta.k,
            mode=profile.experiment.retrieval,
        )

    def _retrieval_only(self, queries: List[Example]) -> List[Prediction]:
        """The nearest training example's output is the prediction"""
        support = self._support()
        support.k = 1
        predictions = []
        for query in queries:
            nearest = support(query)
            if not nearest:
                predictions.append(Prediction(query.id, RolloutStatus.FAILED, [], []))
                continue
            neighbour = nearest[0]
            predictions.append(Prediction(
                example_id=query.id,
                status=RolloutStatus.OK,
                actions=[a.token for a in neighbour.actions],
                tokens=list(neighbour.surface),
            ))
        return predictions

    def _parse(self, queries: List[Example]) -> List[Prediction]:
        profile = self.ctx.profile
        parser = self.ctx.parser_model()
        params = self.ctx.parser_params
        max_actions = profile.experiment.max_actions
        support = self._support() if self.mode == ExperimentMode.S2A_MAML else None

        predictions = []
        for query in queries:
            if support is not None:
                result = adapted_predict(parser, params, query, support(query), profile.meta, max_actions)
            else:
                result = parser.parse_greedy(params, query, max_actions)
            predictions.append(Prediction(
                example_id=query.id,
                status=result.status,
                actions=[a.token for a in result.actions],
                tokens=result.tokens,
            ))
        return predictions

    def execute(self) -> Dict[str, Any]:
        queries = self.ctx.test_examples
        logger.info(f"Predicting {len(queries)} test examples in mode {self.mode.value}")
        if self.mode == ExperimentMode.RETRIEVAL_ONLY:
            predictions = self._retrieval_only(queries)
        else:
            predictions = self._parse(queries)
        save_predictions(self.ctx.paths.predictions, predictions)
        return {
            'mode': self.mode.value,
            'predictions': len(predictions),
            'failures': sum(1 for p in predictions if p.status == RolloutStatus.FAILED),
        }
