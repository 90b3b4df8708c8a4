"""
Retrieval index stage
"""
from typing import Any, Dict
import logging

from models import RetrievalMode
from usecases.base_usecase import BaseStageUseCase
from usecases.retriever.index import ambiguous_queries, build_index, retrieval_accuracy

logger = logging.getLogger(__name__)


class BuildIndexUseCase(BaseStageUseCase):
    """Index the mean directions of the supervised training examples"""

    stage_name = 'build-index'

    def execute(self) -> Dict[str, Any]:
        model = self.ctx.retriever_model()
        params = self.ctx.retriever_params
        examples = self.ctx.train_examples
        index = build_index(examples, model, params)
        self.ctx.set_index(index)

        metadata: Dict[str, Any] = {'rows': len(index)}
        ambiguous = ambiguous_queries(examples)
        if len(index) > 1 and ambiguous:
            pool = self.ctx.train_pool
            for mode in RetrievalMode:
                accuracy = retrieval_accuracy(index, ambiguous, pool, model, params, mode)
                metadata[f'accuracy_at_1_{mode.value}'] = accuracy
                logger.info(f"Leave-one-out accuracy@1 on {len(ambiguous)} ambiguous examples "
                            f"({mode.value}): {accuracy:.3f}")
        return metadata
