"""
Spurious-candidate resolution stage
"""
from typing import Any, Dict
import logging

from infrastructure.dataset import save_dataset
from usecases.base_usecase import BaseStageUseCase
from usecases.meta.maml import RetrievalSupport, resolve_weak_examples

logger = logging.getLogger(__name__)


class ResolveCandidatesUseCase(BaseStageUseCase):
    """Pick one candidate per weakly supervised example by edit distance to retrieved neighbours"""

    stage_name = 'resolve-candidates'

    def execute(self) -> Dict[str, Any]:
        examples = self.ctx.train_examples
        weak = [e for e in examples if not e.is_supervised]
        if not weak:
            logger.info("No weakly supervised examples to resolve")
            return {'resolved': 0}

        profile = self.ctx.profile
        support = RetrievalSupport(
            index=self.ctx.index,
            retriever=self.ctx.retriever_model(),
            params=self.ctx.retriever_params,
            pool={e.id: e for e in examples if e.is_supervised},
            k=profile.meta.k,
            mode=profile.experiment.retrieval,
        )
        resolved, count = resolve_weak_examples(examples, self.ctx.grammar, support)
        save_dataset(self.ctx.paths.resolved_train, resolved, self.ctx.grammar.source)
        self.ctx.set_train_examples(resolved)
        logger.info(f"Resolved {count} weakly supervised examples")
        return {'resolved': count}
