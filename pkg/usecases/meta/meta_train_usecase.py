"""
Retrieval-MAML training stage
"""
from typing import Any, Dict
import logging

from usecases.base_usecase import BaseStageUseCase
from usecases.meta.maml import MetaLearner, RetrievalSupport

logger = logging.getLogger(__name__)


class MetaTrainUseCase(BaseStageUseCase):
    """Meta-train the parser on retrieved support sets; optionally warm-started from train-parser"""

    stage_name = 'meta-train'

    def execute(self) -> Dict[str, Any]:
        profile = self.ctx.profile
        parser = self.ctx.parser_model()
        if profile.experiment.warm_start and self.ctx.paths.parser.with_suffix('.manifest').exists():
            logger.info("Warm start from the plain parser checkpoint")
            params = self.ctx.parser_params
        else:
            params = parser.init_params(self.rng)

        pool = self.ctx.train_pool
        support = RetrievalSupport(
            index=self.ctx.index,
            retriever=self.ctx.retriever_model(),
            params=self.ctx.retriever_params,
            pool=pool,
            k=profile.meta.k,
            mode=profile.experiment.retrieval,
        )
        learner = MetaLearner(parser, profile.meta, support)
        params, history = learner.meta_train(params, self.ctx.train_examples, self.rng,
                                             log_path=self.ctx.paths.meta_log)
        self.ctx.set_parser_params(params)
        return {
            'iterations': len(history.iterations),
            'skipped_inner_steps': history.skipped,
            'final_loss': history.final_loss,
        }
