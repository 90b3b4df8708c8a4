"""
Retriever training stage
"""
from typing import Any, Dict
import logging

from usecases.base_usecase import BaseStageUseCase

logger = logging.getLogger(__name__)


class TrainRetrieverUseCase(BaseStageUseCase):
    """Train the context-aware retriever on the supervised training examples"""

    stage_name = 'train-retriever'

    def execute(self) -> Dict[str, Any]:
        model = self.ctx.retriever_model()
        examples = self.ctx.train_examples
        params, history = model.train(examples, self.rng)
        self.ctx.set_retriever_params(params)

        supervised = [e for e in examples if e.is_supervised]
        token_nll = model.token_nll(params, supervised)
        logger.info(f"Retriever token NLL on the training set: {token_nll:.4f}")
        return {
            'examples': len(supervised),
            'epochs': len(history.train_losses),
            'best_epoch': history.best_epoch,
            'stopped_early': history.stopped_early,
            'final_loss': history.final_loss,
            'token_nll': token_nll,
        }
