"""
Plain parser training stage
"""
from typing import Any, Dict

from usecases.base_usecase import BaseStageUseCase


class TrainParserUseCase(BaseStageUseCase):
    """Supervised sequence-to-action training without meta-learning"""

    stage_name = 'train-parser'

    def execute(self) -> Dict[str, Any]:
        parser = self.ctx.parser_model()
        params, history = parser.train(self.ctx.train_examples, self.rng)
        self.ctx.set_parser_params(params)
        return {
            'epochs': len(history.train_losses),
            'best_epoch': history.best_epoch,
            'stopped_early': history.stopped_early,
            'final_loss': history.final_loss,
        }
