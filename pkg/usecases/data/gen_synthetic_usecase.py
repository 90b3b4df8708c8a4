"""
Synthetic dataset generation stage
"""
from typing import Any, Dict
import logging

from infrastructure.dataset import save_dataset
from infrastructure.grammar import load_grammar_file
from infrastructure.synthetic import generate_synthetic
from usecases.base_usecase import BaseStageUseCase

logger = logging.getLogger(__name__)


class GenSyntheticUseCase(BaseStageUseCase):
    """Writes data/train.jsonl and data/test.jsonl; both splits share the context patterns"""

    stage_name = 'gen-synthetic'

    def execute(self) -> Dict[str, Any]:
        data = self.ctx.profile.data
        paths = self.ctx.paths
        train_cfg = data.synthetic(self.ctx.seed, 'train')
        grammar = load_grammar_file(train_cfg.grammar_path)

        train = generate_synthetic(train_cfg, id_prefix='train', split=0, grammar=grammar)
        test = generate_synthetic(data.synthetic(self.ctx.seed, 'test'), id_prefix='test', split=1, grammar=grammar)
        save_dataset(paths.train, train, train_cfg.grammar_path)
        save_dataset(paths.test, test, train_cfg.grammar_path)

        self.ctx.clear_derived()

        return {
            'task': data.task,
            'train_examples': len(train),
            'test_examples': len(test),
            'weak_examples': sum(1 for e in train if not e.is_supervised),
        }
