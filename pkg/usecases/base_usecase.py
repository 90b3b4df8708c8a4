"""
Base use case for pipeline stages
"""
from abc import ABC, abstractmethod
from datetime import datetime
from typing import Any, Dict
import logging

import numpy as np

from models import StageError, StageResult
from usecases.context import ExperimentContext

logger = logging.getLogger(__name__)


class BaseStageUseCase(ABC):
    """One pipeline stage: timed, logged, failures reported with the stage name"""

    stage_name: str = ''

    def __init__(self, ctx: ExperimentContext):
        self.ctx = ctx
        self.result = StageResult(stage=self.stage_name)

    @property
    def rng(self) -> np.random.Generator:
        return self.ctx.stage_rng(self.stage_name)

    @abstractmethod
    def execute(self) -> Dict[str, Any]:
        """Do the work; returns metadata recorded in the stage result"""
        pass

    def run(self) -> StageResult:
        logger.info(f"Starting stage: {self.stage_name}")
        self.result.started_at = datetime.utcnow()

        try:
            self.result.metadata.update(self.execute() or {})
        except Exception as e:
            logger.error(f"Stage '{self.stage_name}' failed: {e}")
            raise StageError(self.stage_name, e) from e
        finally:
            self.result.completed_at = datetime.utcnow()

        logger.info(f"Stage {self.stage_name} completed in {self.result.duration_seconds:.2f}s")
        return self.result
