"""
CLI Handler for orchestrating experiment stages
Layer 1 - Entry point for command-line runs
"""
import click
import copy
import yaml
import os
import sys
import logging
from dataclasses import replace
from datetime import datetime
from functools import wraps
from pathlib import Path
from typing import Callable, Dict, List, Optional

from dotenv import load_dotenv

from models import (
    EvalReport, ExperimentMode, ExperimentReport, ReproError, StageError, StageResult, ValidationError,
)
from handlers.report_handler import ReportHandler
from usecases.context import ExperimentContext, ProfileConfig
from usecases.data.gen_synthetic_usecase import GenSyntheticUseCase
from usecases.evaluation.evaluate_usecase import EvaluateUseCase
from usecases.meta.meta_train_usecase import MetaTrainUseCase
from usecases.meta.resolve_candidates_usecase import ResolveCandidatesUseCase
from usecases.parser.predict_usecase import PredictUseCase
from usecases.parser.train_parser_usecase import TrainParserUseCase
from usecases.retriever.build_index_usecase import BuildIndexUseCase
from usecases.retriever.index import retrieve
from usecases.retriever.train_retriever_usecase import TrainRetrieverUseCase

# Setup logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

DEFAULT_CONFIG = 'config/experiments.yaml'
DEFAULT_PROFILE = 'desk'

MODE_CHOICES = [m.value for m in ExperimentMode]

EXIT_OK, EXIT_FAILURE, EXIT_VALIDATION = 0, 1, 2


class CLIHandler:
    """Loads a profile and runs pipeline stages against one output directory"""

    def __init__(self, config_path: str = DEFAULT_CONFIG, profile: str = DEFAULT_PROFILE,
                 seed: Optional[int] = None, out_dir: Optional[str] = None):
        self.config_path = config_path
        self._load_env_variables()
        self.config = self._load_config()
        self.profile = self._get_profile(profile)
        self.ctx = ExperimentContext(self.profile, Path(out_dir or Path('runs') / profile), seed)
        self.report_handler = ReportHandler()

    def _load_config(self) -> dict:
        """Load configuration from YAML file"""
        path = Path(self.config_path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            with open(path, 'r') as f:
                return yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ValidationError(f"cannot parse {path}: {e}")

    def _load_env_variables(self):
        """Load .env so profiles can reference ${VAR}"""
        load_dotenv()

    def _get_profile(self, name: str) -> ProfileConfig:
        profiles = self.config.get('experiments', {})
        if name not in profiles:
            raise ValidationError(f"profile '{name}' not found in {self.config_path} "
                                  f"(available: {', '.join(sorted(profiles))})")
        profile = dict(profiles[name] or {})
        self._replace_env_vars(profile)
        return ProfileConfig.from_dict(name, profile)

    def _replace_env_vars(self, config: dict):
        """Recursively replace ${VAR} with environment variables"""
        for key, value in config.items():
            if isinstance(value, str) and value.startswith('${') and value.endswith('}'):
                env_var = value[2:-1]
                config[key] = os.getenv(env_var, value)
            elif isinstance(value, dict):
                self._replace_env_vars(value)

    # ------------------------------------------------------------------
    # Stages
    # ------------------------------------------------------------------

    def gen_synthetic(self) -> StageResult:
        return GenSyntheticUseCase(self.ctx).run()

    def train_retriever(self) -> StageResult:
        return TrainRetrieverUseCase(self.ctx).run()

    def build_index(self) -> StageResult:
        return BuildIndexUseCase(self.ctx).run()

    def resolve_candidates(self) -> StageResult:
        return ResolveCandidatesUseCase(self.ctx).run()

    def train_parser(self) -> StageResult:
        return TrainParserUseCase(self.ctx).run()

    def meta_train(self) -> StageResult:
        return MetaTrainUseCase(self.ctx).run()

    def predict(self, mode: Optional[ExperimentMode] = None) -> StageResult:
        return PredictUseCase(self.ctx, mode).run()

    def evaluate(self, mode: Optional[ExperimentMode] = None) -> ExperimentReport:
        usecase = EvaluateUseCase(self.ctx)
        stage = usecase.run()
        report = self._new_report(mode)
        report.stages.append(stage)
        report.evaluation = usecase.report
        self.report_handler.write_reports(report, self.ctx.paths.root)
        return report

    def _new_report(self, mode: Optional[ExperimentMode]) -> ExperimentReport:
        return ExperimentReport(
            experiment_id=f"{self.profile.name}-{datetime.utcnow().strftime('%Y%m%d%H%M%S')}",
            mode=ExperimentMode(mode) if mode is not None else self.profile.experiment.mode,
            seed=self.ctx.seed,
        )

    def _pipeline(self, mode: ExperimentMode, has_weak: bool) -> List[Callable[[], StageResult]]:
        retrieval = [self.train_retriever, self.build_index]
        resolve = [self.resolve_candidates] if has_weak else []
        predict = [lambda: self.predict(mode)]
        if mode == ExperimentMode.RETRIEVAL_ONLY:
            return retrieval + predict
        if mode == ExperimentMode.S2A:
            return (retrieval + resolve if has_weak else []) + [self.train_parser] + predict
        warm = [self.train_parser] if self.profile.experiment.warm_start else []
        return retrieval + resolve + warm + [self.meta_train] + predict

    def run_experiment(self, mode: Optional[ExperimentMode] = None) -> ExperimentReport:
        """All stages of a mode, then evaluation and reports"""
        mode = ExperimentMode(mode) if mode is not None else self.profile.experiment.mode
        logger.info(f"Starting experiment '{self.profile.name}' mode={mode.value} seed={self.ctx.seed}")
        report = self._new_report(mode)

        if self.profile.data.train_path is None:
            report.stages.append(self.gen_synthetic())
        else:
            self.ctx.clear_derived()
        has_weak = any(not e.is_supervised for e in self.ctx.train_examples)
        for stage in self._pipeline(mode, has_weak):
            report.stages.append(stage())

        usecase = EvaluateUseCase(self.ctx)
        report.stages.append(usecase.run())
        report.evaluation = usecase.report
        self.report_handler.write_reports(report, self.ctx.paths.root)

        logger.info(
            f"Experiment completed: exact match {report.evaluation.exact_match:.2f}%, "
            f"BLEU-4 {report.evaluation.corpus_bleu:.2f} in {report.total_duration_seconds:.1f}s"
        )
        return report

    def sweep_k(self, k_values: List[int], mode: Optional[ExperimentMode] = None) -> Dict[int, Optional[EvalReport]]:
        """run-experiment per support size, each in its own subdirectory"""
        results: Dict[int, Optional[EvalReport]] = {}
        for k in k_values:
            profile = replace(self.profile, meta=replace(self.profile.meta, k=k))
            handler = copy.copy(self)
            handler.profile = profile
            handler.ctx = ExperimentContext(profile, self.ctx.paths.root / f"k{k}", self.ctx.seed)
            try:
                results[k] = handler.run_experiment(mode).evaluation
            except StageError as e:
                logger.error(f"Sweep K={k} failed: {e}")
                results[k] = None
        return results


def _exit_code(error: BaseException) -> int:
    if isinstance(error, ValidationError):
        return EXIT_VALIDATION
    if isinstance(error, StageError) and error.is_validation:
        return EXIT_VALIDATION
    return EXIT_FAILURE


def guarded(command):
    """Map toolkit errors to exit codes 2 (validation) and 1 (anything else)"""
    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except ReproError as e:
            logger.error(str(e))
            click.echo(f"Error: {e}", err=True)
            sys.exit(_exit_code(e))
    return wrapper


def _handler(obj: dict) -> CLIHandler:
    return CLIHandler(obj['config'], obj['profile'], obj['seed'], obj['out'])


def _echo_stage(handler: CLIHandler, stage: StageResult):
    click.echo(handler.report_handler.stage_table([stage]))


@click.group()
@click.option('--config', 'config_path', default=DEFAULT_CONFIG, show_default=True, help='Experiment profiles file')
@click.option('--profile', default=DEFAULT_PROFILE, show_default=True, help='Profile name in the config file')
@click.option('--seed', type=int, default=None, help='Override the profile seed')
@click.option('--out', 'out_dir', default=None, help='Output directory (default runs/<profile>)')
@click.pass_context
def cli(ctx, config_path, profile, seed, out_dir):
    """Retrieval-coupled meta-learning for context-dependent semantic parsing"""
    ctx.obj = {'config': config_path, 'profile': profile, 'seed': seed, 'out': out_dir}


@cli.command('gen-synthetic')
@click.pass_obj
@guarded
def gen_synthetic(obj):
    """Generate train/test dataset files"""
    handler = _handler(obj)
    _echo_stage(handler, handler.gen_synthetic())


@cli.command('train-retriever')
@click.pass_obj
@guarded
def train_retriever(obj):
    """Train the context-aware retriever"""
    handler = _handler(obj)
    _echo_stage(handler, handler.train_retriever())


@cli.command('build-index')
@click.pass_obj
@guarded
def build_index(obj):
    """Build the retrieval index from the retriever checkpoint"""
    handler = _handler(obj)
    _echo_stage(handler, handler.build_index())


@cli.command('retrieve')
@click.option('--id', 'example_id', required=True, help='Training or test example id')
@click.option('--k', type=int, default=None, help='Number of neighbours (default: meta.k)')
@click.pass_obj
@guarded
def retrieve_command(obj, example_id, k):
    """Print the K nearest training examples: rank, id, distance"""
    handler = _handler(obj)
    ctx = handler.ctx
    pool = {e.id: e for e in ctx.train_examples}
    pool.update({e.id: e for e in ctx.test_examples})
    if example_id not in pool:
        raise ValidationError(f"unknown example id '{example_id}'")
    neighbours = retrieve(ctx.index, pool[example_id], ctx.retriever_model(), ctx.retriever_params,
                          k or handler.profile.meta.k, handler.profile.experiment.retrieval)
    for n in neighbours:
        click.echo(f"{n.rank}\t{n.example_id}\t{n.distance:.6f}")


@cli.command('train-parser')
@click.pass_obj
@guarded
def train_parser(obj):
    """Plain sequence-to-action training"""
    handler = _handler(obj)
    _echo_stage(handler, handler.train_parser())


@cli.command('meta-train')
@click.pass_obj
@guarded
def meta_train(obj):
    """Retrieval-MAML training"""
    handler = _handler(obj)
    _echo_stage(handler, handler.meta_train())


@cli.command('predict')
@click.option('--mode', type=click.Choice(MODE_CHOICES), default=None, help='Default: experiment.mode')
@click.pass_obj
@guarded
def predict(obj, mode):
    """Write predictions.tsv for the test set"""
    handler = _handler(obj)
    _echo_stage(handler, handler.predict(ExperimentMode(mode) if mode else None))


@cli.command('evaluate')
@click.option('--mode', type=click.Choice(MODE_CHOICES), default=None, help='Mode recorded in the report')
@click.pass_obj
@guarded
def evaluate(obj, mode):
    """Score predictions.tsv and write report.txt / report.json"""
    handler = _handler(obj)
    report = handler.evaluate(ExperimentMode(mode) if mode else None)
    click.echo(handler.report_handler.evaluation_table(report.evaluation))


@cli.command('run-experiment')
@click.option('--mode', type=click.Choice(MODE_CHOICES), default=None, help='Default: experiment.mode')
@click.pass_obj
@guarded
def run_experiment(obj, mode):
    """Run every stage of a mode and evaluate"""
    handler = _handler(obj)
    report = handler.run_experiment(ExperimentMode(mode) if mode else None)

    click.echo(f"\n{'='*80}")
    click.echo(f"Experiment Summary: {handler.profile.name} ({report.mode.value}, seed {report.seed})")
    click.echo(f"{'='*80}")
    click.echo(handler.report_handler.stage_table(report.stages))
    click.echo()
    click.echo(handler.report_handler.evaluation_table(report.evaluation))
    click.echo(f"\nArtifacts in: {handler.ctx.paths.root}")
    click.echo(f"{'='*80}\n")


@cli.command('sweep-k')
@click.option('--k-values', required=True, help='Comma-separated support sizes, e.g. 1,2,4')
@click.option('--mode', type=click.Choice(MODE_CHOICES), default=None, help='Default: experiment.mode')
@click.pass_obj
@guarded
def sweep_k(obj, k_values, mode):
    """run-experiment for several K values"""
    try:
        values = [int(v) for v in k_values.split(',') if v.strip()]
    except ValueError:
        raise ValidationError(f"--k-values must be comma-separated integers, got '{k_values}'")
    if not values:
        raise ValidationError("--k-values is empty")
    handler = _handler(obj)
    results = handler.sweep_k(values, ExperimentMode(mode) if mode else None)
    click.echo(handler.report_handler.sweep_table(results))
    if any(r is None for r in results.values()):
        sys.exit(EXIT_FAILURE)


if __name__ == '__main__':
    cli()
