"""
Report Handler for writing evaluation reports and console summaries
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence
import logging

from tabulate import tabulate

from models import EvalReport, ExperimentReport, StageResult

logger = logging.getLogger(__name__)


class ReportHandler:
    """Line-oriented report, JSON summary and tabulated console output"""

    def write_reports(self, report: ExperimentReport, output_dir: Path) -> List[Path]:
        """Write report.txt and report.json; returns the written paths"""
        output_path = Path(output_dir)
        output_path.mkdir(parents=True, exist_ok=True)
        text_path = output_path / 'report.txt'
        json_path = output_path / 'report.json'

        if report.evaluation is not None:
            self._generate_text_report(report, text_path)
        self._generate_json_report(report, json_path)

        written = [p for p in (text_path, json_path) if p.exists()]
        logger.info(f"Reports written: {', '.join(str(p) for p in written)}")
        return written

    def _generate_text_report(self, report: ExperimentReport, file_path: Path):
        """One line per example, then aggregate key=value lines"""
        evaluation = report.evaluation
        lines = [
            f"{s.example_id}\texact={int(s.exact)}\tbleu={s.bleu:.4f}\tstatus={s.status.value}"
            for s in evaluation.scores
        ]
        lines += [
            f"mode={report.mode.value}",
            f"seed={report.seed}",
            f"examples={evaluation.total_count}",
            f"exact_match={evaluation.exact_match:.4f}",
            f"corpus_bleu={evaluation.corpus_bleu:.4f}",
            f"failures={evaluation.failure_count}",
        ]
        file_path.write_text("\n".join(lines) + "\n")

    def _generate_json_report(self, report: ExperimentReport, file_path: Path):
        with open(file_path, 'w') as f:
            json.dump(report.to_dict(), f, indent=2)

    def stage_table(self, stages: Sequence[StageResult]) -> str:
        rows = []
        for stage in stages:
            details = ", ".join(f"{k}={self._fmt(v)}" for k, v in sorted(stage.metadata.items()))
            rows.append([stage.stage, f"{stage.duration_seconds:.2f}s", details])
        return tabulate(rows, headers=['Stage', 'Duration', 'Details'], tablefmt='simple')

    def evaluation_table(self, evaluation: EvalReport) -> str:
        rows = [
            ['Examples', evaluation.total_count],
            ['Exact match (%)', f"{evaluation.exact_match:.2f}"],
            ['Corpus BLEU-4', f"{evaluation.corpus_bleu:.2f}"],
            ['Failed rollouts', evaluation.failure_count],
        ]
        return tabulate(rows, tablefmt='simple')

    def sweep_table(self, results: Dict[int, Optional[EvalReport]]) -> str:
        rows = []
        for k, evaluation in sorted(results.items()):
            if evaluation is None:
                rows.append([k, 'failed', 'failed', '-'])
            else:
                rows.append([k, f"{evaluation.exact_match:.2f}", f"{evaluation.corpus_bleu:.2f}",
                             evaluation.failure_count])
        return tabulate(rows, headers=['K', 'Exact match (%)', 'BLEU-4', 'Failures'], tablefmt='simple')

    @staticmethod
    def _fmt(value: Any) -> str:
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)
