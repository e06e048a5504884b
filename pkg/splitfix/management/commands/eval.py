"""
    eval stage: scores a 1:1 sample of the test block pairs with the
    configured classifier.
"""

import logging
from pathlib import Path

import numpy
from django.core.management import CommandError

from splitfix.evaluation import reports
from splitfix.evaluation.metrics import EvalReport, sample_eval_pairs, score_predictions
from splitfix.management.commands._base import DATA_EXIT_CODE, Base_Stage_Command
from splitfix.registration import CandidatePair
from splitfix.run_config import RunConfig


class Command(Base_Stage_Command):
    help = "Evaluate pair connectivity predictions on the test blocks (precision, recall, F1 & PR curve)."
    stage = "eval"

    def run_stage(self, config: RunConfig, **options) -> None:
        volume = self.load_volume(config)
        _, test_pairs = self.split_pairs(config, self.load_pairs(config))
        pairs: list[CandidatePair] = sample_eval_pairs(test_pairs, config.stage_seed("eval"))
        if not pairs:
            raise CommandError("The test blocks hold no positive pair to evaluate.", returncode=DATA_EXIT_CODE)

        probabilities: numpy.ndarray = self.scorer(config, volume)(pairs)
        report: EvalReport = score_predictions(probabilities, [pair.label for pair in pairs], [pair.block for pair in pairs])

        eval_dir: Path = config.path("eval_dir")
        kind: str = config.get("eval", "classifier")

        reports.write_predictions(eval_dir / "predictions.csv", pairs, probabilities.tolist(), config.digest)
        reports.write_pr_curve(eval_dir / "pr_curve.csv", report, config.digest)
        reports.write_block_report(eval_dir / "blocks.csv", report, config.digest)
        reports.write_summary(eval_dir / "summary.txt", config.digest, report=report, extra={"classifier": kind})
        if config.get("eval", "plot"):
            reports.write_pr_plot(eval_dir / "pr_curve.svg", {kind: report}, config.digest)

        logging.info(f"Evaluated {len(pairs)} pairs with the {kind} classifier: precision {report.precision:.4f}, recall {report.recall:.4f}, F1 {report.f1:.4f}.")

        self.stdout.write(f"precision {report.precision:.4f}  recall {report.recall:.4f}  F1 {report.f1:.4f}  ({len(pairs)} pairs)")
