"""
    gradcheck stage: compares every analytic gradient with central finite
    differences on random instances.
"""

from django.conf import settings
from django.core.management import CommandError

from splitfix.evaluation.reports import write_csv
from splitfix.management.commands._base import CONFIG_EXIT_CODE, NUMERIC_EXIT_CODE, Base_Stage_Command
from splitfix.numerics.gradcheck import GRADIENT_CASES, GradientCheckResult, run_gradient_suite
from splitfix.run_config import RunConfig


class Command(Base_Stage_Command):
    help = "Check every analytic gradient against finite differences."
    stage = "gradcheck"

    def add_arguments(self, parser) -> None:
        super().add_arguments(parser)
        parser.add_argument("--cases", nargs="+", choices=sorted(GRADIENT_CASES), help="Only check these cases.")
        parser.add_argument("--instances", type=int, default=settings.SPLITFIX_GRADCHECK_INSTANCES, help="Random instances per case.")

    def run_stage(self, config: RunConfig, **options) -> None:
        if options["instances"] < 1:
            raise CommandError("--instances must be at least 1.", returncode=CONFIG_EXIT_CODE)

        results: list[GradientCheckResult] = run_gradient_suite(
            options["instances"],
            settings.SPLITFIX_GRADCHECK_TOLERANCE,
            seed=config.stage_seed("gradcheck"),
            names=options["cases"]
        )

        write_csv(
            config.path("gradcheck_report"),
            ("case", "instances", "worst_relative_error", "tolerance", "passed"),
            ([result.name, result.instances, f"{result.worst_error:.3e}", f"{result.tolerance:.1e}", str(result.passed).lower()] for result in results),
            config.digest
        )

        result: GradientCheckResult
        for result in results:
            self.stdout.write(f"{'ok  ' if result.passed else 'FAIL'} {result.name}: {result.worst_error:.3e}")

        failed: list[str] = [result.name for result in results if not result.passed]
        if failed:
            raise CommandError(f"Gradient check failed for {', '.join(failed)}.", returncode=NUMERIC_EXIT_CODE)
