"""
    trace stage: agglomerates the segmentation with the configured classifier
    & reports the expected run length change.
"""

from pathlib import Path

from splitfix.evaluation import reports
from splitfix.evaluation.tracing import TracingResult, endpoint_candidates, tracing_experiment
from splitfix.management.commands._base import Base_Stage_Command
from splitfix.registration import CandidatePair, segment_neuron_map
from splitfix.run_config import RunConfig


class Command(Base_Stage_Command):
    help = "Merge candidate pairs scored above eval.merge_threshold & report the expected run length."
    stage = "trace"

    def candidates(self, config: RunConfig, volume) -> list[CandidatePair]:
        """ Returns the test block pairs or, in endpoints mode, the end-to-end candidates of the whole volume. """

        if config.get("eval", "candidates") == "endpoints":
            return endpoint_candidates(
                volume,
                max_distance_nm=config.get("eval", "endpoint_max_distance_nm"),
                tail_nm=config.get("eval", "endpoint_tail_nm"),
                segment_to_neuron=segment_neuron_map(volume)
            )

        _, test_pairs = self.split_pairs(config, self.load_pairs(config))
        return test_pairs

    def run_stage(self, config: RunConfig, **options) -> None:
        volume = self.load_volume(config)
        skeletons = self.load_skeletons(config)
        pairs: list[CandidatePair] = self.candidates(config, volume)

        result: TracingResult = tracing_experiment(
            volume,
            skeletons,
            pairs,
            self.scorer(config, volume),
            threshold=config.get("eval", "merge_threshold"),
            search_radius_voxels=config.get("registration", "search_radius_voxels")
        )

        trace_dir: Path = config.path("trace_dir")
        reports.write_run_lengths(trace_dir / "run_lengths.csv", result, config.digest)
        reports.write_clusters(trace_dir / "clusters.csv", result.clusters, config.digest)
        reports.write_predictions(trace_dir / "predictions.csv", result.pairs, result.probabilities, config.digest)
        reports.write_summary(
            trace_dir / "summary.txt",
            config.digest,
            tracing=result,
            extra={"classifier": config.get("eval", "classifier"), "candidates": config.get("eval", "candidates"), "pairs": len(pairs)}
        )

        self.stdout.write(f"ERL {result.baseline_erl_nm:.1f} nm -> {result.erl_nm:.1f} nm ({100 * result.relative_change:+.2f}%)")
