"""
    Automated test suite for the pipeline stage management commands in
    splitfix app.
"""

import io

from django.core.management import CommandError, call_command

from splitfix.management.commands._base import CONFIG_EXIT_CODE, DATA_EXIT_CODE
from splitfix.registration import read_pairs, write_pairs
from splitfix.run_config import RunConfig
from splitfix.tests.utils import Base_TestCase, Test_Pair_Factory, Test_Volume_Factory
from splitfix.volumes.io import save_labeled_volume, save_skeletons

SMALL_RUN: list[str] = [
    "synth.dims=80,80,20",
    "synth.neuron_count=2",
    "synth.radius_range_nm=50.0,60.0",
    "synth.cut_rate_per_um=5.0",
    "synth.min_cut_spacing_nm=200.0",
    "synth.missing_sections=",
    "synth.misalignments=",
    "registration.block_size_nm=320.0,320.0,800.0",
    "eval.classifier=constant",
    "eval.plot=false"
]


class Base_Command_TestCase(Base_TestCase):
    def call_stage(self, stage: str, *args, overrides: list[str] = (), out=None) -> str:
        stdout = io.StringIO()
        call_command(stage, *args, overrides=[*SMALL_RUN, *overrides], out=out or self.temp_dir, deterministic=True, stdout=stdout)

        return stdout.getvalue()

    def write_test_inputs(self, seg_bs: tuple[int, ...] = (2, 3)) -> RunConfig:
        """
            Saves the test volume, its skeletons & the pairs of segment 1 with
            each of seg_bs, duplicated over two blocks.
        """

        config = RunConfig.load(overrides=SMALL_RUN, out_dir=self.temp_dir)
        pairs = [
            Test_Pair_Factory.create(seg_b=seg_b, block=block)
            for block in ((0, 0, 0), (1, 0, 0))
            for seg_b in seg_bs
        ]

        save_labeled_volume(config.path("volume_dir"), Test_Volume_Factory.create(), config.digest)
        save_skeletons(config.path("skeleton_dir"), Test_Volume_Factory.create_skeletons(), config.digest)
        write_pairs(config.path("pairs"), pairs, config.digest)

        return config

    @staticmethod
    def summary_value(path, key: str) -> float:
        line: str = next(line for line in path.read_text().splitlines() if line.startswith(f"{key}: "))

        return float(line.split(": ", 1)[1])


class Stage_Command_Tests(Base_Command_TestCase):
    def test_synth_then_build_pairs(self):
        self.call_stage("synth")
        self.call_stage("build_pairs")

        config = RunConfig.load(overrides=SMALL_RUN, out_dir=self.temp_dir)

        self.assertTrue((config.path("volume_dir") / "segments.vol").exists())
        self.assertTrue(config.path("pairs").read_text().startswith(f"# config_hash={config.digest}"))
        self.assertTrue(all(pair.block is not None for pair in read_pairs(config.path("pairs"))))

    def test_synth_reruns_are_identical(self):
        self.call_stage("synth", out=self.temp_dir / "first")
        self.call_stage("synth", out=self.temp_dir / "second")

        for name in ("image.vol", "segments.vol", "neurons.vol"):
            with self.subTest(name=name):
                self.assertEqual((self.temp_dir / "first" / "volume" / name).read_bytes(), (self.temp_dir / "second" / "volume" / name).read_bytes())

    def test_constant_half_classifier_recalls_nothing(self):
        config = self.write_test_inputs()

        self.call_stage("eval")

        summary = (config.path("eval_dir") / "summary.txt").read_text().splitlines()
        self.assertIn("recall: 0.000000", summary)
        self.assertIn("pairs: 2", summary)
        self.assertFalse((config.path("eval_dir") / "pr_curve.svg").exists())

    def test_trace_without_merges_keeps_run_length(self):
        config = self.write_test_inputs()

        self.call_stage("trace", overrides=["eval.constant_probability=0.0", "eval.candidates=endpoints"])

        summary = (config.path("trace_dir") / "summary.txt").read_text().splitlines()
        self.assertIn("erl_delta_nm: 0.000", summary)

    def test_merging_split_halves_increases_run_length(self):
        config = self.write_test_inputs(seg_bs=(2,))

        self.call_stage("trace", overrides=["eval.constant_probability=1.0"])

        self.assertGreater(self.summary_value(config.path("trace_dir") / "summary.txt", "erl_delta_nm"), 0.0)

    def test_merging_two_neurons_decreases_run_length(self):
        config = self.write_test_inputs(seg_bs=(3,))

        self.call_stage("trace", overrides=["eval.constant_probability=1.0"])

        self.assertLess(self.summary_value(config.path("trace_dir") / "summary.txt", "erl_delta_nm"), 0.0)

    def test_configuration_file_is_applied(self):
        config = self.write_test_inputs(seg_bs=(2,))
        (self.temp_dir / "run.ini").write_text("[eval]\nconstant_probability = 1.0\n")

        self.call_stage("trace", "--config", str(self.temp_dir / "run.ini"))

        self.assertGreater(self.summary_value(config.path("trace_dir") / "summary.txt", "erl_delta_nm"), 0.0)

    def test_gradcheck_selected_case(self):
        output = self.call_stage("gradcheck", "--cases", "relu", "--instances", "2")

        self.assertIn("relu", output)
        self.assertTrue((self.temp_dir / "gradcheck.csv").exists())


class Exit_Code_Tests(Base_Command_TestCase):
    def test_invalid_override_is_configuration_error(self):
        with self.assertRaises(CommandError) as context:
            self.call_stage("synth", overrides=["synth.neuron_count=many"])

        self.assertEqual(CONFIG_EXIT_CODE, context.exception.returncode)

    def test_artifact_outside_volume_is_configuration_error(self):
        with self.assertRaises(CommandError) as context:
            self.call_stage("synth", overrides=["synth.missing_sections=40"])

        self.assertEqual(CONFIG_EXIT_CODE, context.exception.returncode)

    def test_missing_inputs_are_data_error(self):
        with self.assertRaises(CommandError) as context:
            self.call_stage("eval")

        self.assertEqual(DATA_EXIT_CODE, context.exception.returncode)

    def test_corrupt_pairs_file_is_data_error(self):
        config = self.write_test_inputs()
        config.path("pairs").write_text("1 2 3\n")

        with self.assertRaises(CommandError) as context:
            self.call_stage("eval")

        self.assertEqual(DATA_EXIT_CODE, context.exception.returncode)

    def test_zero_instances_is_configuration_error(self):
        with self.assertRaises(CommandError) as context:
            self.call_stage("gradcheck", "--instances", "0")

        self.assertEqual(CONFIG_EXIT_CODE, context.exception.returncode)


class Deterministic_Pipeline_Tests(Base_Command_TestCase):
    TRAINING_RUN: list[str] = [
        "embed.crop_size=17,17,5",
        "embed.channels=2,2,2",
        "embed.k=2",
        "embed.negatives=2",
        "embed.steps=2",
        "embed.warmup_steps=1",
        "classifier.points=32",
        "classifier.centroids=8,4",
        "classifier.neighbours=4,4",
        "classifier.batch_size=4",
        "classifier.steps=2",
        "classifier.warmup_steps=1",
        "eval.classifier=model"
    ]

    OUTPUT_FILES: tuple[str, ...] = (
        "pairs.txt",
        "embed.ckpt",
        "embed_log.csv",
        "classifier.ckpt",
        "classifier_log.csv",
        "eval/predictions.csv",
        "eval/pr_curve.csv",
        "eval/blocks.csv"
    )

    def run_pipeline(self, out) -> None:
        self.call_stage("synth", out=out)
        self.call_stage("build_pairs", out=out)
        self.call_stage("train_embed", "--skip-ranking", overrides=self.TRAINING_RUN, out=out)
        self.call_stage("train_classifier", overrides=self.TRAINING_RUN, out=out)
        self.call_stage("eval", overrides=self.TRAINING_RUN, out=out)

    def test_pipeline_reruns_are_identical(self):
        self.run_pipeline(self.temp_dir / "first")
        self.run_pipeline(self.temp_dir / "second")

        for name in self.OUTPUT_FILES:
            with self.subTest(name=name):
                self.assertEqual((self.temp_dir / "first" / name).read_bytes(), (self.temp_dir / "second" / name).read_bytes())
