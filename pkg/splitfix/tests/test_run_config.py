"""
    Automated test suite for the run configuration & its validators in
    splitfix app.
"""

from django.core.exceptions import ValidationError

from core.utils import derive_seed
from splitfix.exceptions import RunConfigError
from splitfix.run_config import RunConfig, parse_override, parse_setting
from splitfix.tests.utils import Base_TestCase
from splitfix.validators import ChoiceValidator, OpenIntervalValidator, OrderedPairValidator, VectorValidator
from splitfix.volumes.types import Artifact

STAGES: tuple[str, ...] = ("synth", "build_pairs", "split_blocks", "train_embed", "train_classifier", "classifier_samples", "eval", "gradcheck")


class Run_Config_Load_Tests(Base_TestCase):
    def test_defaults_resolve_every_stage(self):
        config = RunConfig.load()

        self.assertEqual(0, config.seed)
        self.assertEqual((192, 192, 64), config.synth_config().dims)
        self.assertEqual(16, config.embed_config().k)
        self.assertEqual("point", config.classifier_config().architecture)
        self.assertEqual((2560.0, 2560.0, 2560.0), config.classifier_config().cube_nm)
        self.assertEqual(20, config.registration_config().negatives_per_positive)

    def test_override_replaces_default(self):
        config = RunConfig.load(overrides=["synth.neuron_count=3", "eval.plot=false"])

        self.assertEqual(3, config.get("synth", "neuron_count"))
        self.assertIs(False, config.get("eval", "plot"))

    def test_file_overlays_defaults(self):
        (self.temp_dir / "run.ini").write_text("[synth]\nneuron_count = 5\n\n[embed]\nchannels = 2,4,8\n")

        config = RunConfig.load(self.temp_dir / "run.ini", overrides=["synth.neuron_count=7"])

        self.assertEqual(7, config.get("synth", "neuron_count"))
        self.assertEqual((2, 4, 8), config.get("embed", "channels"))
        self.assertEqual(0.85, config.get("synth", "stiffness"))

    def test_missing_file_raises(self):
        with self.assertRaises(RunConfigError):
            RunConfig.load(self.temp_dir / "absent.ini")

    def test_unknown_keys_raise(self):
        with self.assertRaises(RunConfigError) as context:
            RunConfig.load(overrides=["synth.colour=red"])

        self.assertEqual("synth.colour", context.exception.key)

        with self.assertRaises(RunConfigError):
            RunConfig.load(overrides=["nothing.seed=1"])

    def test_invalid_values_name_their_key(self):
        with self.assertRaises(RunConfigError) as context:
            RunConfig.load(overrides=["synth.neuron_count=many"])

        self.assertEqual("synth.neuron_count", context.exception.key)

        for override in ("synth.neuron_count=-1", "registration.train_fraction=1.0", "classifier.architecture=graph", "synth.dims=10,10", "synth.misalignments=3:x:1"):
            with self.subTest(override=override), self.assertRaises(RunConfigError):
                RunConfig.load(overrides=[override])

    def test_invalid_stage_object_names_section(self):
        config = RunConfig.load(overrides=["embed.lambda3_start=0.1"])

        with self.assertRaises(RunConfigError) as context:
            config.embed_config()

        self.assertEqual("embed", context.exception.key)

    def test_missing_keys_raise(self):
        with self.assertRaises(RunConfigError):
            RunConfig({"run": {"seed": 0}})


class Run_Config_Values_Tests(Base_TestCase):
    def test_digest_ignores_output_directory(self):
        self.assertEqual(RunConfig.load(out_dir=self.temp_dir / "a").digest, RunConfig.load(out_dir=self.temp_dir / "b").digest)

    def test_digest_follows_seed(self):
        self.assertNotEqual(RunConfig.load(seed=1).digest, RunConfig.load(seed=2).digest)

    def test_stage_seeds_are_distinct_and_stable(self):
        config = RunConfig.load(seed=11)

        seeds = [config.stage_seed(stage) for stage in STAGES]

        self.assertEqual(len(STAGES), len(set(seeds)))
        self.assertEqual(derive_seed(11, "synth"), config.synth_config().seed)
        self.assertEqual(seeds, [RunConfig.load(seed=11).stage_seed(stage) for stage in STAGES])

    def test_artifacts_are_sorted_by_slice(self):
        self.assertEqual(
            (Artifact("missing_section", 20), Artifact("misalignment", 30, (96.0, -64.0, 0.0)), Artifact("missing_section", 41)),
            RunConfig.load().artifacts()
        )

    def test_no_artifacts(self):
        self.assertEqual((), RunConfig.load(overrides=["synth.missing_sections=", "synth.misalignments="]).artifacts())

    def test_relative_paths_resolve_under_output_directory(self):
        config = RunConfig.load(out_dir=self.temp_dir)

        self.assertEqual(self.temp_dir / "pairs.txt", config.path("pairs"))
        self.assertEqual(self.temp_dir, config.path("out_dir"))

    def test_deterministic_runs_use_one_worker(self):
        self.assertEqual(1, RunConfig.load(deterministic=True).workers)

    def test_parse_override(self):
        self.assertEqual(("embed", "k", "8"), parse_override("embed.K=8"))

        with self.assertRaises(RunConfigError):
            parse_override("embed.k")
        with self.assertRaises(RunConfigError):
            parse_override("k=8")

    def test_parse_setting_casts_lists(self):
        self.assertEqual((16.0, 16.0, 40.0), parse_setting("synth", "voxel_size", "16,16,40"))


class Validator_Tests(Base_TestCase):
    def test_choice_validator(self):
        ChoiceValidator(("a", "b"))("a")

        with self.assertRaises(ValidationError):
            ChoiceValidator(("a", "b"))("c")

    def test_open_interval_excludes_bounds(self):
        OpenIntervalValidator(lower=0, upper=1)(0.5)

        for value in (0, 1):
            with self.subTest(value=value), self.assertRaises(ValidationError):
                OpenIntervalValidator(lower=0, upper=1)(value)

    def test_vector_validator(self):
        VectorValidator(length=3)((1, 2, 3))
        VectorValidator(minimum=0, allow_equal=True)((0, 4))

        with self.assertRaises(ValidationError):
            VectorValidator(length=3)((1, 2))
        with self.assertRaises(ValidationError):
            VectorValidator()((0, 1))

    def test_ordered_pair_validator(self):
        OrderedPairValidator()((1.0, 2.0))

        with self.assertRaises(ValidationError):
            OrderedPairValidator()((2.0, 1.0))
