"""
    Shared base of the pipeline stage commands: common options, run
    configuration loading, stage inputs & exit codes.
"""

import logging
from pathlib import Path

from django.core.exceptions import ImproperlyConfigured
from django.core.management import BaseCommand, CommandError, CommandParser

from splitfix.connectnet.samples import feature_field
from splitfix.connectnet.training import ClassifierConfig, classifier_channels, load_classifier
from splitfix.embednet.model import EmbeddingField
from splitfix.embednet.training import embed_volume, load_embed_model
from splitfix.evaluation.scoring import Scorer, constant_scorer, embedding_distance_scorer, model_scorer
from splitfix.exceptions import (
    ArtifactRangeError,
    CheckpointFormatError,
    DisconnectedSubsetError,
    EmptyMaskError,
    EmptyPairCropError,
    EmptyPointSetError,
    InfeasibleConfigError,
    NonFiniteError,
    PairFileFormatError,
    RunConfigError,
    SampleCacheFormatError,
    ShapeMismatchError,
    SwcFormatError,
    UnmappedNodeError,
    VolumeFormatError
)
from splitfix.geometry import Skeleton
from splitfix.registration import CandidatePair, read_pairs, split_blocks
from splitfix.run_config import RunConfig
from splitfix.volumes.io import load_labeled_volume, load_skeletons
from splitfix.volumes.types import LabeledVolume

CONFIG_EXIT_CODE = 2
DATA_EXIT_CODE = 3
NUMERIC_EXIT_CODE = 4

CONFIG_ERRORS: tuple[type[Exception], ...] = (RunConfigError, InfeasibleConfigError, ArtifactRangeError, ImproperlyConfigured)
DATA_ERRORS: tuple[type[Exception], ...] = (
    FileNotFoundError,
    SwcFormatError,
    PairFileFormatError,
    VolumeFormatError,
    CheckpointFormatError,
    SampleCacheFormatError,
    EmptyPointSetError,
    DisconnectedSubsetError,
    ShapeMismatchError,
    EmptyPairCropError,
    EmptyMaskError,
    UnmappedNodeError
)
NUMERIC_ERRORS: tuple[type[Exception], ...] = (NonFiniteError,)


class Base_Stage_Command(BaseCommand):
    """
        Base class of every pipeline stage command. Subclasses implement
        run_stage(); exceptions are turned into exit codes 2 (configuration),
        3 (data) & 4 (numeric failure).
    """

    stage: str = ""

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--config", dest="config_file", type=Path, help="Run configuration file overriding the shipped defaults.")
        parser.add_argument("--seed", type=int, help="Master seed (overrides run.seed).")
        parser.add_argument("--out", type=Path, help="Output directory (overrides paths.out_dir).")
        parser.add_argument("--deterministic", action="store_true", help="Single worker & single BLAS thread, for byte-identical reruns.")
        parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE", help="Override one configuration value (repeatable).")

    def handle(self, *args, **options) -> None:
        try:
            config: RunConfig = RunConfig.load(
                options["config_file"],
                overrides=options["overrides"],
                seed=options["seed"],
                out_dir=options["out"],
                deterministic=options["deterministic"]
            )
            self.run_stage(config, **options)
        except CONFIG_ERRORS as e:
            raise CommandError(f"Configuration error: {e}", returncode=CONFIG_EXIT_CODE) from e
        except DATA_ERRORS as e:
            raise CommandError(f"Data error: {e}", returncode=DATA_EXIT_CODE) from e
        except NUMERIC_ERRORS as e:
            raise CommandError(f"Numeric failure: {e}", returncode=NUMERIC_EXIT_CODE) from e

        logging.info(f"Stage {self.stage} finished (config {config.digest[:12]}).")

    def run_stage(self, config: RunConfig, **options) -> None:
        raise NotImplementedError

    @staticmethod
    def require(path: Path, produced_by: str) -> Path:
        """ Returns the path of a stage input, which an earlier stage must have written. """

        if not path.exists():
            raise FileNotFoundError(f"Missing input {path}; run the {produced_by} stage first.")

        return path

    def load_volume(self, config: RunConfig) -> LabeledVolume:
        return load_labeled_volume(self.require(config.path("volume_dir"), "synth"))

    def load_skeletons(self, config: RunConfig) -> list[Skeleton]:
        return load_skeletons(self.require(config.path("skeleton_dir"), "synth"))

    def load_pairs(self, config: RunConfig) -> list[CandidatePair]:
        return read_pairs(self.require(config.path("pairs"), "build_pairs"))

    def split_pairs(self, config: RunConfig, pairs: list[CandidatePair]) -> tuple[list[CandidatePair], list[CandidatePair]]:
        """ Returns (training pairs, test pairs) of the seeded random block split. """

        blocks: set[tuple[int, int, int]] = {pair.block for pair in pairs if pair.block is not None}
        train_blocks, _ = split_blocks(blocks, config.get("registration", "train_fraction"), config.stage_seed("split_blocks"))
        train: set[tuple[int, int, int]] = set(train_blocks)

        return [pair for pair in pairs if pair.block in train], [pair for pair in pairs if pair.block not in train]

    def load_embedding(self, config: RunConfig, volume: LabeledVolume) -> EmbeddingField:
        model = load_embed_model(self.require(config.path("embed_checkpoint"), "train_embed"), config.get("embed", "channels"), config.get("embed", "k"))

        return embed_volume(model, volume)

    def classifier_features(self, config: RunConfig, volume: LabeledVolume) -> EmbeddingField | None:
        """ Returns the per-voxel features the configured classifier fuses into its samples. """

        source: str = config.get("classifier", "feature_source")
        embedding: EmbeddingField | None = self.load_embedding(config, volume) if source == "embedding" else None

        return feature_field(volume, source, embedding)

    def scorer(self, config: RunConfig, volume: LabeledVolume) -> Scorer:
        """ Returns the pair scorer named by eval.classifier. """

        kind: str = config.get("eval", "classifier")

        if kind == "constant":
            return constant_scorer(config.get("eval", "constant_probability"))

        if kind == "embedding_distance":
            return embedding_distance_scorer(
                self.load_embedding(config, volume),
                volume,
                cube_nm=config.get("registration", "cube_nm"),
                delta_d=config.get("embed", "delta_d"),
                workers=config.workers
            )

        classifier: ClassifierConfig = config.classifier_config()
        field: EmbeddingField | None = self.classifier_features(config, volume)
        model = load_classifier(
            self.require(config.path("classifier_checkpoint"), "train_classifier"),
            classifier,
            classifier_channels(classifier.architecture, field)
        )

        return model_scorer(model, volume, classifier, field, workers=config.workers)
