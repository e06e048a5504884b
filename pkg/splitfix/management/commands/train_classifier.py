"""
    train_classifier stage: builds (or reuses cached) training samples & trains
    the configured connectivity classifier.
"""

import logging
from pathlib import Path

from django.core.management import CommandError

from splitfix.connectnet.cache import read_sample_cache, write_sample_cache
from splitfix.connectnet.samples import MaskSample, PointSample, build_samples
from splitfix.connectnet.training import ClassifierConfig, train_classifier
from splitfix.exceptions import SampleCacheFormatError
from splitfix.management.commands._base import DATA_EXIT_CODE, Base_Stage_Command
from splitfix.run_config import RunConfig


class Command(Base_Stage_Command):
    help = "Train the connectivity classifier on samples of the training blocks."
    stage = "train_classifier"

    def add_arguments(self, parser) -> None:
        super().add_arguments(parser)
        parser.add_argument("--rebuild-samples", action="store_true", help="Ignore an existing sample cache.")

    def training_samples(self, config: RunConfig, classifier: ClassifierConfig, rebuild: bool) -> list[PointSample | MaskSample]:
        cache_path: Path = config.path("sample_cache")

        if cache_path.exists() and not rebuild:
            try:
                samples, _ = read_sample_cache(cache_path, expected_digest=config.digest)
                logging.info(f"Reusing {len(samples)} cached samples from {cache_path}.")
                return samples
            except SampleCacheFormatError as e:
                logging.warning(f"Rebuilding samples: {e}")

        volume = self.load_volume(config)
        train_pairs, _ = self.split_pairs(config, self.load_pairs(config))
        samples: list[PointSample | MaskSample] = build_samples(
            volume,
            train_pairs,
            classifier.architecture,
            self.classifier_features(config, volume),
            points=classifier.points,
            cube_nm=classifier.cube_nm,
            mask_side_nm=classifier.mask_side_nm,
            mask_dims=classifier.mask_dims,
            seed=config.stage_seed("classifier_samples"),
            workers=config.workers
        )
        if samples:
            write_sample_cache(cache_path, samples, config.digest)

        return samples

    def run_stage(self, config: RunConfig, **options) -> None:
        classifier: ClassifierConfig = config.classifier_config()
        samples: list[PointSample | MaskSample] = self.training_samples(config, classifier, options["rebuild_samples"])
        if not samples:
            raise CommandError("No training samples could be built from the training blocks.", returncode=DATA_EXIT_CODE)

        train_classifier(samples, classifier, config.path("classifier_checkpoint"), config.path("classifier_log"), config.digest)

        self.stdout.write(f"Saved the {classifier.architecture} classifier to {config.path('classifier_checkpoint')}.")
