"""
    train_embed stage: trains the embedding network on the training blocks &
    reports its rank discriminability on the test blocks.
"""

import logging

from django.core.management import CommandError

from splitfix.embednet.model import EmbedNet
from splitfix.embednet.ranking import rank_discriminability
from splitfix.embednet.samples import PairGroup, group_pairs
from splitfix.embednet.training import EmbedTrainConfig, EmbedTrainResult, train_embed
from splitfix.evaluation.reports import write_summary
from splitfix.management.commands._base import DATA_EXIT_CODE, Base_Stage_Command
from splitfix.run_config import RunConfig
from splitfix.volumes.types import LabeledVolume

SUMMARY_FILE_NAME = "embed_summary.txt"


class Command(Base_Stage_Command):
    help = "Train the embedding network & report its mean positive rank on the test blocks."
    stage = "train_embed"

    def add_arguments(self, parser) -> None:
        super().add_arguments(parser)
        parser.add_argument("--skip-ranking", action="store_true", help="Do not compute the test block mean rank.")

    @staticmethod
    def mean_ranks(config: RunConfig, volume: LabeledVolume, groups: list[PairGroup], trained: EmbedNet, untrained: EmbedNet) -> dict[str, object]:
        cube_nm: tuple[float, float, float] = config.get("registration", "cube_nm")

        try:
            untrained_rank: float = rank_discriminability(None, volume, groups, cube_nm, model=untrained)
            trained_rank: float = rank_discriminability(None, volume, groups, cube_nm, model=trained)
        except ValueError as e:
            logging.warning(f"No test block mean rank: {e}")
            return {}

        logging.info(f"Test block mean rank: {untrained_rank:.3f} untrained, {trained_rank:.3f} trained.")

        return {"mean_rank_untrained": f"{untrained_rank:.6f}", "mean_rank": f"{trained_rank:.6f}"}

    def run_stage(self, config: RunConfig, **options) -> None:
        volume = self.load_volume(config)
        train_pairs, test_pairs = self.split_pairs(config, self.load_pairs(config))
        train_groups: list[PairGroup] = group_pairs(train_pairs)
        if not train_groups:
            raise CommandError("The training blocks hold no positive pair.", returncode=DATA_EXIT_CODE)

        embed_config: EmbedTrainConfig = config.embed_config()
        result: EmbedTrainResult = train_embed(
            volume,
            train_groups,
            embed_config,
            config.path("embed_checkpoint"),
            config.path("embed_log"),
            config.digest,
            workers=config.workers
        )

        extra: dict[str, object] = {"steps": len(result.log), "lambda3_mode": embed_config.lambda3.mode}
        test_groups: list[PairGroup] = group_pairs(test_pairs)
        if test_groups and not options["skip_ranking"]:
            untrained = EmbedNet(embed_config.channels, embed_config.k, seed=embed_config.seed)
            extra.update(self.mean_ranks(config, volume, test_groups, result.model, untrained))

        write_summary(config.out_dir / SUMMARY_FILE_NAME, config.digest, extra=extra)

        self.stdout.write(f"Saved the embedding checkpoint to {config.path('embed_checkpoint')}.")
