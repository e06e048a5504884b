"""
    build_pairs stage: registers the ground-truth skeletons to the segments,
    samples labelled candidate pairs & partitions them into spatial blocks.
"""

from splitfix.evaluation.reports import write_csv
from splitfix.management.commands._base import Base_Stage_Command
from splitfix.registration import CandidatePair, RegistrationConfig, build_pairs, partition_blocks, split_blocks, write_pairs
from splitfix.run_config import RunConfig

BLOCK_FILE_NAME = "blocks.csv"


class Command(Base_Stage_Command):
    help = "Build the labelled candidate pair list from the synthetic volume & skeletons."
    stage = "build_pairs"

    def run_stage(self, config: RunConfig, **options) -> None:
        volume = self.load_volume(config)
        skeletons = self.load_skeletons(config)
        registration: RegistrationConfig = config.registration_config()

        _, pairs = build_pairs(volume, skeletons, registration, seed=config.stage_seed("build_pairs"), workers=config.workers)
        blocks: dict[tuple[int, int, int], list[CandidatePair]] = partition_blocks(pairs, registration.block_size_nm, registration.min_pairs)
        retained: list[CandidatePair] = [pair for block_pairs in blocks.values() for pair in block_pairs]

        write_pairs(config.path("pairs"), retained, config.digest)

        train_blocks, _ = split_blocks(blocks, registration.train_fraction, config.stage_seed("split_blocks"))
        write_csv(
            config.out_dir / BLOCK_FILE_NAME,
            ("block_x", "block_y", "block_z", "positives", "negatives", "split"),
            (
                [*block, sum(pair.label for pair in block_pairs), sum(1 - pair.label for pair in block_pairs), "train" if block in train_blocks else "test"]
                for block, block_pairs in blocks.items()
            ),
            config.digest
        )

        self.stdout.write(f"Wrote {len(retained)} pairs in {len(blocks)} blocks ({len(train_blocks)} for training) to {config.path('pairs')}.")
