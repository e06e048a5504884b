"""
    synth stage: generates the synthetic ground-truth volume, its neuron
    skeletons & the over-segmentation oracle pair list.
"""

from splitfix.management.commands._base import Base_Stage_Command
from splitfix.registration import CandidatePair, block_of, write_pairs
from splitfix.run_config import RunConfig
from splitfix.volumes.generation import generate_volume
from splitfix.volumes.io import save_labeled_volume, save_skeletons

ORACLE_FILE_NAME = "oracle_pairs.txt"


class Command(Base_Stage_Command):
    help = "Generate a synthetic labelled volume, its skeletons & the oracle pair list."
    stage = "synth"

    def run_stage(self, config: RunConfig, **options) -> None:
        volume, skeletons, oracle = generate_volume(config.synth_config())
        block_size: tuple[float, float, float] = config.get("registration", "block_size_nm")

        save_labeled_volume(config.path("volume_dir"), volume, config.digest)
        save_skeletons(config.path("skeleton_dir"), skeletons, config.digest)
        write_pairs(
            config.path("volume_dir") / ORACLE_FILE_NAME,
            [
                CandidatePair(seg_a=pair.seg_a, seg_b=pair.seg_b, truncation=pair.truncation, label=1, block=block_of(pair.truncation, block_size))
                for pair in oracle
            ],
            config.digest
        )

        self.stdout.write(f"Generated {len(skeletons)} neurons & {len(oracle)} oracle pairs in {config.path('volume_dir')}.")
