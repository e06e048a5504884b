"""
    Synthetic ground-truth volumes: generation, artifacts & volume files.
"""

from splitfix.volumes.generation import degrade, generate_neurons, generate_volume, oversegment, shift_skeletons, voxelize
from splitfix.volumes.types import Artifact, LabeledVolume, OraclePair, SynthConfig

__all__ = [
    "Artifact",
    "LabeledVolume",
    "OraclePair",
    "SynthConfig",
    "degrade",
    "generate_neurons",
    "generate_volume",
    "oversegment",
    "shift_skeletons",
    "voxelize"
]
