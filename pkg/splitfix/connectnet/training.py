"""
    Connectivity classifier training: batches rebalanced to a fixed positive
    fraction, a binary cross-entropy objective, the training log & checkpoint.
"""

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence

import numpy

from core.utils import atomic_write, provenance_line
from splitfix.connectnet.models import MASK_ARCHITECTURE_TAG, POINT_ARCHITECTURE_TAG, MaskModelConfig, Mask_Classifier, PointModelConfig, Point_Classifier
from splitfix.connectnet.samples import FEATURE_SOURCES, MASK_BASE_CHANNELS, POINT_BASE_COLUMNS, MaskSample, PointSample, stack_samples
from splitfix.embednet.model import EmbeddingField
from splitfix.exceptions import NonFiniteError
from splitfix.numerics.checkpoints import load_checkpoint, save_checkpoint
from splitfix.numerics.losses import sigmoid_binary_cross_entropy
from splitfix.numerics.optimizers import AdamW, LearningRateSchedule

ARCHITECTURES: tuple[str, str] = ("point", "mask")
CLASSIFIER_LOG_COLUMNS: tuple[str, ...] = ("step", "loss", "accuracy", "positive_fraction")


@dataclass(frozen=True)
class ClassifierConfig:
    architecture: str = "point"
    feature_source: str = "embedding"
    points: int = 2048
    cube_nm: tuple[float, float, float] = (2560.0, 2560.0, 2560.0)
    mask_side_nm: float = 1200.0
    mask_dims: tuple[int, int, int] = (52, 52, 18)
    positive_fraction: float = 0.3
    batch_size: int = 16
    steps: int = 2000
    learning_rate: LearningRateSchedule = field(default_factory=lambda: LearningRateSchedule(base_rate=0.001, warmup_steps=100, decay_every=1000, decay_factor=0.5))
    weight_decay: float = 0.01
    point_model: PointModelConfig = field(default_factory=PointModelConfig)
    mask_model: MaskModelConfig = field(default_factory=MaskModelConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}.")
        if self.feature_source not in FEATURE_SOURCES:
            raise ValueError(f"feature_source must be one of {FEATURE_SOURCES}.")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ValueError("positive_fraction must be within (0, 1).")
        if self.points < 1 or self.batch_size < 1 or self.steps < 0:
            raise ValueError("points & batch_size must be positive & steps must not be negative.")

    @property
    def architecture_tag(self) -> str:
        return POINT_ARCHITECTURE_TAG if self.architecture == "point" else MASK_ARCHITECTURE_TAG


class RebalancedBatchSampler:
    """
        Draws training batches whose positive count follows the target
        fraction exactly over any run of batches: batch b holds
        floor((b + 1) * f * B) - floor(b * f * B) positives. Indices are drawn
        with replacement from a generator seeded by (seed, b).
    """

    def __init__(self, labels: Sequence[int], batch_size: int, positive_fraction: float = 0.3, seed: int = 0) -> None:
        labels = numpy.asarray(labels)

        self.positives: numpy.ndarray = numpy.flatnonzero(labels == 1)
        self.negatives: numpy.ndarray = numpy.flatnonzero(labels == 0)
        self.batch_size = batch_size
        self.positive_fraction = positive_fraction
        self.seed = seed

        if not len(self.positives) and not len(self.negatives):
            raise ValueError("The batch sampler needs at least one labelled sample.")
        if not len(self.positives) or not len(self.negatives):
            logging.warning("Training samples hold a single class; batches cannot be rebalanced.")

    def positive_count(self, batch_index: int) -> int:
        target: float = self.positive_fraction * self.batch_size
        count = int(numpy.floor((batch_index + 1) * target + 1e-9) - numpy.floor(batch_index * target + 1e-9))

        if not len(self.negatives):
            return self.batch_size
        if not len(self.positives):
            return 0

        return count

    def batch(self, batch_index: int) -> numpy.ndarray:
        rng = numpy.random.default_rng([self.seed, batch_index])
        positive_count: int = self.positive_count(batch_index)

        chosen = numpy.concatenate([
            rng.choice(self.positives, size=positive_count, replace=True) if positive_count else numpy.zeros(0, dtype=numpy.int64),
            rng.choice(self.negatives, size=self.batch_size - positive_count, replace=True) if positive_count < self.batch_size else numpy.zeros(0, dtype=numpy.int64)
        ])

        return rng.permutation(chosen)


@dataclass(frozen=True)
class ClassifierLogRow:
    step: int
    loss: float
    accuracy: float
    positive_fraction: float


@dataclass
class ClassifierTrainResult:
    model: Point_Classifier | Mask_Classifier
    log: list[ClassifierLogRow]
    optimizer: AdamW


def sample_channels(samples: Sequence[PointSample | MaskSample]) -> int:
    """ Returns the feature (point) or channel (mask) count of the samples. """

    if not samples:
        raise ValueError("At least one sample is required.")

    first: PointSample | MaskSample = samples[0]

    return first.data.shape[-1] if isinstance(first, PointSample) else first.data.shape[0]


def classifier_channels(architecture: str, field: EmbeddingField | None) -> int:
    """ Returns the input width samples built with the given feature field have. """

    base: int = POINT_BASE_COLUMNS if architecture == "point" else MASK_BASE_CHANNELS

    return base + (field.k if field is not None else 0)


def build_classifier(config: ClassifierConfig, channels: int) -> Point_Classifier | Mask_Classifier:
    if config.architecture == "point":
        if channels < POINT_BASE_COLUMNS:
            raise ValueError(f"Point samples need at least {POINT_BASE_COLUMNS} columns.")
        return Point_Classifier(channels, config.point_model, seed=config.seed)

    return Mask_Classifier(channels, config.mask_model, seed=config.seed)


def write_classifier_log(path: Path, rows: Sequence[ClassifierLogRow], config_digest: str) -> None:
    buffer = io.StringIO()
    buffer.write(provenance_line(config_digest) + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CLASSIFIER_LOG_COLUMNS)

    row: ClassifierLogRow
    for row in rows:
        writer.writerow([row.step, f"{row.loss:.9g}", f"{row.accuracy:.6f}", f"{row.positive_fraction:.6f}"])

    def _write(file: IO[bytes]) -> None:
        file.write(buffer.getvalue().encode("utf-8"))

    atomic_write(path, _write)


def train_classifier(samples: Sequence[PointSample | MaskSample], config: ClassifierConfig, checkpoint_path: Path | None = None, log_path: Path | None = None, config_digest: str = "0" * 64) -> ClassifierTrainResult:
    """
        Trains the configured classifier on rebalanced batches of the given
        samples with a sigmoid binary cross-entropy objective. The checkpoint
        & log are written when their paths are given; 0 steps keeps the
        initial parameters.
    """

    channels: int = sample_channels(samples)
    model: Point_Classifier | Mask_Classifier = build_classifier(config, channels)
    optimizer = AdamW(model.trainable_parameters(), config.learning_rate, config.weight_decay)
    labels: numpy.ndarray = numpy.array([sample.label for sample in samples])
    sampler = RebalancedBatchSampler(labels, config.batch_size, config.positive_fraction, config.seed)
    rows: list[ClassifierLogRow] = []

    logging.info(f"Training the {config.architecture} classifier for {config.steps} steps on {len(samples)} samples ({int(labels.sum())} positive).")

    model.train()

    step: int
    for step in range(config.steps):
        indices: numpy.ndarray = sampler.batch(step)
        batch_labels: numpy.ndarray = labels[indices].astype(numpy.float32)

        optimizer.zero_grad()
        logits: numpy.ndarray = model.forward(stack_samples([samples[index] for index in indices.tolist()]))
        loss, gradient = sigmoid_binary_cross_entropy(logits, batch_labels)
        if not numpy.isfinite(loss):
            raise NonFiniteError("Classifier loss became non-finite.", step=step)

        model.backward(gradient)
        optimizer.step()

        row = ClassifierLogRow(step=step, loss=loss, accuracy=float(numpy.mean((logits > 0) == (batch_labels > 0.5))), positive_fraction=float(batch_labels.mean()))
        rows.append(row)
        logging.debug(f"Classifier step {step}: loss={row.loss:.4f} accuracy={row.accuracy:.3f}")

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, config.architecture_tag, model.parameters(), config_digest, optimizer.state)
        logging.info(f"Saved the classifier checkpoint to {checkpoint_path}.")
    if log_path is not None:
        write_classifier_log(log_path, rows, config_digest)

    return ClassifierTrainResult(model=model, log=rows, optimizer=optimizer)


def load_classifier(path: Path, config: ClassifierConfig, channels: int) -> Point_Classifier | Mask_Classifier:
    model: Point_Classifier | Mask_Classifier = build_classifier(config, channels)
    load_checkpoint(path, config.architecture_tag, model.parameters())
    model.eval()

    return model
