"""
    Training driver of the embedding network: a producer pool prepares
    augmented crops while a single consumer runs forward & backward passes,
    logs the loss components & writes the checkpoint.
"""

import csv
import io
import logging
import math
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Mapping, Sequence

import numpy

from core.utils import atomic_write, provenance_line
from splitfix.embednet.losses import Lambda3Schedule, LossComponents, LossWeights, connectivity_loss
from splitfix.embednet.model import ARCHITECTURE_TAG, EmbedNet, EmbeddingField, embed_forward
from splitfix.embednet.samples import Augmentations, PairGroup, TrainingSample, build_training_sample, extract_crop
from splitfix.exceptions import EmptyPairCropError, NonFiniteError
from splitfix.numerics.checkpoints import load_checkpoint, save_checkpoint
from splitfix.numerics.optimizers import AdamW, LearningRateSchedule
from splitfix.registration import segment_neuron_map
from splitfix.volumes.types import LabeledVolume

TRAINING_LOG_COLUMNS: tuple[str, ...] = ("step", "L_merge", "L_split", "L_seg", "lambda3", "total")
MAX_SAMPLE_ATTEMPTS = 20
HARD_BLOCK_STREAM = 7


@dataclass(frozen=True)
class EmbedTrainConfig:
    """
        Embedding training settings. crop_size is in (W, H, D) voxels;
        hard_block_fraction > 0 enables the fine-tuning pass on the training
        blocks with the highest loss.
    """

    crop_size: tuple[int, int, int] = (65, 65, 9)
    channels: tuple[int, int, int] = (8, 16, 32)
    k: int = 16
    lambda_merge: float = 0.1
    lambda_split: float = 1.0
    lambda3: Lambda3Schedule = field(default_factory=Lambda3Schedule)
    delta_d: float = 1.5
    delta_v: float = 0.5
    gamma: float = 0.001
    negatives: int = 20
    batch_size: int = 1
    learning_rate: LearningRateSchedule = field(default_factory=lambda: LearningRateSchedule(base_rate=0.002, warmup_steps=500, decay_every=5000, decay_factor=0.5))
    weight_decay: float = 0.01
    steps: int = 20000
    augmentations: Augmentations = field(default_factory=Augmentations)
    hard_block_fraction: float = 0.0
    fine_tune_steps: int = 0
    prefetch: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.lambda_merge, self.lambda_split, self.gamma, self.delta_v, self.weight_decay) < 0:
            raise ValueError("Loss weights, delta_v & weight decay must not be negative.")
        if self.delta_d <= 0:
            raise ValueError("delta_d must be positive.")
        if min(self.crop_size) < 1 or min(self.channels) < 1 or self.k < 1:
            raise ValueError("crop_size, channels & k must be positive.")
        if self.negatives < 0 or self.steps < 0 or self.fine_tune_steps < 0:
            raise ValueError("negatives, steps & fine_tune_steps must not be negative.")
        if self.batch_size < 1 or self.prefetch < 1:
            raise ValueError("batch_size & prefetch must be at least 1.")
        if not 0.0 <= self.hard_block_fraction <= 1.0:
            raise ValueError("hard_block_fraction must be within [0, 1].")

    def loss_weights(self, step: int) -> LossWeights:
        """ Returns the loss weights used at the given step (merge & split are off in seg_only mode). """

        connectivity: bool = self.lambda3.uses_connectivity_terms

        return LossWeights(
            lambda_merge=self.lambda_merge if connectivity else 0.0,
            lambda_split=self.lambda_split if connectivity else 0.0,
            lambda3=self.lambda3(step),
            delta_d=self.delta_d,
            delta_v=self.delta_v,
            gamma=self.gamma
        )


@dataclass(frozen=True)
class LossLogRow:
    step: int
    merge: float
    split: float
    seg: float
    lambda3: float
    total: float


@dataclass
class EmbedTrainResult:
    model: EmbedNet
    log: list[LossLogRow]
    optimizer: AdamW


def _draw_batch(volume: LabeledVolume, groups: Sequence[PairGroup], config: EmbedTrainConfig, step: int, segment_to_neuron: Mapping[int, int]) -> list[TrainingSample]:
    """
        Builds the samples of one step from a generator seeded by (seed, step)
        alone, so batches do not depend on the number of producer threads.
    """

    rng = numpy.random.default_rng([config.seed, step])
    samples: list[TrainingSample] = []

    while len(samples) < config.batch_size:
        for _ in range(MAX_SAMPLE_ATTEMPTS):
            group: PairGroup = groups[int(rng.integers(len(groups)))]
            try:
                samples.append(build_training_sample(volume, group, config.crop_size, config.negatives, rng, config.augmentations, segment_to_neuron))
            except EmptyPairCropError as e:
                logging.debug(f"Redrawing training sample at step {step}: {e}")
            else:
                break
        else:
            raise EmptyPairCropError(f"No usable training crop after {MAX_SAMPLE_ATTEMPTS} draws at step {step}.")

    return samples


def _train_step(model: EmbedNet, optimizer: AdamW, samples: list[TrainingSample], weights: LossWeights, step: int) -> LossLogRow:
    """ Runs one forward/backward/update round on a batch & returns its mean loss components. """

    batch: numpy.ndarray = numpy.stack([sample.image for sample in samples])[:, None]

    optimizer.zero_grad()
    output: numpy.ndarray = model.forward(batch)
    grad_output = numpy.zeros_like(output)
    components: list[LossComponents] = []

    index: int
    sample: TrainingSample
    for index, sample in enumerate(samples):
        sample_components, gradient = connectivity_loss(output[index].transpose(1, 2, 3, 0), sample.labels, sample.query_id, sample.positive_id, sample.negative_ids, weights)
        components.append(sample_components)
        grad_output[index] = (gradient / len(samples)).transpose(3, 0, 1, 2)

    row = LossLogRow(
        step=step,
        merge=float(numpy.mean([item.merge for item in components])),
        split=float(numpy.mean([item.split for item in components])),
        seg=float(numpy.mean([item.seg for item in components])),
        lambda3=weights.lambda3,
        total=float(numpy.mean([item.total for item in components]))
    )
    if not all(item.is_finite() for item in components):
        raise NonFiniteError("Training loss became non-finite.", step=step)

    model.backward(grad_output)
    optimizer.step()

    return row


def _run_steps(model: EmbedNet, optimizer: AdamW, volume: LabeledVolume, groups: Sequence[PairGroup], config: EmbedTrainConfig, first_step: int, steps: int, segment_to_neuron: Mapping[int, int], workers: int) -> list[LossLogRow]:
    rows: list[LossLogRow] = []
    if steps == 0:
        return rows

    model.train()
    with ThreadPoolExecutor(max_workers=workers) as executor:
        pending: deque[Future] = deque()
        next_step: int = first_step

        step: int
        for step in range(first_step, first_step + steps):
            while next_step < first_step + steps and len(pending) < config.prefetch:
                pending.append(executor.submit(_draw_batch, volume, groups, config, next_step, segment_to_neuron))
                next_step += 1

            row: LossLogRow = _train_step(model, optimizer, pending.popleft().result(), config.loss_weights(step), step)
            rows.append(row)
            logging.debug(f"Step {step}: L_merge={row.merge:.4f} L_split={row.split:.4f} L_seg={row.seg:.4f} lambda3={row.lambda3:.3f} total={row.total:.4f}")

            if (step + 1) % 1000 == 0:
                logging.info(f"Embedding training reached step {step + 1}: total loss {row.total:.4f}.")

        for future in pending:
            future.cancel()

    return rows


def group_loss(model: EmbedNet, volume: LabeledVolume, group: PairGroup, config: EmbedTrainConfig, segment_to_neuron: Mapping[int, int], rng: numpy.random.Generator) -> float | None:
    """ Returns the un-augmented evaluation-mode loss of one group, or None when its crop misses a segment. """

    try:
        sample: TrainingSample = build_training_sample(volume, group, config.crop_size, config.negatives, rng, Augmentations.disabled(), segment_to_neuron)
    except EmptyPairCropError:
        return None

    embedding: EmbeddingField = embed_forward(model, sample.image)
    components, _ = connectivity_loss(embedding, sample.labels, sample.query_id, sample.positive_id, sample.negative_ids, config.loss_weights(config.steps))

    return components.total


def select_hard_groups(model: EmbedNet, volume: LabeledVolume, groups: Sequence[PairGroup], config: EmbedTrainConfig, segment_to_neuron: Mapping[int, int]) -> list[PairGroup]:
    """
        Ranks training blocks by the mean loss of their groups & returns the
        groups of the top hard_block_fraction of blocks (at least one block).
    """

    rng = numpy.random.default_rng([config.seed, HARD_BLOCK_STREAM])
    block_losses: dict[tuple[int, int, int] | None, list[float]] = {}

    group: PairGroup
    for group in groups:
        loss: float | None = group_loss(model, volume, group, config, segment_to_neuron, rng)
        if loss is not None:
            block_losses.setdefault(group.block, []).append(loss)

    if not block_losses:
        return list(groups)

    ranked: list[tuple[int, int, int] | None] = sorted(block_losses, key=lambda block: (-float(numpy.mean(block_losses[block])), str(block)))
    hard: set = set(ranked[:max(1, math.ceil(config.hard_block_fraction * len(ranked)))])

    logging.info(f"Fine-tuning on {len(hard)} of {len(ranked)} training blocks with the highest loss.")

    return [group for group in groups if group.block in hard]


def write_training_log(path: Path, rows: Sequence[LossLogRow], config_digest: str) -> None:
    """ Writes the per-step loss log as CSV after a provenance comment line. """

    buffer = io.StringIO()
    buffer.write(provenance_line(config_digest) + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TRAINING_LOG_COLUMNS)

    row: LossLogRow
    for row in rows:
        writer.writerow([row.step, f"{row.merge:.9g}", f"{row.split:.9g}", f"{row.seg:.9g}", f"{row.lambda3:.9g}", f"{row.total:.9g}"])

    def _write(file: IO[bytes]) -> None:
        file.write(buffer.getvalue().encode("utf-8"))

    atomic_write(path, _write)


def train_embed(volume: LabeledVolume, groups: Sequence[PairGroup], config: EmbedTrainConfig, checkpoint_path: Path, log_path: Path, config_digest: str, workers: int = 1) -> EmbedTrainResult:
    """
        Trains a freshly initialised embedding network on crops around the
        given pair groups, then writes the checkpoint & the training log. A
        run with 0 steps writes the initial parameters.
    """

    if not groups:
        raise ValueError("Embedding training needs at least one pair group.")

    model = EmbedNet(config.channels, config.k, seed=config.seed)
    optimizer = AdamW(model.trainable_parameters(), config.learning_rate, config.weight_decay)
    segment_to_neuron: dict[int, int] = segment_neuron_map(volume)

    logging.info(f"Training the embedding network for {config.steps} steps on {len(groups)} pair groups.")
    rows: list[LossLogRow] = _run_steps(model, optimizer, volume, groups, config, 0, config.steps, segment_to_neuron, workers)

    if config.hard_block_fraction > 0 and config.fine_tune_steps > 0:
        hard_groups: list[PairGroup] = select_hard_groups(model, volume, groups, config, segment_to_neuron)
        rows += _run_steps(model, optimizer, volume, hard_groups, config, config.steps, config.fine_tune_steps, segment_to_neuron, workers)

    save_checkpoint(checkpoint_path, ARCHITECTURE_TAG, model.parameters(), config_digest, optimizer.state)
    write_training_log(log_path, rows, config_digest)

    logging.info(f"Saved the embedding checkpoint to {checkpoint_path}.")

    return EmbedTrainResult(model=model, log=rows, optimizer=optimizer)


def load_embed_model(path: Path, channels: tuple[int, int, int] = (8, 16, 32), k: int = 16) -> EmbedNet:
    model = EmbedNet(channels, k)
    load_checkpoint(path, ARCHITECTURE_TAG, model.parameters())

    return model.eval()


def embed_volume(model: EmbedNet, volume: LabeledVolume) -> EmbeddingField:
    """ Returns the embedding field of a whole volume's image, computed in one evaluation-mode pass. """

    logging.info(f"Embedding a {volume.dims} voxel volume.")

    return embed_forward(model, volume.image)


def embed_crop(model: EmbedNet, volume: LabeledVolume, center_nm, crop_size: tuple[int, int, int]) -> tuple[EmbeddingField, numpy.ndarray]:
    """ Returns the embedding field & segment labels of one crop. """

    image, labels = extract_crop(volume, center_nm, crop_size)

    return embed_forward(model, image), labels
