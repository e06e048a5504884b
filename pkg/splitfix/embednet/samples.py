"""
    Training samples for the embedding network: candidate pairs grouped into
    query/positive/negative sets, padded crops around truncation points &
    crop augmentation.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy
from scipy import ndimage

from splitfix.exceptions import EmptyPairCropError
from splitfix.registration import UNASSIGNED, CandidatePair
from splitfix.volumes.types import LabeledVolume, padded_window


@dataclass(frozen=True)
class PairGroup:
    """
        One positive pair (query seg_a, positive seg_b) with the negatives
        sampled around the same truncation point.
    """

    seg_a: int
    seg_b: int
    truncation: tuple[float, float, float]
    negatives: tuple[int, ...] = ()
    block: tuple[int, int, int] | None = None


@dataclass(frozen=True)
class Augmentations:
    rotate: bool = True
    flip: bool = True
    rescale: bool = True
    intensity: bool = True
    rescale_range: float = 0.1
    gamma_range: tuple[float, float] = (0.8, 1.25)

    def __post_init__(self) -> None:
        if not 0.0 <= self.rescale_range < 1.0:
            raise ValueError("rescale_range must be within [0, 1).")
        if not 0.0 < self.gamma_range[0] <= self.gamma_range[1]:
            raise ValueError("gamma_range must be a positive (low, high) pair.")

    @classmethod
    def disabled(cls) -> "Augmentations":
        return cls(rotate=False, flip=False, rescale=False, intensity=False)


@dataclass(frozen=True)
class TrainingSample:
    image: numpy.ndarray
    labels: numpy.ndarray
    query_id: int
    positive_id: int
    negative_ids: tuple[int, ...]
    block: tuple[int, int, int] | None = None


def group_pairs(pairs: Iterable[CandidatePair]) -> list[PairGroup]:
    """
        Groups a pair list into one PairGroup per positive pair. Negatives
        join the positive sharing their query segment & truncation point;
        negatives with no such positive are dropped.
    """

    positives: dict[tuple[int, tuple[float, float, float]], CandidatePair] = {}
    negatives: dict[tuple[int, tuple[float, float, float]], list[int]] = {}

    pair: CandidatePair
    for pair in pairs:
        key: tuple[int, tuple[float, float, float]] = (pair.seg_a, tuple(pair.truncation))
        if pair.label == 1:
            positives.setdefault(key, pair)
        else:
            negatives.setdefault(key, []).append(pair.seg_b)

    orphans: int = sum(len(segment_ids) for key, segment_ids in negatives.items() if key not in positives)
    if orphans:
        logging.warning(f"Dropped {orphans} negative pairs without a matching positive pair.")

    return [
        PairGroup(
            seg_a=positive.seg_a,
            seg_b=positive.seg_b,
            truncation=tuple(positive.truncation),
            negatives=tuple(segment_id for segment_id in negatives.get(key, []) if segment_id != positive.seg_b),
            block=positive.block
        )
        for key, positive in positives.items()
    ]


def _fit(grid: numpy.ndarray, shape: tuple[int, ...], fill: float = 0) -> numpy.ndarray:
    """ Crops or zero-pads every axis of grid (at its end) to the given shape. """

    grid = grid[tuple(slice(0, size) for size in shape)]

    return numpy.pad(grid, [(0, size - current) for size, current in zip(shape, grid.shape)], mode="constant", constant_values=fill)


def extract_crop(volume: LabeledVolume, center_nm, crop_size: tuple[int, int, int], scale: float = 1.0) -> tuple[numpy.ndarray, numpy.ndarray]:
    """
        Returns the (D, H, W) image & segment crops of the given (W, H, D)
        voxel size centered on the voxel containing center_nm. A scale other
        than 1 reads an in-plane window scale times larger & resamples it to
        the crop size (linear for the image, nearest for labels).
    """

    width, height, depth = (int(size) for size in crop_size)
    source: tuple[int, int, int] = (depth, max(1, int(round(height * scale))), max(1, int(round(width * scale))))
    starts: numpy.ndarray = volume.nm_to_voxel(center_nm) - numpy.array(source) // 2

    image: numpy.ndarray = padded_window(volume.image, starts, source)
    labels: numpy.ndarray = padded_window(volume.segment_ids, starts, source, fill=UNASSIGNED)

    if source[1:] != (height, width):
        factors: tuple[float, float, float] = (1.0, height / source[1], width / source[2])
        image = _fit(ndimage.zoom(image, factors, order=1, mode="nearest"), (depth, height, width), fill=float(image.mean()))
        labels = _fit(ndimage.zoom(labels, factors, order=0, mode="nearest"), (depth, height, width))

    return image.astype(numpy.float32), labels.astype(numpy.uint32)


def augment(image: numpy.ndarray, labels: numpy.ndarray, rng: numpy.random.Generator, augmentations: Augmentations) -> tuple[numpy.ndarray, numpy.ndarray]:
    """
        Applies the enabled in-plane rotation (90 degree multiples, half
        turns only for non-square crops), flips along every axis & gamma
        intensity jitter to an image & its labels.
    """

    if augmentations.rotate:
        square: bool = image.shape[1] == image.shape[2]
        turns = int(rng.integers(0, 4)) if square else 2 * int(rng.integers(0, 2))
        image = numpy.rot90(image, turns, axes=(1, 2))
        labels = numpy.rot90(labels, turns, axes=(1, 2))

    if augmentations.flip:
        axis: int
        for axis in range(3):
            if rng.random() < 0.5:
                image = numpy.flip(image, axis=axis)
                labels = numpy.flip(labels, axis=axis)

    if augmentations.intensity:
        low, high = augmentations.gamma_range
        gamma = float(numpy.exp(rng.uniform(numpy.log(low), numpy.log(high))))
        image = numpy.clip(image, 0.0, 1.0) ** gamma

    return numpy.ascontiguousarray(image, dtype=numpy.float32), numpy.ascontiguousarray(labels, dtype=numpy.uint32)


def build_training_sample(volume: LabeledVolume, group: PairGroup, crop_size: tuple[int, int, int], negatives: int, rng: numpy.random.Generator, augmentations: Augmentations, segment_to_neuron: Mapping[int, int]) -> TrainingSample:
    """
        Returns an augmented crop around a group's truncation point with up
        to the given number of negatives drawn from the segments inside the
        crop that belong to another neuron than the query.
    """

    scale: float = 1.0
    if augmentations.rescale:
        scale = float(rng.uniform(1 - augmentations.rescale_range, 1 + augmentations.rescale_range))

    image, labels = augment(*extract_crop(volume, group.truncation, crop_size, scale), rng, augmentations)

    present: numpy.ndarray = numpy.unique(labels)
    if group.seg_a not in present or group.seg_b not in present:
        raise EmptyPairCropError(seg_a=group.seg_a, seg_b=group.seg_b)

    query_neuron: int | None = segment_to_neuron.get(group.seg_a)
    eligible: list[int] = [
        segment_id
        for segment_id in present.tolist()
        if segment_id not in (UNASSIGNED, group.seg_a, group.seg_b) and segment_to_neuron.get(segment_id) != query_neuron
    ]

    chosen: tuple[int, ...] = ()
    if eligible and negatives > 0:
        chosen = tuple(int(segment_id) for segment_id in rng.choice(numpy.array(eligible), size=min(negatives, len(eligible)), replace=False))

    return TrainingSample(image=image, labels=labels, query_id=group.seg_a, positive_id=group.seg_b, negative_ids=chosen, block=group.block)
