"""
    Classifier-ready pair samples: surface point clouds built from per-slice
    segment contours & 3-channel voxel membership masks, each optionally
    fused with image features.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy
from scipy import ndimage

from splitfix.embednet.model import EmbeddingField
from splitfix.exceptions import EmptyPairCropError, EmptyPointSetError, ShapeMismatchError
from splitfix.geometry import farthest_point_sample
from splitfix.registration import CandidatePair
from splitfix.volumes.types import LabeledVolume, padded_window

FEATURE_SOURCES: tuple[str, str, str] = ("embedding", "intensity", "none")
NEIGHBOURHOOD_HALF_WIDTH: tuple[int, int, int] = (1, 3, 3)  # NOTE: (z, y, x) half sizes of the 3 x 7 x 7 voxel neighbourhood
POINT_BASE_COLUMNS = 4  # NOTE: x, y, z & segment id
MASK_BASE_CHANNELS = 3  # NOTE: query, candidate & union membership

_IN_PLANE_CROSS = numpy.array([[[0, 1, 0], [1, 1, 1], [0, 1, 0]]], dtype=bool)


@dataclass(frozen=True)
class ContourPoints:
    """ Raw contour points of a pair: nm positions, (z, y, x) voxel indices & 0/1 segment ids. """

    positions: numpy.ndarray
    voxels: numpy.ndarray
    ids: numpy.ndarray

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class PointSample:
    """
        Fixed-size point cloud of a pair. data rows are (x, y, z, id, e...)
        with positions normalised into the unit cube: position_nm =
        origin + (x, y, z) * scale.
    """

    data: numpy.ndarray
    label: int
    seg_a: int
    seg_b: int
    truncation: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0


@dataclass(frozen=True)
class MaskSample:
    """ Voxel channels (S_a, S_b, S_a or S_b, e...) of a pair, laid out (C, D, H, W). """

    data: numpy.ndarray
    label: int
    seg_a: int
    seg_b: int
    truncation: tuple[float, float, float]


def feature_field(volume: LabeledVolume, feature_source: str, embedding: EmbeddingField | None = None) -> EmbeddingField | None:
    """ Returns the per-voxel features fused into samples for the given feature source. """

    if feature_source not in FEATURE_SOURCES:
        raise ValueError(f"feature_source must be one of {FEATURE_SOURCES}.")

    if feature_source == "none":
        return None
    if feature_source == "intensity":
        return EmbeddingField.from_intensity(volume.image)
    if embedding is None:
        raise ValueError("The embedding feature source needs an embedding field.")

    return embedding


def extract_contour_points(volume: LabeledVolume, pair: CandidatePair, cube_nm=(2560.0, 2560.0, 2560.0)) -> ContourPoints:
    """
        Returns the in-slice contour voxels of both pair segments inside the
        cube centered at the truncation point: mask voxels with a 4-connected
        in-plane neighbour outside the mask (or outside the volume). S_a
        points carry id 0 & S_b points id 1.
    """

    z_slice, y_slice, x_slice = volume.crop_slices(pair.truncation, cube_nm)
    _, height, width = volume.segment_ids.shape
    y_low, x_low = max(y_slice.start - 1, 0), max(x_slice.start - 1, 0)
    context: numpy.ndarray = volume.segment_ids[z_slice, y_low:min(y_slice.stop + 1, height), x_low:min(x_slice.stop + 1, width)]
    inner: tuple[slice, slice, slice] = (
        slice(None),
        slice(y_slice.start - y_low, y_slice.stop - y_low),
        slice(x_slice.start - x_low, x_slice.stop - x_low)
    )

    voxel_lists: list[numpy.ndarray] = []
    id_lists: list[numpy.ndarray] = []

    point_id: int
    segment_id: int
    for point_id, segment_id in enumerate((pair.seg_a, pair.seg_b)):
        mask: numpy.ndarray = context == segment_id
        if not mask[inner].any():
            raise EmptyPairCropError(seg_a=pair.seg_a, seg_b=pair.seg_b)

        boundary: numpy.ndarray = (mask & ~ndimage.binary_erosion(mask, structure=_IN_PLANE_CROSS, border_value=0))[inner]
        voxels: numpy.ndarray = numpy.argwhere(boundary) + numpy.array([z_slice.start, y_slice.start, x_slice.start])
        voxel_lists.append(voxels)
        id_lists.append(numpy.full(len(voxels), point_id, dtype=numpy.int8))

    voxels = numpy.concatenate(voxel_lists)

    return ContourPoints(positions=volume.voxel_to_nm(voxels), voxels=voxels, ids=numpy.concatenate(id_lists))


def neighbourhood_mean(field: EmbeddingField, voxels: numpy.ndarray) -> numpy.ndarray:
    """
        Returns, for each (z, y, x) voxel index, the mean field vector over
        its 3 x 7 x 7 neighbourhood clipped at the field borders.
        The 7 x 7 in-plane window spans y & x, the 3 voxel window spans z.
    """

    values: numpy.ndarray = field.values
    limits: numpy.ndarray = numpy.array(values.shape[:3])
    half = numpy.array(NEIGHBOURHOOD_HALF_WIDTH)
    means = numpy.empty((len(voxels), values.shape[-1]), dtype=numpy.float64)

    index: int
    voxel: numpy.ndarray
    for index, voxel in enumerate(numpy.asarray(voxels, dtype=numpy.int64)):
        low: numpy.ndarray = numpy.clip(voxel - half, 0, limits)
        high: numpy.ndarray = numpy.clip(voxel + half + 1, 0, limits)
        window: numpy.ndarray = values[low[0]:high[0], low[1]:high[1], low[2]:high[2]]
        means[index] = window.reshape(-1, values.shape[-1]).mean(axis=0, dtype=numpy.float64)

    return means


def build_point_sample(raw: ContourPoints, pair: CandidatePair, m: int = 2048, field: EmbeddingField | None = None, seed: int = 0) -> PointSample:
    """
        Downsamples a pair's contour points to exactly m points by farthest
        point sampling, normalises their positions into the unit cube (the
        longest extent scaled to 1) & attaches 3 x 7 x 7 neighbourhood mean
        features when a field is given.
    """

    if not len(raw):
        raise EmptyPointSetError(argument_name="raw")

    chosen: numpy.ndarray = farthest_point_sample(raw.positions, m, seed=seed)
    positions: numpy.ndarray = raw.positions[chosen]

    lower: numpy.ndarray = positions.min(axis=0)
    extent = float((positions.max(axis=0) - lower).max())
    scale: float = extent if extent > 0 else 1.0

    columns: list[numpy.ndarray] = [(positions - lower) / scale, raw.ids[chosen, None].astype(numpy.float64)]
    if field is not None:
        columns.append(neighbourhood_mean(field, raw.voxels[chosen]))

    return PointSample(
        data=numpy.concatenate(columns, axis=1).astype(numpy.float32),
        label=pair.label,
        seg_a=pair.seg_a,
        seg_b=pair.seg_b,
        truncation=tuple(pair.truncation),
        origin=tuple(float(value) for value in lower),
        scale=scale
    )


def nearest_resize(grid: numpy.ndarray, dims: tuple[int, int, int]) -> numpy.ndarray:
    """
        Nearest-neighbour resize of the first three (z, y, x) axes to dims:
        output index i reads source index floor((i + 0.5) * source / target).
    """

    indices: list[numpy.ndarray] = [
        numpy.minimum(((numpy.arange(target) + 0.5) * source / target).astype(numpy.int64), source - 1)
        for source, target in zip(grid.shape[:3], dims)
    ]

    return grid[numpy.ix_(*indices)]


def build_mask_sample(volume: LabeledVolume, pair: CandidatePair, side_nm: float = 1200.0, dims: tuple[int, int, int] = (52, 52, 18), field: EmbeddingField | None = None) -> MaskSample:
    """
        Returns the membership channels of a cube of side side_nm centered at
        the truncation point, resized to the (W, H, D) dims, followed by the
        field channels resized the same way.
    """

    width, height, depth = dims
    source: tuple[int, ...] = tuple(max(1, int(round(side_nm / size))) for size in volume.voxel_size[::-1])
    starts: numpy.ndarray = volume.nm_to_voxel(pair.truncation) - numpy.array(source) // 2

    labels: numpy.ndarray = padded_window(volume.segment_ids, starts, source, fill=0)
    membership_a: numpy.ndarray = labels == pair.seg_a
    membership_b: numpy.ndarray = labels == pair.seg_b
    if not membership_a.any() or not membership_b.any():
        raise EmptyPairCropError(seg_a=pair.seg_a, seg_b=pair.seg_b)

    resized_a: numpy.ndarray = nearest_resize(membership_a, (depth, height, width))
    resized_b: numpy.ndarray = nearest_resize(membership_b, (depth, height, width))
    channels: list[numpy.ndarray] = [resized_a[None], resized_b[None], (resized_a | resized_b)[None]]

    if field is not None:
        features: numpy.ndarray = padded_window(field.values, starts, source)
        channels.append(nearest_resize(features, (depth, height, width)).transpose(3, 0, 1, 2))

    return MaskSample(
        data=numpy.concatenate([channel.astype(numpy.float32) for channel in channels]),
        label=pair.label,
        seg_a=pair.seg_a,
        seg_b=pair.seg_b,
        truncation=tuple(pair.truncation)
    )


def stack_samples(samples: Sequence[PointSample | MaskSample]) -> numpy.ndarray:
    """ Returns the model input batch of a list of same-shaped samples. """

    if not samples:
        raise ValueError("At least one sample is required.")

    shapes: set[tuple[int, ...]] = {sample.data.shape for sample in samples}
    if len(shapes) > 1:
        raise ShapeMismatchError("Samples in one batch must share their shape.", expected=samples[0].data.shape, actual=sorted(shapes))

    return numpy.stack([sample.data for sample in samples])


def build_samples(volume: LabeledVolume, pairs: Sequence[CandidatePair], architecture: str, field: EmbeddingField | None = None, points: int = 2048, cube_nm=(2560.0, 2560.0, 2560.0), mask_side_nm: float = 1200.0, mask_dims: tuple[int, int, int] = (52, 52, 18), seed: int = 0, workers: int = 1) -> list[PointSample | MaskSample]:
    """
        Builds one sample per pair (in parallel over pairs) for the "point" or
        "mask" architecture. Pairs whose crop misses a segment are skipped.
        Point samples seed their sampling with (seed, pair index).
    """

    if architecture not in ("point", "mask"):
        raise ValueError("architecture must be 'point' or 'mask'.")

    def _build(indexed: tuple[int, CandidatePair]) -> PointSample | MaskSample | None:
        index, pair = indexed
        try:
            if architecture == "mask":
                return build_mask_sample(volume, pair, mask_side_nm, mask_dims, field)

            first_pick_seed = int(numpy.random.default_rng([seed, index]).integers(1, 2 ** 31))
            return build_point_sample(extract_contour_points(volume, pair, cube_nm), pair, points, field, first_pick_seed)
        except EmptyPairCropError:
            return None

    with ThreadPoolExecutor(max_workers=workers) as executor:
        built: list[PointSample | MaskSample | None] = list(executor.map(_build, enumerate(pairs)))

    samples: list[PointSample | MaskSample] = [sample for sample in built if sample is not None]
    if len(samples) < len(built):
        logging.warning(f"Skipped {len(built) - len(samples)} of {len(built)} pairs with a segment missing from their crop.")

    logging.info(f"Built {len(samples)} {architecture} samples.")

    return samples
