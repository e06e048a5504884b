"""
    Discriminative ability of segment embeddings: the rank of the positive
    segment's distance to the query among all candidate distances.
"""

import logging
from typing import Sequence

import numpy

from splitfix.embednet.losses import segment_mean_embedding
from splitfix.embednet.model import EmbedNet, EmbeddingField
from splitfix.embednet.samples import PairGroup
from splitfix.embednet.training import embed_volume
from splitfix.volumes.types import LabeledVolume


def positive_rank(positive_distance: float, negative_distances: Sequence[float]) -> int:
    """
        Returns the 1-based rank of the positive distance among the positive &
        negative distances. Ties rank pessimistically (behind every equal
        negative).
    """

    return 1 + int(numpy.count_nonzero(numpy.asarray(negative_distances, dtype=numpy.float64) <= positive_distance))


def mean_rank(positive_distances: Sequence[float], negative_distances: Sequence[Sequence[float]]) -> float:
    if len(positive_distances) != len(negative_distances):
        raise ValueError("Every positive distance needs its list of negative distances.")
    if not len(positive_distances):
        raise ValueError("At least one ranked item is required.")

    return float(numpy.mean([positive_rank(positive, negatives) for positive, negatives in zip(positive_distances, negative_distances)]))


def group_distances(field: EmbeddingField, volume: LabeledVolume, group: PairGroup, cube_nm=(2560.0, 2560.0, 2560.0)) -> tuple[float, list[float]] | None:
    """
        Returns the distances from the query segment's mean embedding to the
        positive & to every negative segment's mean embedding, with means
        taken over the voxels inside the cube centered at the truncation
        point. Returns None when the query or positive is absent from the
        cube; absent negatives are left out.
    """

    slices: tuple[slice, slice, slice] = volume.crop_slices(group.truncation, cube_nm)
    labels: numpy.ndarray = volume.segment_ids[slices]
    values: numpy.ndarray = field.values[slices]

    query_mask: numpy.ndarray = labels == group.seg_a
    positive_mask: numpy.ndarray = labels == group.seg_b
    if not query_mask.any() or not positive_mask.any():
        return None

    mu_query: numpy.ndarray = segment_mean_embedding(values, query_mask, group.seg_a)
    positive_distance = float(numpy.linalg.norm(mu_query - segment_mean_embedding(values, positive_mask, group.seg_b)))

    negative_distances: list[float] = []

    negative_id: int
    for negative_id in group.negatives:
        mask: numpy.ndarray = labels == negative_id
        if mask.any():
            negative_distances.append(float(numpy.linalg.norm(mu_query - segment_mean_embedding(values, mask, negative_id))))

    return positive_distance, negative_distances


def rank_discriminability(field: EmbeddingField | None, volume: LabeledVolume, groups: Sequence[PairGroup], cube_nm=(2560.0, 2560.0, 2560.0), model: EmbedNet | None = None) -> float:
    """
        Returns the mean rank of the positive among the n + 1 candidates of
        every evaluation group (1 is best). The field is computed from the
        model over the whole volume when not given. Groups whose query or
        positive is absent, or with no negative present, are skipped.
    """

    if field is None:
        if model is None:
            raise ValueError("rank_discriminability needs an embedding field or a model.")

        field = embed_volume(model, volume)

    positives: list[float] = []
    negatives: list[list[float]] = []

    group: PairGroup
    for group in groups:
        distances: tuple[float, list[float]] | None = group_distances(field, volume, group, cube_nm)
        if distances is None or not distances[1]:
            continue

        positives.append(distances[0])
        negatives.append(distances[1])

    skipped: int = len(groups) - len(positives)
    if skipped:
        logging.warning(f"Skipped {skipped} of {len(groups)} ranking groups without a complete candidate set in their cube.")

    return mean_rank(positives, negatives)
