"""
    Connectivity-aware contrastive loss & segmentation clustering loss on
    dense embedding fields, with their analytic gradients.

    Field values are (D, H, W, k) arrays; segment masks are taken from a
    (D, H, W) label grid where 0 is background.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy

from splitfix.exceptions import EmptyMaskError, ShapeMismatchError

LAMBDA3_MODES: tuple[str, str, str] = ("adaptive", "fixed", "seg_only")


@dataclass(frozen=True)
class Lambda3Schedule:
    """
        Weight of the clustering loss at each training step. "adaptive" moves
        linearly from start to end over total_steps & stays at end afterwards;
        "fixed" & "seg_only" hold fixed_value ("seg_only" also switches the
        merge & split terms off).
    """

    mode: str = "adaptive"
    start: float = 1.0
    end: float = 0.2
    total_steps: int = 20000
    fixed_value: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in LAMBDA3_MODES:
            raise ValueError(f"Lambda3Schedule mode must be one of {LAMBDA3_MODES}.")
        if self.end > self.start:
            raise ValueError("Lambda3Schedule end must not be greater than start.")
        if min(self.start, self.end, self.fixed_value) < 0:
            raise ValueError("Lambda3Schedule weights must not be negative.")

    def __call__(self, step: int) -> float:
        if self.mode != "adaptive":
            return self.fixed_value
        if self.total_steps <= 0 or step >= self.total_steps:
            return self.end

        fraction: float = max(step, 0) / self.total_steps

        return self.start * (1 - fraction) + self.end * fraction

    @property
    def uses_connectivity_terms(self) -> bool:
        return self.mode != "seg_only"


@dataclass(frozen=True)
class LossWeights:
    lambda_merge: float = 0.1
    lambda_split: float = 1.0
    lambda3: float = 1.0
    delta_d: float = 1.5
    delta_v: float = 0.5
    gamma: float = 0.001


@dataclass(frozen=True)
class SegClusterTerms:
    intra: float
    inter: float
    regularization: float
    total: float


@dataclass(frozen=True)
class LossComponents:
    merge: float
    split: float
    seg: float
    lambda3: float
    total: float

    def is_finite(self) -> bool:
        return bool(numpy.all(numpy.isfinite((self.merge, self.split, self.seg, self.total))))


def _field_values(field) -> numpy.ndarray:
    return field.values if hasattr(field, "values") else numpy.asarray(field)


def segment_mean_embedding(field, mask: numpy.ndarray, segment_id: int | None = None) -> numpy.ndarray:
    """ Returns the mean embedding vector over the voxels selected by a boolean mask. """

    values: numpy.ndarray = _field_values(field)
    mask = numpy.asarray(mask, dtype=bool)
    if mask.shape != values.shape[:-1]:
        raise ShapeMismatchError("Mask dims must match the field dims.", expected=values.shape[:-1], actual=mask.shape)
    if not mask.any():
        raise EmptyMaskError(segment_id=segment_id)

    return values[mask].mean(axis=0)


def _check_dimensions(mu_query: numpy.ndarray, mu_pos: numpy.ndarray, mu_negs: numpy.ndarray) -> None:
    if mu_query.shape != mu_pos.shape or (len(mu_negs) and mu_negs.shape[1:] != mu_query.shape):
        raise ShapeMismatchError("Segment embeddings must all have the same dimension.", expected=mu_query.shape, actual=(mu_pos.shape, mu_negs.shape[1:]))


def merge_split_loss(mu_query, mu_pos, mu_negs, delta_d: float) -> tuple[float, float]:
    """
        Returns (L_merge, L_split): the squared distance between the query &
        positive segment embeddings, & the mean squared hinge pushing every
        negative embedding at least 2 * delta_d away from both of them.
    """

    mu_query = numpy.asarray(mu_query, dtype=numpy.float64)
    mu_pos = numpy.asarray(mu_pos, dtype=numpy.float64)
    mu_negs = numpy.asarray(mu_negs, dtype=numpy.float64).reshape(-1, mu_query.shape[-1])
    _check_dimensions(mu_query, mu_pos, mu_negs)

    merge = float(numpy.sum((mu_query - mu_pos) ** 2))
    if not len(mu_negs):
        return merge, 0.0

    query_hinge: numpy.ndarray = numpy.maximum(2 * delta_d - numpy.linalg.norm(mu_query - mu_negs, axis=1), 0)
    pos_hinge: numpy.ndarray = numpy.maximum(2 * delta_d - numpy.linalg.norm(mu_pos - mu_negs, axis=1), 0)

    return merge, float(numpy.mean(query_hinge ** 2) + numpy.mean(pos_hinge ** 2))


def _hinge_gradient(anchor: numpy.ndarray, others: numpy.ndarray, margin: float) -> numpy.ndarray:
    """
        Returns d/d(anchor - other) of max(margin - |anchor - other|, 0)^2 for
        every other vector (0 where the two coincide).
    """

    differences: numpy.ndarray = anchor - others
    distances: numpy.ndarray = numpy.linalg.norm(differences, axis=-1, keepdims=True)
    hinge: numpy.ndarray = numpy.maximum(margin - distances, 0)
    safe: numpy.ndarray = numpy.where(distances > 0, distances, 1)

    return numpy.where(distances > 0, -2 * hinge * differences / safe, 0)


def merge_split_gradients(mu_query, mu_pos, mu_negs, delta_d: float, weight_merge: float = 1.0, weight_split: float = 1.0) -> tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]:
    """
        Returns the gradients of weight_merge * L_merge + weight_split * L_split
        with respect to the query, positive & negative segment embeddings.
    """

    mu_query = numpy.asarray(mu_query, dtype=numpy.float64)
    mu_pos = numpy.asarray(mu_pos, dtype=numpy.float64)
    mu_negs = numpy.asarray(mu_negs, dtype=numpy.float64).reshape(-1, mu_query.shape[-1])
    _check_dimensions(mu_query, mu_pos, mu_negs)

    grad_query: numpy.ndarray = weight_merge * 2 * (mu_query - mu_pos)
    grad_pos: numpy.ndarray = -grad_query
    grad_negs: numpy.ndarray = numpy.zeros_like(mu_negs)

    if len(mu_negs):
        query_terms: numpy.ndarray = weight_split * _hinge_gradient(mu_query, mu_negs, 2 * delta_d) / len(mu_negs)
        pos_terms: numpy.ndarray = weight_split * _hinge_gradient(mu_pos, mu_negs, 2 * delta_d) / len(mu_negs)
        grad_query = grad_query + query_terms.sum(axis=0)
        grad_pos = grad_pos + pos_terms.sum(axis=0)
        grad_negs = -(query_terms + pos_terms)

    return grad_query, grad_pos, grad_negs


def _segment_statistics(values: numpy.ndarray, labels: numpy.ndarray) -> tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray, numpy.ndarray]:
    """
        Returns (labelled voxel flags, compact segment index per labelled
        voxel, voxel count per segment, mean embedding per segment).
    """

    labels = numpy.asarray(labels)
    if labels.shape != values.shape[:-1]:
        raise ShapeMismatchError("Label dims must match the field dims.", expected=values.shape[:-1], actual=labels.shape)

    labelled: numpy.ndarray = labels > 0
    if not labelled.any():
        raise EmptyMaskError("At least one pseudo-segment mask is required.")

    _, inverse = numpy.unique(labels[labelled], return_inverse=True)
    counts: numpy.ndarray = numpy.bincount(inverse)
    labelled_values: numpy.ndarray = values[labelled].astype(numpy.float64)
    means: numpy.ndarray = numpy.stack([
        numpy.bincount(inverse, weights=labelled_values[:, channel], minlength=len(counts))
        for channel in range(values.shape[-1])
    ], axis=1) / counts[:, None]

    return labelled, inverse, counts, means


def seg_cluster_loss(field, labels: numpy.ndarray, delta_v: float = 0.5, delta_d: float = 1.5, gamma: float = 0.001) -> SegClusterTerms:
    """
        Returns the clustering loss terms: the mean (over segments) of the
        mean squared hinge pulling voxels within delta_v of their segment
        mean, the mean (over segment pairs) squared hinge pushing segment
        means 2 * delta_d apart & the mean segment-mean norm weighted by gamma.
    """

    values: numpy.ndarray = _field_values(field)
    labelled, inverse, counts, means = _segment_statistics(values, labels)
    segment_count: int = len(counts)

    distances: numpy.ndarray = numpy.linalg.norm(values[labelled] - means[inverse], axis=1)
    intra_hinge: numpy.ndarray = numpy.maximum(distances - delta_v, 0) ** 2
    intra = float(numpy.mean(numpy.bincount(inverse, weights=intra_hinge, minlength=segment_count) / counts))

    inter: float = 0.0
    if segment_count > 1:
        first, second = numpy.triu_indices(segment_count, k=1)
        pair_distances: numpy.ndarray = numpy.linalg.norm(means[first] - means[second], axis=1)
        inter = float(numpy.mean(numpy.maximum(2 * delta_d - pair_distances, 0) ** 2))

    regularization = float(numpy.mean(numpy.linalg.norm(means, axis=1)))

    return SegClusterTerms(intra=intra, inter=inter, regularization=regularization, total=intra + inter + gamma * regularization)


def seg_cluster_gradient(field, labels: numpy.ndarray, delta_v: float = 0.5, delta_d: float = 1.5, gamma: float = 0.001) -> numpy.ndarray:
    """ Returns the gradient of seg_cluster_loss().total with respect to the field values. """

    values: numpy.ndarray = _field_values(field)
    labelled, inverse, counts, means = _segment_statistics(values, labels)
    segment_count: int = len(counts)

    differences: numpy.ndarray = values[labelled] - means[inverse]
    distances: numpy.ndarray = numpy.linalg.norm(differences, axis=1, keepdims=True)
    hinge: numpy.ndarray = numpy.maximum(distances - delta_v, 0)
    safe: numpy.ndarray = numpy.where(distances > 0, distances, 1)
    direct: numpy.ndarray = numpy.where(distances > 0, 2 * hinge * differences / safe, 0) / (segment_count * counts[inverse][:, None])

    grad_means: numpy.ndarray = -numpy.stack([
        numpy.bincount(inverse, weights=direct[:, channel], minlength=segment_count)
        for channel in range(values.shape[-1])
    ], axis=1)

    if segment_count > 1:
        first, second = numpy.triu_indices(segment_count, k=1)
        pair_terms: numpy.ndarray = _hinge_gradient(means[first], means[second], 2 * delta_d) / len(first)
        numpy.add.at(grad_means, first, pair_terms)
        numpy.add.at(grad_means, second, -pair_terms)

    norms: numpy.ndarray = numpy.linalg.norm(means, axis=1, keepdims=True)
    grad_means += gamma * numpy.where(norms > 0, means / numpy.where(norms > 0, norms, 1), 0) / segment_count

    gradient = numpy.zeros(values.shape, dtype=numpy.float64)
    gradient[labelled] = direct + grad_means[inverse] / counts[inverse][:, None]

    return gradient


def total_loss(merge: float, split: float, seg: float, lambda_merge: float, lambda_split: float, lambda3: float) -> float:
    """ Returns lambda_merge * L_merge + lambda_split * L_split + lambda3 * L_seg. """

    return lambda_merge * merge + lambda_split * split + lambda3 * seg


def connectivity_loss(field, labels: numpy.ndarray, query_id: int, positive_id: int, negative_ids: Sequence[int], weights: LossWeights) -> tuple[LossComponents, numpy.ndarray]:
    """
        Returns the weighted training loss of one crop (merge & split terms
        on the query, positive & negative segment means plus the clustering
        term over every segment in the label grid) & its gradient with
        respect to the field values.
    """

    values: numpy.ndarray = _field_values(field).astype(numpy.float64)
    labels = numpy.asarray(labels)

    query_mask: numpy.ndarray = labels == query_id
    positive_mask: numpy.ndarray = labels == positive_id
    negative_masks: list[numpy.ndarray] = [labels == negative_id for negative_id in negative_ids]

    mu_query: numpy.ndarray = segment_mean_embedding(values, query_mask, query_id)
    mu_pos: numpy.ndarray = segment_mean_embedding(values, positive_mask, positive_id)
    mu_negs: numpy.ndarray = numpy.array([
        segment_mean_embedding(values, mask, negative_id)
        for negative_id, mask in zip(negative_ids, negative_masks)
    ]).reshape(-1, values.shape[-1])

    merge, split = merge_split_loss(mu_query, mu_pos, mu_negs, weights.delta_d)
    seg_terms: SegClusterTerms = seg_cluster_loss(values, labels, weights.delta_v, weights.delta_d, weights.gamma)
    total: float = total_loss(merge, split, seg_terms.total, weights.lambda_merge, weights.lambda_split, weights.lambda3)

    grad_query, grad_pos, grad_negs = merge_split_gradients(mu_query, mu_pos, mu_negs, weights.delta_d, weights.lambda_merge, weights.lambda_split)
    gradient: numpy.ndarray = weights.lambda3 * seg_cluster_gradient(values, labels, weights.delta_v, weights.delta_d, weights.gamma)
    gradient[query_mask] += grad_query / query_mask.sum()
    gradient[positive_mask] += grad_pos / positive_mask.sum()

    mask: numpy.ndarray
    for mask, grad_neg in zip(negative_masks, grad_negs):
        gradient[mask] += grad_neg / mask.sum()

    components = LossComponents(merge=merge, split=split, seg=seg_terms.total, lambda3=weights.lambda3, total=total)

    return components, gradient
