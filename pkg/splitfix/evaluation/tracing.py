"""
    Tracing experiment: score candidate pairs, agglomerate the segmentation
    at a merge threshold & compare expected run length against the
    no-merge baseline.
"""

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy
from scipy import ndimage, spatial

from splitfix.evaluation.metrics import SkeletonRun, agglomerate, skeleton_run_lengths, table_erl
from splitfix.evaluation.scoring import Scorer
from splitfix.geometry import Skeleton
from splitfix.registration import UNASSIGNED, CandidatePair, assign_nodes, segment_neuron_map
from splitfix.volumes.types import LabeledVolume

MAX_AXIS_VOXELS = 4096


@dataclass(frozen=True)
class TracingResult:
    clusters: dict[int, int]
    erl_nm: float
    baseline_erl_nm: float
    table: tuple[SkeletonRun, ...]
    baseline_table: tuple[SkeletonRun, ...]
    pairs: tuple[CandidatePair, ...] = ()
    probabilities: tuple[float, ...] = ()

    @property
    def delta_nm(self) -> float:
        return self.erl_nm - self.baseline_erl_nm

    @property
    def relative_change(self) -> float:
        return self.delta_nm / self.baseline_erl_nm if self.baseline_erl_nm > 0 else 0.0


@dataclass(frozen=True)
class SegmentEnd:
    segment_id: int
    position: numpy.ndarray
    direction: numpy.ndarray


def node_segment_maps(volume: LabeledVolume, skeletons: Sequence[Skeleton], search_radius_voxels: int = 20) -> list[dict[int, int]]:
    return [assign_nodes(skeleton, volume, search_radius_voxels) for skeleton in skeletons]


def segment_ends(volume: LabeledVolume, tail_nm: float = 300.0) -> list[SegmentEnd]:
    """
        Returns the two ends of every segment along the principal axis of its
        voxels: each end is the mean of the voxels within tail_nm of the
        extreme projection & points outwards along the axis.
    """

    ends: list[SegmentEnd] = []
    boxes: list[tuple[slice, ...] | None] = ndimage.find_objects(volume.segment_ids.astype(numpy.int64))

    index: int
    box: tuple[slice, ...] | None
    for index, box in enumerate(boxes):
        segment_id: int = index + 1
        if box is None:
            continue

        voxels: numpy.ndarray = numpy.argwhere(volume.segment_ids[box] == segment_id) + numpy.array([axis.start for axis in box])
        if len(voxels) > MAX_AXIS_VOXELS:
            voxels = voxels[numpy.linspace(0, len(voxels) - 1, MAX_AXIS_VOXELS).astype(numpy.int64)]

        positions: numpy.ndarray = volume.voxel_to_nm(voxels)
        center: numpy.ndarray = positions.mean(axis=0)
        if len(positions) < 2:
            axis = numpy.array([0.0, 0.0, 1.0])
        else:
            axis = numpy.linalg.svd(positions - center, full_matrices=False)[2][0]

        projection: numpy.ndarray = (positions - center) @ axis

        sign: float
        for sign in (-1.0, 1.0):
            extreme = float((sign * projection).max())
            tail: numpy.ndarray = sign * projection >= extreme - tail_nm
            ends.append(SegmentEnd(segment_id=segment_id, position=positions[tail].mean(axis=0), direction=sign * axis))

    return ends


def endpoint_candidates(volume: LabeledVolume, max_distance_nm: float = 1000.0, tail_nm: float = 300.0, segment_to_neuron: Mapping[int, int] | None = None) -> list[CandidatePair]:
    """
        Proposes candidate pairs from segment ends lying within
        max_distance_nm of each other whose outward directions do not point
        away from one another. The truncation point is the midpoint of the
        two ends; labels come from the segments' ground-truth neurons. Each
        segment pair is proposed once, from its closest ends.
    """

    ends: list[SegmentEnd] = segment_ends(volume, tail_nm)
    if len(ends) < 2:
        return []

    segment_to_neuron = segment_neuron_map(volume) if segment_to_neuron is None else segment_to_neuron
    tree = spatial.cKDTree(numpy.array([end.position for end in ends]))
    best: dict[tuple[int, int], tuple[float, numpy.ndarray]] = {}

    i: int
    j: int
    for i, j in sorted(tree.query_pairs(r=max_distance_nm)):
        first, second = ends[i], ends[j]
        if first.segment_id == second.segment_id:
            continue

        offset: numpy.ndarray = second.position - first.position
        if float(first.direction @ offset) < 0 or float(second.direction @ -offset) < 0:
            continue

        key: tuple[int, int] = (min(first.segment_id, second.segment_id), max(first.segment_id, second.segment_id))
        distance = float(numpy.linalg.norm(offset))
        if key not in best or distance < best[key][0]:
            best[key] = (distance, (first.position + second.position) / 2)

    pairs: list[CandidatePair] = [
        CandidatePair(
            seg_a=seg_a,
            seg_b=seg_b,
            truncation=tuple(float(value) for value in midpoint),
            label=int(segment_to_neuron.get(seg_a, -1) == segment_to_neuron.get(seg_b, -2))
        )
        for (seg_a, seg_b), (_, midpoint) in sorted(best.items())
    ]

    logging.info(f"Proposed {len(pairs)} endpoint candidate pairs from {len(ends)} segment ends ({sum(pair.label for pair in pairs)} connected).")

    return pairs


def tracing_experiment(volume: LabeledVolume, skeletons: Sequence[Skeleton], pairs: Sequence[CandidatePair], scorer: Scorer, threshold: float = 0.98, search_radius_voxels: int = 20) -> TracingResult:
    """
        Scores every candidate pair, merges the pairs scored above the
        threshold & returns the expected run length of the merged
        segmentation next to the identity-partition baseline.
    """

    segments: list[int] = [int(segment_id) for segment_id in numpy.unique(volume.segment_ids).tolist() if segment_id != UNASSIGNED]
    node_segments: list[dict[int, int]] = node_segment_maps(volume, skeletons, search_radius_voxels)

    probabilities: numpy.ndarray = numpy.asarray(scorer(pairs), dtype=numpy.float64) if len(pairs) else numpy.zeros(0)
    clusters: dict[int, int] = agglomerate(segments, [(pair.seg_a, pair.seg_b, probability) for pair, probability in zip(pairs, probabilities.tolist())], threshold)

    baseline_table: list[SkeletonRun] = skeleton_run_lengths(skeletons, node_segments, {segment_id: segment_id for segment_id in segments})
    table: list[SkeletonRun] = skeleton_run_lengths(skeletons, node_segments, clusters)

    result = TracingResult(
        clusters=clusters,
        erl_nm=table_erl(table),
        baseline_erl_nm=table_erl(baseline_table),
        table=tuple(table),
        baseline_table=tuple(baseline_table),
        pairs=tuple(pairs),
        probabilities=tuple(probabilities.tolist())
    )

    logging.info(f"Tracing at threshold {threshold}: ERL {result.baseline_erl_nm:.1f} nm -> {result.erl_nm:.1f} nm ({100 * result.relative_change:+.2f}%).")

    return result
