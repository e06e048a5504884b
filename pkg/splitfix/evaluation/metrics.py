"""
    Connectivity metrics: confusion counts, precision/recall/F1 & PR curves
    of pair predictions, 1:1 evaluation pair sampling, threshold
    agglomeration & expected run length over ground-truth skeletons.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import networkx
import numpy
from networkx.utils import UnionFind

from splitfix.connectnet.models import DECISION_THRESHOLD
from splitfix.exceptions import UnmappedNodeError
from splitfix.geometry import Skeleton
from splitfix.registration import UNASSIGNED, CandidatePair

Block = tuple[int, int, int]


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        """ Precision is 1 when nothing is predicted positive. """

        predicted: int = self.tp + self.fp
        return self.tp / predicted if predicted else 1.0

    @property
    def recall(self) -> float:
        actual: int = self.tp + self.fn
        return self.tp / actual if actual else 0.0

    @property
    def f1(self) -> float:
        precision, recall = self.precision, self.recall
        return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0

    @classmethod
    def from_predictions(cls, predicted: numpy.ndarray, labels: numpy.ndarray) -> "Confusion":
        predicted = numpy.asarray(predicted, dtype=bool)
        labels = numpy.asarray(labels, dtype=bool)

        return cls(
            tp=int(numpy.count_nonzero(predicted & labels)),
            fp=int(numpy.count_nonzero(predicted & ~labels)),
            tn=int(numpy.count_nonzero(~predicted & ~labels)),
            fn=int(numpy.count_nonzero(~predicted & labels))
        )


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    precision: float
    recall: float


@dataclass(frozen=True)
class EvalReport:
    """
        Scores at the 0.5 decision threshold, the PR curve ordered by
        increasing threshold & (when blocks were given) the same scores per
        spatial block.
    """

    confusion: Confusion
    curve: tuple[CurvePoint, ...]
    blocks: dict[Block, Confusion] | None = None

    @property
    def precision(self) -> float:
        return self.confusion.precision

    @property
    def recall(self) -> float:
        return self.confusion.recall

    @property
    def f1(self) -> float:
        return self.confusion.f1


def pr_curve(scores: numpy.ndarray, labels: numpy.ndarray) -> tuple[CurvePoint, ...]:
    """
        Returns precision & recall at a threshold just below the lowest score
        & at every unique score, a pair being predicted positive when its
        score is strictly above the threshold.
    """

    thresholds: numpy.ndarray = numpy.concatenate(([scores.min() - 1e-6], numpy.unique(scores)))
    points: list[CurvePoint] = []

    threshold: float
    for threshold in thresholds.tolist():
        confusion: Confusion = Confusion.from_predictions(scores > threshold, labels)
        points.append(CurvePoint(threshold=threshold, precision=confusion.precision, recall=confusion.recall))

    return tuple(points)


def score_predictions(predictions: Sequence[float], labels: Sequence[int], blocks: Sequence[Block | None] | None = None, threshold: float = DECISION_THRESHOLD) -> EvalReport:
    """
        Scores connection probabilities against 0/1 labels: a pair counts as
        predicted connected when its probability is strictly above the
        threshold.
    """

    scores = numpy.asarray(predictions, dtype=numpy.float64)
    truth = numpy.asarray(labels, dtype=numpy.int64)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValueError("Predictions & labels must be equal-length lists.")
    if not len(scores):
        raise ValueError("Cannot score an empty prediction list.")
    if not numpy.all(numpy.isin(truth, (0, 1))):
        raise ValueError("Labels must be 0 or 1.")

    predicted: numpy.ndarray = scores > threshold
    per_block: dict[Block, Confusion] | None = None

    if blocks is not None:
        if len(blocks) != len(scores):
            raise ValueError("Every prediction needs its block.")

        per_block = {}
        block: Block
        for block in sorted({block for block in blocks if block is not None}):
            members: numpy.ndarray = numpy.array([candidate == block for candidate in blocks])
            per_block[block] = Confusion.from_predictions(predicted[members], truth[members])

    return EvalReport(confusion=Confusion.from_predictions(predicted, truth), curve=pr_curve(scores, truth), blocks=per_block)


def sample_eval_pairs(pairs: Iterable[CandidatePair], seed: int = 0) -> list[CandidatePair]:
    """
        Returns every positive pair followed by one negative drawn at random
        from the negatives sharing its query segment & truncation point, so
        the evaluation set is balanced 1:1. Positives without a negative are
        kept alone.
    """

    positives: list[CandidatePair] = []
    negatives: dict[tuple[int, tuple[float, float, float]], list[CandidatePair]] = {}

    pair: CandidatePair
    for pair in pairs:
        if pair.label == 1:
            positives.append(pair)
        else:
            negatives.setdefault((pair.seg_a, tuple(pair.truncation)), []).append(pair)

    sampled: list[CandidatePair] = []
    lonely: int = 0

    index: int
    for index, pair in enumerate(positives):
        sampled.append(pair)
        options: list[CandidatePair] = negatives.get((pair.seg_a, tuple(pair.truncation)), [])
        if not options:
            lonely += 1
            continue

        sampled.append(options[int(numpy.random.default_rng([seed, index]).integers(len(options)))])

    if lonely:
        logging.warning(f"{lonely} of {len(positives)} positive pairs have no negative to balance them.")

    return sampled


def agglomerate(segments: Iterable[int], scored_pairs: Iterable[tuple[int, int, float]], threshold: float = 0.98) -> dict[int, int]:
    """
        Merges every pair scored strictly above the threshold (transitively)
        & returns the cluster of every segment, named by its smallest
        segment id. Segments only seen in pairs join the universe.
    """

    edges: list[tuple[int, int, float]] = [(int(seg_a), int(seg_b), float(probability)) for seg_a, seg_b, probability in scored_pairs]
    universe: set[int] = {int(segment_id) for segment_id in segments}
    universe.update(segment_id for seg_a, seg_b, _ in edges for segment_id in (seg_a, seg_b))

    union_find = UnionFind(sorted(universe))
    merged: int = 0

    seg_a: int
    seg_b: int
    probability: float
    for seg_a, seg_b, probability in edges:
        if probability > threshold:
            union_find.union(seg_a, seg_b)
            merged += 1

    clusters: dict[int, int] = {}

    members: set[int]
    for members in union_find.to_sets():
        representative: int = min(members)
        clusters.update({segment_id: representative for segment_id in members})

    logging.info(f"Agglomerated {len(universe)} segments into {len(set(clusters.values()))} clusters from {merged} pairs above {threshold}.")

    return clusters


@dataclass(frozen=True)
class SkeletonRun:
    """ Run-length summary of one ground-truth skeleton. """

    skeleton_index: int
    cable_length_nm: float
    erl_nm: float
    merged_nodes: int
    background_nodes: int


def node_weights(skeleton: Skeleton) -> dict[int, float]:
    """ Returns half the summed length of every node's incident edges. """

    weights: dict[int, float] = {node_id: 0.0 for node_id in skeleton.ids.tolist()}

    parent_id: int
    child_id: int
    for parent_id, child_id in skeleton.edges():
        half: float = skeleton.edge_length(parent_id, child_id) / 2
        weights[parent_id] += half
        weights[child_id] += half

    return weights


def _node_clusters(skeletons: Sequence[Skeleton], node_segments: Sequence[Mapping[int, int]], clusters: Mapping[int, int]) -> list[dict[int, int]]:
    if len(node_segments) != len(skeletons):
        raise ValueError("Every skeleton needs its node to segment map.")

    labelled: list[dict[int, int]] = []

    skeleton: Skeleton
    mapping: Mapping[int, int]
    for skeleton, mapping in zip(skeletons, node_segments):
        node_cluster: dict[int, int] = {}

        node_id: int
        for node_id in skeleton.ids.tolist():
            if node_id not in mapping:
                raise UnmappedNodeError(node_id=node_id)

            segment_id: int = mapping[node_id]
            node_cluster[node_id] = UNASSIGNED if segment_id == UNASSIGNED else clusters.get(segment_id, segment_id)

        labelled.append(node_cluster)

    return labelled


def skeleton_run_lengths(skeletons: Sequence[Skeleton], node_segments: Sequence[Mapping[int, int]], clusters: Mapping[int, int]) -> list[SkeletonRun]:
    """
        Returns the per-skeleton run-length table. A node's run is the summed
        node weight of the connected part of its skeleton whose nodes share
        its cluster (an edge between two clusters is shared half & half by
        the runs it separates). Background nodes & nodes of clusters that
        hold nodes of two or more skeletons run 0.

        A run is therefore not the path length inside the component: it also
        counts half of every edge leaving it. The two halves of a chain cut
        at its midpoint each run half the chain's cable, so the split
        skeleton scores exactly half the unsplit expected run length.
    """

    labelled: list[dict[int, int]] = _node_clusters(skeletons, node_segments, clusters)

    owners: dict[int, set[int]] = {}

    index: int
    node_cluster: dict[int, int]
    for index, node_cluster in enumerate(labelled):
        for cluster in node_cluster.values():
            if cluster != UNASSIGNED:
                owners.setdefault(cluster, set()).add(index)

    merged_wrong: set[int] = {cluster for cluster, skeleton_indices in owners.items() if len(skeleton_indices) > 1}
    table: list[SkeletonRun] = []

    skeleton: Skeleton
    for index, (skeleton, node_cluster) in enumerate(zip(skeletons, labelled)):
        weights: dict[int, float] = node_weights(skeleton)
        graph: networkx.Graph = skeleton.to_graph()
        graph.remove_edges_from([(u, v) for u, v in graph.edges() if node_cluster[u] != node_cluster[v]])

        weighted_runs: float = 0.0
        total_weight: float = sum(weights.values())

        component: set[int]
        for component in networkx.connected_components(graph):
            cluster: int = node_cluster[next(iter(component))]
            if cluster == UNASSIGNED or cluster in merged_wrong:
                continue

            run: float = sum(weights[node_id] for node_id in component)
            weighted_runs += run * run

        table.append(SkeletonRun(
            skeleton_index=index,
            cable_length_nm=total_weight,
            erl_nm=weighted_runs / total_weight if total_weight > 0 else 0.0,
            merged_nodes=sum(cluster in merged_wrong for cluster in node_cluster.values()),
            background_nodes=sum(cluster == UNASSIGNED for cluster in node_cluster.values())
        ))

    return table


def expected_run_length(skeletons: Sequence[Skeleton], node_segments: Sequence[Mapping[int, int]], clusters: Mapping[int, int]) -> float:
    """
        Returns the expected run length in nanometers: the node-weighted mean
        node run over every skeleton, nodes weighted by half their incident
        edge lengths.
    """

    return table_erl(skeleton_run_lengths(skeletons, node_segments, clusters))


def table_erl(table: Sequence[SkeletonRun]) -> float:
    """ Combines per-skeleton run lengths into one ERL, weighting skeletons by cable length. """

    total_weight = float(sum(row.cable_length_nm for row in table))
    if total_weight <= 0:
        return 0.0

    return float(sum(row.erl_nm * row.cable_length_nm for row in table) / total_weight)
