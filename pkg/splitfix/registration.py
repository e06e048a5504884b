"""
    Segment to neuron-skeleton registration in splitfix app: node assignment,
    chamfer filtering, bridging edges, candidate pair sampling, spatial block
    partitioning & the pair list file format.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy

from core.utils import atomic_write, provenance_line
from splitfix.exceptions import PairFileFormatError
from splitfix.geometry import Skeleton, densify, directed_chamfer
from splitfix.volumes.types import LabeledVolume

UNASSIGNED = 0
""" Segment id given to skeleton nodes that could not be assigned. """

PAIR_FILE_COLUMNS = "seg_a seg_b cx cy cz label block_x block_y block_z"

Seed = int | Sequence[int]


@dataclass(frozen=True)
class RegistrationConfig:
    search_radius_voxels: int = 20
    include_slice_centroids: bool = True
    chamfer_densify_nm: float = 0.0
    shift_sigma_nm: float = 200.0
    cube_nm: tuple[float, float, float] = (2560.0, 2560.0, 2560.0)
    negatives_per_positive: int = 20
    block_size_nm: tuple[float, float, float] = (26000.0, 26000.0, 1000.0)
    min_pairs: int = 350
    train_fraction: float = 0.25


@dataclass(frozen=True)
class BridgingEdge:
    """
        Skeleton edge whose two end nodes were assigned to different segments.
        node_i is the parent end & seg_a its segment.
    """

    node_i: int
    node_j: int
    seg_a: int
    seg_b: int
    midpoint: tuple[float, float, float]
    truncation: tuple[float, float, float]


@dataclass(frozen=True)
class CandidatePair:
    """
        Labelled segment pair (1 = connect, 0 = split) centered at its
        truncation point, with the spatial block it was bucketed into.
    """

    seg_a: int
    seg_b: int
    truncation: tuple[float, float, float]
    label: int
    block: tuple[int, int, int] | None = None

    def __post_init__(self) -> None:
        if self.seg_a == self.seg_b:
            raise ValueError("A candidate pair must join two different segments.")
        if self.label not in (0, 1):
            raise ValueError("Candidate pair label must be 0 or 1.")

    @property
    def key(self) -> frozenset[int]:
        return frozenset((self.seg_a, self.seg_b))


def segment_neuron_map(volume: LabeledVolume) -> dict[int, int]:
    """
        Returns the ground-truth neuron id of every nonzero segment, taken as
        the neuron that most of the segment's voxels belong to.
    """

    labelled: numpy.ndarray = volume.segment_ids > 0
    segments: numpy.ndarray = volume.segment_ids[labelled].astype(numpy.int64)
    neurons: numpy.ndarray = volume.neuron_ids[labelled].astype(numpy.int64)
    if not len(segments):
        return {}

    combinations, counts = numpy.unique(numpy.stack((segments, neurons), axis=1), axis=0, return_counts=True)

    best_counts: dict[int, int] = {}
    mapping: dict[int, int] = {}
    spanning: set[int] = set()

    segment_id: int
    neuron_id: int
    count: int
    for (segment_id, neuron_id), count in zip(combinations.tolist(), counts.tolist()):
        if segment_id in mapping:
            spanning.add(segment_id)
        if count > best_counts.get(segment_id, 0):
            best_counts[segment_id] = count
            mapping[segment_id] = neuron_id

    if spanning:
        logging.warning(f"{len(spanning)} segments touch more than one neuron id; each was mapped to its majority neuron.")

    return mapping


def assign_nodes(skeleton: Skeleton, volume: LabeledVolume, search_radius_voxels: int = 20) -> dict[int, int]:
    """
        Returns the segment id of every skeleton node: the segment of the
        voxel containing the node or, when that voxel is background, of the
        nearest nonzero voxel within search_radius_voxels * voxel_size_x
        nanometers (equal distances pick the lower segment id). Nodes outside
        the volume or with no segment in reach map to UNASSIGNED.
    """

    search_radius_nm: float = search_radius_voxels * float(volume.voxel_size[0])
    reach: numpy.ndarray = numpy.ceil(search_radius_nm / volume.voxel_size[::-1]).astype(numpy.int64)
    shape = numpy.array(volume.segment_ids.shape)
    voxels: numpy.ndarray = volume.nm_to_voxel(skeleton.positions)
    inside: numpy.ndarray = volume.contains_voxel(voxels)

    assignment: dict[int, int] = {}

    row: int
    node_id: int
    for row, node_id in enumerate(skeleton.ids.tolist()):
        if not inside[row]:
            assignment[node_id] = UNASSIGNED
            continue

        z, y, x = voxels[row]
        segment_id = int(volume.segment_ids[z, y, x])
        if segment_id != UNASSIGNED:
            assignment[node_id] = segment_id
            continue

        low: numpy.ndarray = numpy.maximum(voxels[row] - reach, 0)
        high: numpy.ndarray = numpy.minimum(voxels[row] + reach + 1, shape)
        window: numpy.ndarray = volume.segment_ids[low[0]:high[0], low[1]:high[1], low[2]:high[2]]
        candidates: numpy.ndarray = numpy.argwhere(window > 0)
        if not len(candidates):
            assignment[node_id] = UNASSIGNED
            continue

        candidate_segments: numpy.ndarray = window[tuple(candidates.T)].astype(numpy.int64)
        distances: numpy.ndarray = numpy.linalg.norm(volume.voxel_to_nm(candidates + low) - skeleton.positions[row], axis=1)
        within: numpy.ndarray = distances <= search_radius_nm
        if not numpy.any(within):
            assignment[node_id] = UNASSIGNED
            continue

        nearest: int = numpy.lexsort((candidate_segments[within], distances[within]))[0]
        assignment[node_id] = int(candidate_segments[within][nearest])

    return assignment


def segment_slice_centroids(volume: LabeledVolume, segment_ids: Iterable[int]) -> dict[int, numpy.ndarray]:
    """
        Returns, for each requested segment, the (x, y, z) nanometer centroid
        of its voxels in every slice it appears in.
    """

    wanted: numpy.ndarray = numpy.unique(numpy.fromiter(segment_ids, dtype=numpy.int64))
    wanted = wanted[wanted > 0]
    if not len(wanted):
        return {}

    z, y, x = numpy.nonzero(numpy.isin(volume.segment_ids, wanted))
    segments: numpy.ndarray = volume.segment_ids[z, y, x].astype(numpy.int64)
    depth: int = volume.segment_ids.shape[0]

    keys, inverse, counts = numpy.unique(segments * depth + z, return_inverse=True, return_counts=True)
    mean_indices: numpy.ndarray = numpy.stack([
        numpy.bincount(inverse, weights=axis_values, minlength=len(keys)) / counts
        for axis_values in (z, y, x)
    ], axis=1)
    centroids: numpy.ndarray = volume.voxel_to_nm(mean_indices)

    result: dict[int, list[numpy.ndarray]] = {}
    key: int
    for key, centroid in zip(keys.tolist(), centroids):
        result.setdefault(key // depth, []).append(centroid)

    return {segment_id: numpy.array(points) for segment_id, points in result.items()}


def filter_assignments(skeleton: Skeleton, assignment: Mapping[int, int], volume: LabeledVolume, include_slice_centroids: bool = True, densify_nm: float = 0.0) -> dict[int, int]:
    """
        Drops every segment whose own skeleton lies further from the neuron
        skeleton than twice the mean radius of the nodes assigned to it. The
        segment skeleton is the assigned node positions plus, when enabled,
        the segment's per-slice voxel centroids. Dropped nodes map to
        UNASSIGNED in the returned assignment.
    """

    members: dict[int, list[int]] = {}

    node_id: int
    segment_id: int
    for node_id, segment_id in assignment.items():
        if segment_id != UNASSIGNED:
            members.setdefault(segment_id, []).append(node_id)

    target: numpy.ndarray = densify(skeleton, densify_nm)
    centroids: dict[int, numpy.ndarray] = segment_slice_centroids(volume, members) if include_slice_centroids else {}

    dropped: set[int] = set()
    for segment_id, node_ids in members.items():
        rows: list[int] = [skeleton.row(node_id) for node_id in node_ids]
        mean_radius = float(numpy.mean(skeleton.radii[rows]))

        segment_points: numpy.ndarray = skeleton.positions[rows]
        if segment_id in centroids:
            segment_points = numpy.concatenate((segment_points, centroids[segment_id]))

        if directed_chamfer(segment_points, target) > 2 * mean_radius:
            dropped.add(segment_id)

    if dropped:
        logging.warning(f"Dropped {len(dropped)} segments registered too far from their neuron skeleton: {sorted(dropped)}.")

    return {node_id: UNASSIGNED if segment_id in dropped else segment_id for node_id, segment_id in assignment.items()}


def extract_bridging_edges(skeleton: Skeleton, assignment: Mapping[int, int], shift_sigma: float, seed: Seed, volume: LabeledVolume | None = None) -> list[BridgingEdge]:
    """
        Returns one BridgingEdge per skeleton edge whose end nodes are assigned
        to different segments, in child id order. Edges with an unassigned end
        are skipped. The truncation point is the edge midpoint plus an
        isotropic Gaussian shift of scale shift_sigma, clamped into the volume
        bounds when a volume is given.
    """

    rng = numpy.random.default_rng(seed)
    edges: list[BridgingEdge] = []
    skipped: int = 0

    parent_id: int
    child_id: int
    for parent_id, child_id in skeleton.edges():
        seg_a: int = assignment.get(parent_id, UNASSIGNED)
        seg_b: int = assignment.get(child_id, UNASSIGNED)
        if seg_a == UNASSIGNED or seg_b == UNASSIGNED:
            skipped += seg_a != seg_b
            continue
        if seg_a == seg_b:
            continue

        midpoint: numpy.ndarray = (skeleton.position(parent_id) + skeleton.position(child_id)) / 2
        truncation: numpy.ndarray = midpoint + rng.normal(0.0, shift_sigma, 3)
        if volume is not None:
            truncation = volume.clamp_nm(truncation)

        edges.append(BridgingEdge(
            node_i=parent_id,
            node_j=child_id,
            seg_a=int(seg_a),
            seg_b=int(seg_b),
            midpoint=tuple(midpoint.tolist()),
            truncation=tuple(truncation.tolist())
        ))

    if skipped:
        logging.debug(f"Skipped {skipped} skeleton edges with exactly one unassigned end node.")

    return edges


def register_skeleton(skeleton: Skeleton, volume: LabeledVolume, config: RegistrationConfig, seed: Seed) -> tuple[dict[int, int], list[BridgingEdge]]:
    """
        Runs node assignment, chamfer filtering & bridging edge extraction for
        one neuron skeleton, returning the filtered assignment & the edges.
    """

    assignment: dict[int, int] = assign_nodes(skeleton, volume, config.search_radius_voxels)
    assignment = filter_assignments(skeleton, assignment, volume, config.include_slice_centroids, config.chamfer_densify_nm)

    return assignment, extract_bridging_edges(skeleton, assignment, config.shift_sigma_nm, seed, volume)


def sample_pairs(edges: Sequence[BridgingEdge], volume: LabeledVolume, cube_nm=(2560.0, 2560.0, 2560.0), negatives_per_positive: int = 20, seed: int = 0, segment_to_neuron: Mapping[int, int] | None = None) -> list[CandidatePair]:
    """
        Returns, per bridging edge, its positive pair followed by up to
        negatives_per_positive negatives (S_a, S_c). Negatives are drawn
        without replacement from the segments present in the cube centered at
        the truncation point, excluding S_b & every segment of S_a's neuron.
        Each edge draws from its own generator seeded by (seed, edge index).
    """

    segment_to_neuron = segment_neuron_map(volume) if segment_to_neuron is None else segment_to_neuron
    pairs: list[CandidatePair] = []

    edge_index: int
    edge: BridgingEdge
    for edge_index, edge in enumerate(edges):
        pairs.append(CandidatePair(seg_a=edge.seg_a, seg_b=edge.seg_b, truncation=edge.truncation, label=1))

        neuron_a: int | None = segment_to_neuron.get(edge.seg_a)
        present: numpy.ndarray = numpy.unique(volume.segment_ids[volume.crop_slices(edge.truncation, cube_nm)])
        eligible: list[int] = [
            segment_id
            for segment_id in present.tolist()
            if segment_id not in (UNASSIGNED, edge.seg_a, edge.seg_b) and segment_to_neuron.get(segment_id) != neuron_a
        ]
        if not eligible or negatives_per_positive < 1:
            continue

        rng = numpy.random.default_rng([seed, edge_index])
        chosen: numpy.ndarray = rng.choice(numpy.array(eligible), size=min(negatives_per_positive, len(eligible)), replace=False)

        negative_id: int
        for negative_id in chosen.tolist():
            pairs.append(CandidatePair(seg_a=edge.seg_a, seg_b=int(negative_id), truncation=edge.truncation, label=0))

    return pairs


def block_of(truncation, block_size_nm) -> tuple[int, int, int]:
    """ Returns the block id (floor of position over block size) of a point. """

    indices: numpy.ndarray = numpy.floor(numpy.asarray(truncation, dtype=numpy.float64) / numpy.asarray(block_size_nm, dtype=numpy.float64))

    return int(indices[0]), int(indices[1]), int(indices[2])


def partition_blocks(pairs: Iterable[CandidatePair], block_size=(26000.0, 26000.0, 1000.0), min_pairs: int = 350) -> dict[tuple[int, int, int], list[CandidatePair]]:
    """
        Buckets pairs by the block containing their truncation point & keeps
        only the blocks holding at least min_pairs positive pairs. Returned
        pairs carry their block id.
    """

    buckets: dict[tuple[int, int, int], list[CandidatePair]] = {}

    pair: CandidatePair
    for pair in pairs:
        block: tuple[int, int, int] = block_of(pair.truncation, block_size)
        buckets.setdefault(block, []).append(replace(pair, block=block))

    retained: dict[tuple[int, int, int], list[CandidatePair]] = {
        block: block_pairs
        for block, block_pairs in sorted(buckets.items())
        if sum(pair.label for pair in block_pairs) >= min_pairs
    }

    if len(retained) < len(buckets):
        logging.warning(f"Excluded {len(buckets) - len(retained)} of {len(buckets)} blocks holding fewer than {min_pairs} positive pairs.")

    return retained


def split_blocks(blocks: Iterable[tuple[int, int, int]], train_fraction: float, seed: Seed) -> tuple[list[tuple[int, int, int]], list[tuple[int, int, int]]]:
    """
        Randomly selects train_fraction of the blocks for training & returns
        (train blocks, test blocks), each sorted. At least one block goes to
        each side when two or more blocks exist.
    """

    ordered: list[tuple[int, int, int]] = sorted(blocks)
    if len(ordered) < 2:
        return ordered, []

    train_count: int = min(max(int(round(train_fraction * len(ordered))), 1), len(ordered) - 1)
    permutation: numpy.ndarray = numpy.random.default_rng(seed).permutation(len(ordered))

    train: list[tuple[int, int, int]] = sorted(ordered[index] for index in permutation[:train_count].tolist())
    test: list[tuple[int, int, int]] = sorted(ordered[index] for index in permutation[train_count:].tolist())

    return train, test


def build_pairs(volume: LabeledVolume, skeletons: Sequence[Skeleton], config: RegistrationConfig, seed: int, workers: int = 1) -> tuple[list[BridgingEdge], list[CandidatePair]]:
    """
        Registers every neuron skeleton (in parallel over neurons) & samples
        candidate pairs from all the resulting bridging edges.
    """

    def _register(indexed: tuple[int, Skeleton]) -> list[BridgingEdge]:
        neuron_index, skeleton = indexed
        return register_skeleton(skeleton, volume, config, seed=[seed, neuron_index])[1]

    with ThreadPoolExecutor(max_workers=workers) as executor:
        per_neuron: list[list[BridgingEdge]] = list(executor.map(_register, enumerate(skeletons)))

    edges: list[BridgingEdge] = [edge for neuron_edges in per_neuron for edge in neuron_edges]
    pairs: list[CandidatePair] = sample_pairs(edges, volume, config.cube_nm, config.negatives_per_positive, seed)

    logging.info(f"Registered {len(skeletons)} skeletons: {len(edges)} bridging edges & {len(pairs)} candidate pairs.")

    return edges, pairs


def write_pairs(path: Path, pairs: Iterable[CandidatePair], config_digest: str) -> None:
    """
        Writes a pair list file: provenance & column header comment lines, then
        one "seg_a seg_b cx cy cz label block_x block_y block_z" record per
        pair with coordinates in fixed 3-decimal nanometers.
    """

    lines: list[str] = [provenance_line(config_digest), f"# {PAIR_FILE_COLUMNS}"]

    pair: CandidatePair
    for pair in pairs:
        if pair.block is None:
            raise ValueError("Pairs must be assigned to a block before they are written.")

        cx, cy, cz = pair.truncation
        block_x, block_y, block_z = pair.block
        lines.append(f"{pair.seg_a} {pair.seg_b} {cx:.3f} {cy:.3f} {cz:.3f} {pair.label} {block_x} {block_y} {block_z}")

    text: str = "\n".join(lines) + "\n"

    def _write(file: IO[bytes]) -> None:
        file.write(text.encode("utf-8"))

    atomic_write(path, _write)


def read_pairs(path: Path) -> list[CandidatePair]:
    """ Reads a pair list file written by write_pairs(). """

    pairs: list[CandidatePair] = []

    line_number: int
    line: str
    for line_number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        content: str = line.split("#", 1)[0].strip()
        if not content:
            continue

        columns: list[str] = content.split()
        if len(columns) != 9:
            raise PairFileFormatError("Pair file records must have 9 columns.", line_number=line_number)

        try:
            pairs.append(CandidatePair(
                seg_a=int(columns[0]),
                seg_b=int(columns[1]),
                truncation=(float(columns[2]), float(columns[3]), float(columns[4])),
                label=int(columns[5]),
                block=(int(columns[6]), int(columns[7]), int(columns[8]))
            ))
        except ValueError as e:
            raise PairFileFormatError(f"Invalid pair record: {e}", line_number=line_number) from e

    return pairs
