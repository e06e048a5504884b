"""
    Skeleton data model, SWC parsing & geometric primitives in splitfix app.

    Positions & radii are always held in nanometers; SWC files are converted
    with an explicit unit scale when read or written.
"""

import io
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import networkx
import numpy
from scipy import spatial

from splitfix.exceptions import DisconnectedSubsetError, EmptyPointSetError, SwcFormatError

Point_Set = numpy.ndarray
""" (N, 3) float array of positions in nanometers. """

ROOT_PARENT = -1


def as_point_set(points, argument_name: str = "points") -> Point_Set:
    """
        Returns the given points as a non-empty (N, D) float64 array, raising
        EmptyPointSetError if there are no points.
    """

    point_set = numpy.asarray(points, dtype=numpy.float64)
    if point_set.ndim == 1 and point_set.size:
        point_set = point_set.reshape(1, -1)

    if point_set.ndim != 2 or point_set.shape[0] == 0:
        raise EmptyPointSetError(argument_name=argument_name)

    return point_set


@dataclass(frozen=True, eq=False)
class Skeleton:
    """
        Tree-structured node/edge graph with radii. Edges are implied by each
        node's parent link; a parent of ROOT_PARENT marks a root.
    """

    ids: numpy.ndarray
    positions: numpy.ndarray
    radii: numpy.ndarray
    parents: numpy.ndarray
    types: numpy.ndarray = None
    _index: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        ids = numpy.asarray(self.ids, dtype=numpy.int64).reshape(-1)
        positions = numpy.asarray(self.positions, dtype=numpy.float64).reshape(-1, 3)
        radii = numpy.asarray(self.radii, dtype=numpy.float64).reshape(-1)
        parents = numpy.asarray(self.parents, dtype=numpy.int64).reshape(-1)
        types = numpy.zeros_like(ids) if self.types is None else numpy.asarray(self.types, dtype=numpy.int64).reshape(-1)

        if not len(ids) == len(positions) == len(radii) == len(parents) == len(types):
            raise ValueError("Skeleton ids, positions, radii, parents & types must all have the same length.")

        array: numpy.ndarray
        for array in (ids, positions, radii, parents, types):
            array.setflags(write=False)

        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "_index", {int(node_id): row for row, node_id in enumerate(ids)})

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, node_id: int) -> bool:
        return int(node_id) in self._index

    def row(self, node_id: int) -> int:
        """ Returns the array row that holds the node with the given id. """

        return self._index[int(node_id)]

    def position(self, node_id: int) -> numpy.ndarray:
        return self.positions[self.row(node_id)]

    def radius(self, node_id: int) -> float:
        return float(self.radii[self.row(node_id)])

    def edges(self) -> list[tuple[int, int]]:
        """
            Returns every (parent id, child id) edge, ordered by child id.
        """

        return [
            (int(parent_id), int(node_id))
            for node_id, parent_id in sorted(zip(self.ids.tolist(), self.parents.tolist()))
            if parent_id != ROOT_PARENT
        ]

    def edge_length(self, node_a: int, node_b: int) -> float:
        return float(numpy.linalg.norm(self.position(node_a) - self.position(node_b)))

    def to_graph(self) -> networkx.Graph:
        """
            Returns the skeleton as an undirected networkx graph, with node
            attributes "position" & "radius" and edge attribute "length".
        """

        graph = networkx.Graph()

        node_id: int
        for node_id in sorted(self.ids.tolist()):
            graph.add_node(node_id, position=self.position(node_id), radius=self.radius(node_id))

        parent_id: int
        for parent_id, node_id in self.edges():
            graph.add_edge(parent_id, node_id, length=self.edge_length(parent_id, node_id))

        return graph

    def translated(self, offsets: numpy.ndarray) -> "Skeleton":
        """ Returns a copy of this skeleton with per-node offsets added. """

        return Skeleton(
            ids=self.ids.copy(),
            positions=self.positions + offsets,
            radii=self.radii.copy(),
            parents=self.parents.copy(),
            types=self.types.copy()
        )


def _find_cycle_node(parent_of: dict[int, int]) -> int | None:
    """
        Returns the id of a node lying on a parent-link cycle, or None when the
        parent links form a forest.
    """

    state: dict[int, int] = {}  # NOTE: 1 = on the current walk, 2 = known to reach a root

    start: int
    for start in parent_of:
        walk: list[int] = []
        node: int = start
        while node != ROOT_PARENT and state.get(node) is None:
            state[node] = 1
            walk.append(node)
            node = parent_of[node]

        if node != ROOT_PARENT and state.get(node) == 1:
            return node

        for visited in walk:
            state[visited] = 2

    return None


def parse_swc(text: str | TextIO | Iterable[str], unit_nm: float) -> Skeleton:
    """
        Parses SWC text (whitespace separated "id type x y z radius parent"
        lines with "#" comments) into a Skeleton, converting positions & radii
        to nanometers by multiplying them with unit_nm.
    """

    if not unit_nm > 0:
        raise ValueError("unit_nm must be greater than 0.")

    if isinstance(text, str):
        text = io.StringIO(text)

    ids: list[int] = []
    types: list[int] = []
    positions: list[tuple[float, float, float]] = []
    radii: list[float] = []
    parents: list[int] = []
    line_numbers: dict[int, int] = {}

    line_number: int
    line: str
    for line_number, line in enumerate(text, start=1):
        content: str = line.split("#", 1)[0].strip()
        if not content:
            continue

        columns: list[str] = content.split()
        if len(columns) != 7:
            raise SwcFormatError(f"Expected 7 columns but found {len(columns)}.", line_number=line_number)

        try:
            node_id = int(columns[0])
            node_type = int(columns[1])
            x, y, z, radius = (float(value) for value in columns[2:6])
            parent_id = int(columns[6])
        except ValueError as e:
            raise SwcFormatError("Malformed SWC line.", line_number=line_number) from e

        if node_id in line_numbers:
            raise SwcFormatError(f"Duplicate node id {node_id}.", line_number=line_number)
        if not numpy.all(numpy.isfinite((x, y, z, radius))):
            raise SwcFormatError("Node position & radius must be finite.", line_number=line_number)
        if radius < 0:
            raise SwcFormatError("Node radius must not be negative.", line_number=line_number)

        line_numbers[node_id] = line_number
        ids.append(node_id)
        types.append(node_type)
        positions.append((x * unit_nm, y * unit_nm, z * unit_nm))
        radii.append(radius * unit_nm)
        parents.append(ROOT_PARENT if parent_id < 0 else parent_id)

    node_id: int
    parent_id: int
    for node_id, parent_id in zip(ids, parents):
        if parent_id != ROOT_PARENT and parent_id not in line_numbers:
            raise SwcFormatError(f"Parent {parent_id} of node {node_id} does not exist.", line_number=line_numbers[node_id])

    cycle_node: int | None = _find_cycle_node(dict(zip(ids, parents)))
    if cycle_node is not None:
        raise SwcFormatError(f"Cycle detected through node {cycle_node}.", line_number=line_numbers[cycle_node])

    return Skeleton(
        ids=numpy.array(ids, dtype=numpy.int64),
        positions=numpy.array(positions, dtype=numpy.float64).reshape(-1, 3),
        radii=numpy.array(radii, dtype=numpy.float64),
        parents=numpy.array(parents, dtype=numpy.int64),
        types=numpy.array(types, dtype=numpy.int64)
    )


def serialize_swc(skeleton: Skeleton, unit_nm: float) -> str:
    """
        Returns the SWC text of the given skeleton, with nodes written in id
        order and nanometer values divided by unit_nm.
    """

    if not unit_nm > 0:
        raise ValueError("unit_nm must be greater than 0.")

    lines: list[str] = ["# id type x y z radius parent"]

    node_id: int
    for node_id in sorted(skeleton.ids.tolist()):
        row: int = skeleton.row(node_id)
        x, y, z = (format(float(value) / unit_nm, ".17g") for value in skeleton.positions[row])
        radius: str = format(float(skeleton.radii[row]) / unit_nm, ".17g")
        lines.append(f"{node_id} {int(skeleton.types[row])} {x} {y} {z} {radius} {int(skeleton.parents[row])}")

    return "\n".join(lines) + "\n"


def directed_chamfer(source: Point_Set, target: Point_Set) -> float:
    """
        Returns the mean, over source points, of the Euclidean distance to the
        nearest target point (source to target only).
    """

    source = as_point_set(source, "source")
    target = as_point_set(target, "target")

    distances, _ = spatial.cKDTree(target).query(source, k=1)

    return float(numpy.mean(distances))


def farthest_point_sample(points: Point_Set, m: int, seed: int = 0) -> numpy.ndarray:
    """
        Returns m indices chosen by farthest point sampling. The first index is
        0 when seed is 0, otherwise drawn from the seed; ties pick the lowest
        index. When m exceeds the point count, every index is returned followed
        by repetitions of the last chosen index.
    """

    points = as_point_set(points)
    if m < 1:
        raise ValueError("m must be at least 1.")

    point_count: int = points.shape[0]
    first: int = 0 if seed == 0 else int(numpy.random.default_rng(seed).integers(point_count))

    chosen: list[int] = [first]
    min_distances: numpy.ndarray = numpy.linalg.norm(points - points[first], axis=1)
    min_distances[first] = -numpy.inf

    while len(chosen) < min(m, point_count):
        next_index = int(numpy.argmax(min_distances))
        chosen.append(next_index)
        min_distances = numpy.minimum(min_distances, numpy.linalg.norm(points - points[next_index], axis=1))
        min_distances[chosen] = -numpy.inf

    if m > point_count:
        chosen.extend([chosen[-1]] * (m - point_count))

    return numpy.array(chosen, dtype=numpy.int64)


def path_length(skeleton: Skeleton, node_subset: Iterable[int]) -> float:
    """
        Returns the summed Euclidean length of the edges with both endpoints
        inside the given node subset, which must induce a connected subtree.
    """

    subset: set[int] = {int(node_id) for node_id in node_subset}

    node_id: int
    for node_id in subset:
        if node_id not in skeleton:
            raise KeyError(f"Node {node_id} is not part of the skeleton.")

    if not subset:
        return 0.0

    inner_edges: list[tuple[int, int]] = [
        (parent_id, child_id)
        for parent_id, child_id in skeleton.edges()
        if parent_id in subset and child_id in subset
    ]

    component_count: int = len(subset) - len(inner_edges)  # NOTE: Any induced sub-forest has exactly (nodes - edges) components
    if component_count != 1:
        raise DisconnectedSubsetError(component_count=component_count)

    return float(sum(skeleton.edge_length(parent_id, child_id) for parent_id, child_id in inner_edges))


def cable_length(skeleton: Skeleton) -> float:
    """ Returns the summed length of every edge of the skeleton. """

    return float(sum(skeleton.edge_length(parent_id, child_id) for parent_id, child_id in skeleton.edges()))


def densify(skeleton: Skeleton, step_nm: float) -> Point_Set:
    """
        Returns the skeleton node positions plus extra points placed along
        every edge no further than step_nm apart.
    """

    if not step_nm > 0:
        return skeleton.positions.copy()

    samples: list[numpy.ndarray] = [skeleton.positions]

    parent_id: int
    child_id: int
    for parent_id, child_id in skeleton.edges():
        start: numpy.ndarray = skeleton.position(parent_id)
        end: numpy.ndarray = skeleton.position(child_id)
        count = int(numpy.ceil(numpy.linalg.norm(end - start) / step_nm))
        if count > 1:
            fractions: numpy.ndarray = numpy.arange(1, count)[:, None] / count
            samples.append(start + fractions * (end - start))

    return numpy.concatenate(samples, axis=0)
