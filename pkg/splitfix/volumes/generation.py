"""
    Synthetic ground-truth generation: random-walk neurons, tube voxelization
    with EM-like rendering, plane-cut over-segmentation & imaging artifacts.
"""

import dataclasses
import logging
from typing import Iterable, Mapping

import networkx
import numpy
from scipy import ndimage, spatial

from splitfix.exceptions import ArtifactRangeError, InfeasibleConfigError
from splitfix.geometry import ROOT_PARENT, Skeleton, cable_length
from splitfix.volumes.types import Artifact, LabeledVolume, OraclePair, SynthConfig

_RENDER_STREAM = 1  # NOTE: Sub-stream ids keep each generation stage on its own seeded generator
_CUT_STREAM = 2
_DEGRADE_STREAM = 3


def _random_unit_vector(rng: numpy.random.Generator, scale: numpy.ndarray | None = None) -> numpy.ndarray:
    vector: numpy.ndarray = rng.normal(size=3)
    if scale is not None:
        vector *= scale

    return vector / numpy.linalg.norm(vector)


def _walk(rng: numpy.random.Generator, start: numpy.ndarray, direction: numpy.ndarray, config: SynthConfig, low: numpy.ndarray, high: numpy.ndarray, max_nodes: int) -> list[numpy.ndarray]:
    """
        Returns the positions of a stiff random walk from start (exclusive)
        until it leaves the [low, high] box or reaches max_nodes positions.
    """

    positions: list[numpy.ndarray] = []
    position: numpy.ndarray = start
    while len(positions) < max_nodes:
        direction = config.stiffness * direction + (1 - config.stiffness) * _random_unit_vector(rng)
        direction /= numpy.linalg.norm(direction)
        position = position + config.node_spacing_nm * direction

        if numpy.any(position < low) or numpy.any(position > high):
            break

        positions.append(position)

    return positions


def _dense_centerline(positions: numpy.ndarray, step_nm: float) -> tuple[numpy.ndarray, numpy.ndarray]:
    """
        Returns points sampled along a polyline no further than step_nm apart,
        together with the arc length of every sampled point.
    """

    points: list[numpy.ndarray] = [positions[:1]]
    arcs: list[numpy.ndarray] = [numpy.zeros(1)]
    arc: float = 0.0

    index: int
    for index in range(1, len(positions)):
        start, end = positions[index - 1], positions[index]
        length = float(numpy.linalg.norm(end - start))
        count: int = max(1, int(numpy.ceil(length / step_nm)))
        fractions: numpy.ndarray = numpy.arange(1, count + 1) / count
        points.append(start + fractions[:, None] * (end - start))
        arcs.append(arc + fractions * length)
        arc += length

    return numpy.concatenate(points), numpy.concatenate(arcs)


def _self_approaches(points: numpy.ndarray, arcs: numpy.ndarray, distance: float) -> bool:
    """
        Returns whether a centerline comes back within the given distance of
        itself at a point further along its arc than twice that distance.
    """

    pairs: numpy.ndarray = spatial.cKDTree(points).query_pairs(distance, output_type="ndarray")
    if not len(pairs):
        return False

    return bool(numpy.any(numpy.abs(arcs[pairs[:, 0]] - arcs[pairs[:, 1]]) > 2 * distance))


def generate_neurons(config: SynthConfig) -> list[Skeleton]:
    """
        Returns config.neuron_count unbranched smooth random-walk neurons that
        lie inside the volume & keep config.min_separation_nm of clearance
        between their tube surfaces. Node ids are unique across all returned
        skeletons & increase along each walk. Deterministic in config.seed.
    """

    rng = numpy.random.default_rng(config.seed)
    voxel_size = numpy.asarray(config.voxel_size, dtype=numpy.float64)
    extent: numpy.ndarray = (numpy.asarray(config.dims) - 1) * voxel_size
    max_radius: float = config.radius_range_nm[1] * 1.2
    margin: numpy.ndarray = max_radius + voxel_size

    low: numpy.ndarray = margin
    high: numpy.ndarray = extent - margin
    if numpy.any(high <= low):
        raise InfeasibleConfigError("Neuron radius is larger than the volume can hold.", field_name="radius_range_nm")

    if config.neuron_count == 0:
        return []

    step_nm: float = float(voxel_size.min()) / 2
    placed_points: list[numpy.ndarray] = []
    placed_radii: list[numpy.ndarray] = []
    skeletons: list[Skeleton] = []
    next_id: int = 1

    neuron_index: int
    for neuron_index in range(config.neuron_count):
        for _ in range(config.placement_attempts):
            start: numpy.ndarray = rng.uniform(low, high)
            direction: numpy.ndarray = _random_unit_vector(rng, scale=high - low)
            half_nodes: int = max(1, config.max_nodes_per_neuron // 2)

            backward: list[numpy.ndarray] = _walk(rng, start, -direction, config, low, high, half_nodes)
            forward: list[numpy.ndarray] = _walk(rng, start, direction, config, low, high, half_nodes)
            positions = numpy.array(backward[::-1] + [start] + forward)
            if len(positions) < 2:
                continue

            base_radius: float = rng.uniform(*config.radius_range_nm)
            jitter: numpy.ndarray = ndimage.uniform_filter1d(rng.normal(0.0, 0.1, len(positions)), size=5, mode="nearest")
            radii: numpy.ndarray = base_radius * numpy.clip(1 + jitter, 0.85, 1.15)

            points, arcs = _dense_centerline(positions, step_nm)
            clearance: float = 2 * float(radii.max()) + config.min_separation_nm
            if _self_approaches(points, arcs, clearance):
                continue

            if placed_points:
                existing_points: numpy.ndarray = numpy.concatenate(placed_points)
                existing_radii: numpy.ndarray = numpy.concatenate(placed_radii)
                distances, nearest = spatial.cKDTree(existing_points).query(points, k=1)
                if numpy.any(distances <= float(radii.max()) + existing_radii[nearest] + config.min_separation_nm):
                    continue

            break
        else:
            raise InfeasibleConfigError(f"Could not place neuron {neuron_index + 1} without touching another neuron.", field_name="neuron_count")

        node_count: int = len(positions)
        ids: numpy.ndarray = numpy.arange(next_id, next_id + node_count)
        parents: numpy.ndarray = numpy.concatenate(([ROOT_PARENT], ids[:-1]))
        next_id += node_count

        skeletons.append(Skeleton(ids=ids, positions=positions, radii=radii, parents=parents))
        placed_points.append(points)
        placed_radii.append(numpy.full(len(points), radii.max()))

    logging.info(f"Generated {len(skeletons)} neurons with {next_id - 1} skeleton nodes in total.")

    return skeletons


def _axis_range(low: float, high: float, origin: float, spacing: float, count: int) -> tuple[int, int]:
    start = int(numpy.ceil((low - origin) / spacing))
    stop = int(numpy.floor((high - origin) / spacing)) + 1

    return max(start, 0), min(stop, count)


def rasterize_neurons(neurons: list[Skeleton], dims: tuple[int, int, int], voxel_size, origin=(0.0, 0.0, 0.0)) -> numpy.ndarray:
    """
        Returns the (z, y, x) neuron id grid of the given neurons (neuron ids
        are list position + 1). A voxel belongs to the nearest centerline whose
        interpolated radius covers it; equal distances keep the lower id.
    """

    voxel_size = numpy.asarray(voxel_size, dtype=numpy.float64)
    origin = numpy.asarray(origin, dtype=numpy.float64)
    width, height, depth = (int(size) for size in dims)

    neuron_ids = numpy.zeros((depth, height, width), dtype=numpy.uint32)
    best = numpy.full((depth, height, width), numpy.inf)
    axes: list[numpy.ndarray] = [origin[axis] + numpy.arange(count) * voxel_size[axis] for axis, count in enumerate((width, height, depth))]

    neuron_id: int
    neuron: Skeleton
    for neuron_id, neuron in enumerate(neurons, start=1):
        segments: list[tuple[int, int]] = neuron.edges() or [(int(node_id), int(node_id)) for node_id in neuron.ids]

        parent_id: int
        child_id: int
        for parent_id, child_id in segments:
            start, end = neuron.position(parent_id), neuron.position(child_id)
            start_radius, end_radius = neuron.radius(parent_id), neuron.radius(child_id)
            reach: float = max(start_radius, end_radius)

            bounds = [
                _axis_range(min(start[axis], end[axis]) - reach, max(start[axis], end[axis]) + reach, origin[axis], voxel_size[axis], count)
                for axis, count in enumerate((width, height, depth))
            ]
            if any(stop <= begin for begin, stop in bounds):
                continue

            (x0, x1), (y0, y1), (z0, z1) = bounds
            dx: numpy.ndarray = axes[0][x0:x1][None, None, :] - start[0]
            dy: numpy.ndarray = axes[1][y0:y1][None, :, None] - start[1]
            dz: numpy.ndarray = axes[2][z0:z1][:, None, None] - start[2]
            edge: numpy.ndarray = end - start
            edge_squared = float(edge @ edge)

            if edge_squared > 0:
                t = numpy.clip((dx * edge[0] + dy * edge[1] + dz * edge[2]) / edge_squared, 0.0, 1.0)
            else:
                t = numpy.zeros((z1 - z0, y1 - y0, x1 - x0))

            distance = numpy.sqrt((dx - t * edge[0]) ** 2 + (dy - t * edge[1]) ** 2 + (dz - t * edge[2]) ** 2)
            radius = start_radius + t * (end_radius - start_radius)

            box = (slice(z0, z1), slice(y0, y1), slice(x0, x1))
            closer: numpy.ndarray = (distance <= radius) & (distance < best[box])
            best[box] = numpy.where(closer, distance, best[box])
            neuron_ids[box] = numpy.where(closer, neuron_id, neuron_ids[box])

    return neuron_ids


def render_image(neuron_ids: numpy.ndarray, config: SynthConfig, rng: numpy.random.Generator) -> numpy.ndarray:
    """
        Returns an EM-like image for the given label grid: dark membranes where
        a labelled voxel touches a different label in its slice, a noisy
        mid-gray interior with per-neuron brightness & a noisy light
        background, all clipped to [0, 1].
    """

    label_count: int = int(neuron_ids.max()) + 1
    brightness: numpy.ndarray = config.interior_intensity + rng.uniform(-1.0, 1.0, label_count) * config.neuron_intensity_jitter
    brightness[0] = config.background_intensity

    image: numpy.ndarray = brightness[neuron_ids]

    footprint = (1, 3, 3)
    boundary: numpy.ndarray = (
        (ndimage.maximum_filter(neuron_ids, size=footprint, mode="nearest") != neuron_ids)
        | (ndimage.minimum_filter(neuron_ids, size=footprint, mode="nearest") != neuron_ids)
    ) & (neuron_ids > 0)
    image[boundary] = config.membrane_intensity

    image = image + rng.normal(0.0, config.noise_sigma, neuron_ids.shape)

    return numpy.clip(image, 0.0, 1.0).astype(numpy.float32)


def voxelize(neurons: list[Skeleton], dims: tuple[int, int, int], voxel_size, origin=(0.0, 0.0, 0.0), config: SynthConfig | None = None) -> LabeledVolume:
    """
        Returns a LabeledVolume with neuron_ids rasterized from the given tube
        skeletons & a rendered image. segment_ids is left all background until
        oversegment() fills it.
    """

    config = config or SynthConfig(dims=tuple(dims), voxel_size=tuple(voxel_size))

    neuron_ids: numpy.ndarray = rasterize_neurons(neurons, dims, voxel_size, origin)
    image: numpy.ndarray = render_image(neuron_ids, config, numpy.random.default_rng([config.seed, _RENDER_STREAM]))

    return LabeledVolume(
        image=image,
        segment_ids=numpy.zeros_like(neuron_ids),
        neuron_ids=neuron_ids,
        voxel_size=numpy.asarray(voxel_size, dtype=numpy.float64),
        origin=numpy.asarray(origin, dtype=numpy.float64)
    )


def _tree_arc_samples(neuron: Skeleton, step_nm: float) -> tuple[numpy.ndarray, numpy.ndarray]:
    """
        Returns points densely sampled along every edge of the neuron with
        their arc length measured from the neuron's root.
    """

    graph: networkx.Graph = neuron.to_graph()
    root: int = int(neuron.ids[neuron.parents == ROOT_PARENT][0])
    root_arc: dict[int, float] = networkx.single_source_dijkstra_path_length(graph, root, weight="length")

    points: list[numpy.ndarray] = [neuron.positions]
    arcs: list[numpy.ndarray] = [numpy.array([root_arc[int(node_id)] for node_id in neuron.ids])]

    parent_id: int
    child_id: int
    for parent_id, child_id in neuron.edges():
        start, end = neuron.position(parent_id), neuron.position(child_id)
        length: float = neuron.edge_length(parent_id, child_id)
        count = int(numpy.ceil(length / step_nm))
        if count > 1:
            fractions: numpy.ndarray = numpy.arange(1, count) / count
            points.append(start + fractions[:, None] * (end - start))
            arcs.append(root_arc[parent_id] + fractions * length)

    return numpy.concatenate(points), numpy.concatenate(arcs)


def _sample_cuts(rng: numpy.random.Generator, total_length: float, max_arc: float, config: SynthConfig) -> list[float]:
    """
        Returns sorted Poisson-sampled cut arc positions that keep at least
        config.min_cut_spacing_nm from each other & from both neuron ends.
    """

    cut_count: int = int(rng.poisson(config.cut_rate_per_um * total_length / 1000))
    spacing: float = config.min_cut_spacing_nm
    if cut_count == 0 or max_arc <= 2 * spacing:
        return []

    candidates: numpy.ndarray = numpy.sort(rng.uniform(spacing, max_arc - spacing, cut_count))

    cuts: list[float] = []
    candidate: float
    for candidate in candidates.tolist():
        if not cuts or candidate - cuts[-1] >= spacing:
            cuts.append(candidate)

    return cuts


def oversegment(volume: LabeledVolume, neurons: list[Skeleton], config: SynthConfig, cuts: Mapping[int, Iterable[float]] | None = None) -> tuple[LabeledVolume, list[OraclePair]]:
    """
        Splits every neuron's voxels into segments by cutting its centerline
        at Poisson-sampled arc positions (or at the explicit cuts given per
        neuron id). Each voxel joins the piece of the centerline point nearest
        to it, so cut surfaces are transverse to the local centerline.

        Returns the volume with segment_ids filled (ids numbered from 1 in
        neuron order) & the exhaustive list of positive pairs, one per cut.
    """

    rng = numpy.random.default_rng([config.seed, _CUT_STREAM])
    step_nm: float = float(volume.voxel_size.min()) / 2

    flat_neurons: numpy.ndarray = volume.neuron_ids.reshape(-1)
    order: numpy.ndarray = numpy.argsort(flat_neurons, kind="stable")
    sorted_neurons: numpy.ndarray = flat_neurons[order]

    segment_ids = numpy.zeros(flat_neurons.shape, dtype=numpy.uint32)
    pairs: list[OraclePair] = []
    next_segment_id: int = 1

    neuron_id: int
    neuron: Skeleton
    for neuron_id, neuron in enumerate(neurons, start=1):
        begin, end = numpy.searchsorted(sorted_neurons, [neuron_id, neuron_id + 1])
        voxel_indices: numpy.ndarray = order[begin:end]
        if not len(voxel_indices):
            logging.warning(f"Neuron {neuron_id} has no voxels inside the volume, so it has no segments.")
            continue

        points, arcs = _tree_arc_samples(neuron, step_nm)
        if cuts is not None:
            neuron_cuts: list[float] = sorted(float(cut) for cut in cuts.get(neuron_id, ()))
        else:
            neuron_cuts = _sample_cuts(rng, cable_length(neuron), float(arcs.max()), config)

        voxel_positions: numpy.ndarray = volume.voxel_to_nm(numpy.stack(numpy.unravel_index(voxel_indices, volume.neuron_ids.shape), axis=-1))
        _, nearest = spatial.cKDTree(points).query(voxel_positions, k=1)
        pieces: numpy.ndarray = numpy.searchsorted(numpy.asarray(neuron_cuts), arcs[nearest], side="right")

        occupied: numpy.ndarray = numpy.flatnonzero(numpy.bincount(pieces, minlength=len(neuron_cuts) + 1))
        if len(occupied) < len(neuron_cuts) + 1:
            logging.warning(f"Neuron {neuron_id} has {len(neuron_cuts) + 1 - len(occupied)} empty pieces, so their cuts were merged away.")

        piece_to_segment: numpy.ndarray = numpy.zeros(len(neuron_cuts) + 1, dtype=numpy.uint32)
        piece_to_segment[occupied] = numpy.arange(next_segment_id, next_segment_id + len(occupied))
        segment_ids[voxel_indices] = piece_to_segment[pieces]

        arc_order: numpy.ndarray = numpy.argsort(arcs, kind="stable")
        previous: int
        current: int
        for previous, current in zip(occupied[:-1].tolist(), occupied[1:].tolist()):
            cut_arc: float = neuron_cuts[current - 1]
            truncation = tuple(
                float(numpy.interp(cut_arc, arcs[arc_order], points[arc_order, axis]))
                for axis in range(3)
            )
            pairs.append(OraclePair(
                seg_a=int(piece_to_segment[previous]),
                seg_b=int(piece_to_segment[current]),
                truncation=truncation,
                neuron_id=neuron_id
            ))

        next_segment_id += len(occupied)

    logging.info(f"Over-segmented {len(neurons)} neurons into {next_segment_id - 1} segments with {len(pairs)} positive pairs.")

    return dataclasses.replace(volume, segment_ids=segment_ids.reshape(volume.neuron_ids.shape)), pairs


def _voxel_shift(artifact: Artifact, voxel_size: numpy.ndarray) -> tuple[int, int]:
    """ Returns the in-plane (x, y) voxel shift of a misalignment artifact. """

    return int(round(artifact.shift_nm[0] / voxel_size[0])), int(round(artifact.shift_nm[1] / voxel_size[1]))


def _translate_slices(grid: numpy.ndarray, shift_x: int, shift_y: int, fill: numpy.ndarray | float) -> numpy.ndarray:
    """
        Returns the (z, y, x) grid translated by (shift_x, shift_y) voxels in
        every slice. Voxels uncovered by the translation take the fill value.
    """

    _, height, width = grid.shape
    translated: numpy.ndarray = numpy.empty_like(grid)
    translated[...] = fill

    def _span(shift: int, size: int) -> tuple[slice, slice]:
        if shift >= 0:
            return slice(shift, size), slice(0, size - shift)
        return slice(0, size + shift), slice(-shift, size)

    (target_y, source_y), (target_x, source_x) = _span(shift_y, height), _span(shift_x, width)
    translated[:, target_y, target_x] = grid[:, source_y, source_x]

    return translated


def degrade(volume: LabeledVolume, artifacts: Iterable[Artifact], config: SynthConfig | None = None) -> LabeledVolume:
    """
        Returns a copy of the volume with serial-section artifacts applied in
        the given order. A missing section replaces its image slice with
        background noise & leaves labels untouched. A misalignment translates
        image & label slices at z >= z_index by the in-plane shift rounded to
        whole voxels; the uncovered strip becomes background.
    """

    config = config or SynthConfig()
    rng = numpy.random.default_rng([config.seed, _DEGRADE_STREAM])

    image: numpy.ndarray = volume.image.copy()
    segment_ids: numpy.ndarray = volume.segment_ids.copy()
    neuron_ids: numpy.ndarray = volume.neuron_ids.copy()
    depth, height, width = image.shape

    artifact: Artifact
    for artifact in artifacts:
        if not 0 <= artifact.z_index < depth:
            raise ArtifactRangeError(f"Artifact slice {artifact.z_index} is outside the volume depth {depth}.", artifact=artifact)

        if artifact.kind == "missing_section":
            noise: numpy.ndarray = config.background_intensity + rng.normal(0.0, config.noise_sigma, (height, width))
            image[artifact.z_index] = numpy.clip(noise, 0.0, 1.0)
            continue

        shift_x, shift_y = _voxel_shift(artifact, volume.voxel_size)
        if abs(shift_x) >= width or abs(shift_y) >= height:
            raise ArtifactRangeError("Misalignment shift is larger than the volume extent.", artifact=artifact)

        shifted = slice(artifact.z_index, depth)
        image[shifted] = _translate_slices(image[shifted], shift_x, shift_y, config.background_intensity)
        segment_ids[shifted] = _translate_slices(segment_ids[shifted], shift_x, shift_y, 0)
        neuron_ids[shifted] = _translate_slices(neuron_ids[shifted], shift_x, shift_y, 0)

    return dataclasses.replace(volume, image=image, segment_ids=segment_ids, neuron_ids=neuron_ids)


def shift_skeletons(skeletons: list[Skeleton], artifacts: Iterable[Artifact], voxel_size, origin=(0.0, 0.0, 0.0)) -> list[Skeleton]:
    """
        Returns the skeletons with every misalignment applied to the nodes
        lying in slices at or beyond its z_index, using the same whole-voxel
        shift degrade() applies to the grids.
    """

    voxel_size = numpy.asarray(voxel_size, dtype=numpy.float64)
    origin = numpy.asarray(origin, dtype=numpy.float64)
    misalignments: list[Artifact] = [artifact for artifact in artifacts if artifact.kind == "misalignment"]

    shifted: list[Skeleton] = []

    skeleton: Skeleton
    for skeleton in skeletons:
        offsets: numpy.ndarray = numpy.zeros_like(skeleton.positions)
        slices: numpy.ndarray = numpy.floor((skeleton.positions[:, 2] - origin[2]) / voxel_size[2] + 0.5)

        artifact: Artifact
        for artifact in misalignments:
            shift_x, shift_y = _voxel_shift(artifact, voxel_size)
            offsets[slices >= artifact.z_index] += (shift_x * voxel_size[0], shift_y * voxel_size[1], 0.0)

        shifted.append(skeleton.translated(offsets))

    return shifted


def generate_volume(config: SynthConfig) -> tuple[LabeledVolume, list[Skeleton], list[OraclePair]]:
    """
        Runs the whole generator: neurons, voxelization, over-segmentation &
        the configured artifacts. Returns the degraded volume, the ground-truth
        skeletons (shifted like the degraded grids) & the oracle pairs.
    """

    neurons: list[Skeleton] = generate_neurons(config)
    volume: LabeledVolume = voxelize(neurons, config.dims, config.voxel_size, config=config)
    volume, pairs = oversegment(volume, neurons, config)

    if config.artifacts:
        volume = degrade(volume, config.artifacts, config)
        neurons = shift_skeletons(neurons, config.artifacts, config.voxel_size)

    return volume, neurons, pairs
