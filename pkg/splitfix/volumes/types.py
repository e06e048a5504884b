"""
    Volume & synthetic-generation data types in splitfix app.

    Grids are numpy arrays indexed [z, y, x] (x varies fastest in memory);
    sizes & physical vectors are written in (x, y, z) order.
"""

from dataclasses import dataclass, field

import numpy

DEFAULT_VOXEL_SIZE: tuple[float, float, float] = (16.0, 16.0, 40.0)

ARTIFACT_KINDS: tuple[str, str] = ("missing_section", "misalignment")


@dataclass(frozen=True)
class Artifact:
    """ One serial-section imaging artifact, starting at slice z_index. """

    kind: str
    z_index: int
    shift_nm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.kind not in ARTIFACT_KINDS:
            raise ValueError(f"Artifact kind must be one of {ARTIFACT_KINDS}.")


@dataclass(frozen=True)
class SynthConfig:
    """
        Configuration of the synthetic ground-truth generator. Intensities are
        in [0, 1]; lengths are in nanometers.
    """

    dims: tuple[int, int, int] = (128, 128, 48)
    voxel_size: tuple[float, float, float] = DEFAULT_VOXEL_SIZE
    neuron_count: int = 6
    stiffness: float = 0.85
    radius_range_nm: tuple[float, float] = (90.0, 150.0)
    cut_rate_per_um: float = 0.6
    min_cut_spacing_nm: float = 600.0
    node_spacing_nm: float = 80.0
    min_separation_nm: float = 48.0
    max_nodes_per_neuron: int = 4000
    placement_attempts: int = 200
    artifacts: tuple[Artifact, ...] = ()
    seed: int = 0
    background_intensity: float = 0.75
    interior_intensity: float = 0.5
    membrane_intensity: float = 0.15
    neuron_intensity_jitter: float = 0.08
    noise_sigma: float = 0.05

    def __post_init__(self) -> None:
        if not 0 < self.radius_range_nm[0] <= self.radius_range_nm[1]:
            raise ValueError("radius_range_nm must be positive & ordered (low, high).")
        if self.cut_rate_per_um < 0:
            raise ValueError("cut_rate_per_um must not be negative.")
        if not 0.0 <= self.stiffness < 1.0:
            raise ValueError("stiffness must be within [0, 1).")
        if self.neuron_count < 0:
            raise ValueError("neuron_count must not be negative.")


@dataclass
class LabeledVolume:
    """
        Dense image & label grids sharing one anisotropic voxel grid. Voxel
        (z, y, x) has its center at origin + (x, y, z) * voxel_size.
    """

    image: numpy.ndarray
    segment_ids: numpy.ndarray
    neuron_ids: numpy.ndarray
    voxel_size: numpy.ndarray = field(default_factory=lambda: numpy.array(DEFAULT_VOXEL_SIZE))
    origin: numpy.ndarray = field(default_factory=lambda: numpy.zeros(3))

    def __post_init__(self) -> None:
        self.image = numpy.asarray(self.image, dtype=numpy.float32)
        self.segment_ids = numpy.asarray(self.segment_ids, dtype=numpy.uint32)
        self.neuron_ids = numpy.asarray(self.neuron_ids, dtype=numpy.uint32)
        self.voxel_size = numpy.asarray(self.voxel_size, dtype=numpy.float64).reshape(3)
        self.origin = numpy.asarray(self.origin, dtype=numpy.float64).reshape(3)

        if not self.image.ndim == 3 or not self.image.shape == self.segment_ids.shape == self.neuron_ids.shape:
            raise ValueError("image, segment_ids & neuron_ids must be 3D grids with identical dims.")

    @classmethod
    def empty(cls, dims: tuple[int, int, int], voxel_size=DEFAULT_VOXEL_SIZE, origin=(0.0, 0.0, 0.0)) -> "LabeledVolume":
        """ Returns an all-background volume of the given (x, y, z) dims. """

        shape: tuple[int, int, int] = (int(dims[2]), int(dims[1]), int(dims[0]))

        return cls(
            image=numpy.zeros(shape, dtype=numpy.float32),
            segment_ids=numpy.zeros(shape, dtype=numpy.uint32),
            neuron_ids=numpy.zeros(shape, dtype=numpy.uint32),
            voxel_size=numpy.asarray(voxel_size, dtype=numpy.float64),
            origin=numpy.asarray(origin, dtype=numpy.float64)
        )

    @property
    def dims(self) -> tuple[int, int, int]:
        """ Grid size in voxels, in (W, H, D) = (x, y, z) order. """

        depth, height, width = self.image.shape

        return width, height, depth

    @property
    def upper_bound_nm(self) -> numpy.ndarray:
        """ Physical (x, y, z) position of the last voxel center. """

        return self.origin + (numpy.array(self.dims) - 1) * self.voxel_size

    def nm_to_voxel(self, positions: numpy.ndarray) -> numpy.ndarray:
        """
            Returns the (z, y, x) integer index of the voxel containing each
            (x, y, z) nanometer position (not clipped to the grid).
        """

        positions = numpy.asarray(positions, dtype=numpy.float64)
        xyz: numpy.ndarray = numpy.floor((positions - self.origin) / self.voxel_size + 0.5).astype(numpy.int64)

        return xyz[..., ::-1]

    def voxel_to_nm(self, indices: numpy.ndarray) -> numpy.ndarray:
        """ Returns the (x, y, z) nanometer centers of (z, y, x) voxel indices. """

        indices = numpy.asarray(indices, dtype=numpy.float64)

        return self.origin + indices[..., ::-1] * self.voxel_size

    def contains_voxel(self, indices: numpy.ndarray) -> numpy.ndarray:
        """ Returns whether each (z, y, x) index lies inside the grid. """

        indices = numpy.asarray(indices)

        return numpy.all((indices >= 0) & (indices < numpy.array(self.image.shape)), axis=-1)

    def clamp_nm(self, positions: numpy.ndarray) -> numpy.ndarray:
        """ Returns the given positions clamped into the volume bounds. """

        return numpy.clip(positions, self.origin, self.upper_bound_nm)

    def crop_slices(self, center_nm: numpy.ndarray, extent_nm: numpy.ndarray) -> tuple[slice, slice, slice]:
        """
            Returns the (z, y, x) slices of the voxels whose centers lie inside
            the box of the given (x, y, z) extent centered at center_nm,
            clipped to the grid.
        """

        center_nm = numpy.asarray(center_nm, dtype=numpy.float64)
        half: numpy.ndarray = numpy.asarray(extent_nm, dtype=numpy.float64) / 2
        low: numpy.ndarray = numpy.ceil((center_nm - half - self.origin) / self.voxel_size).astype(numpy.int64)
        high: numpy.ndarray = numpy.floor((center_nm + half - self.origin) / self.voxel_size).astype(numpy.int64) + 1

        dims = numpy.array(self.dims)
        low = numpy.clip(low, 0, dims)
        high = numpy.clip(high, 0, dims)

        return slice(low[2], high[2]), slice(low[1], high[1]), slice(low[0], high[0])


@dataclass(frozen=True)
class OraclePair:
    """
        Ground-truth positive pair produced by the over-segmenter: two
        segments adjacent across one cut, with the cut center.
    """

    seg_a: int
    seg_b: int
    truncation: tuple[float, float, float]
    neuron_id: int

    @property
    def key(self) -> frozenset[int]:
        return frozenset((self.seg_a, self.seg_b))


def padded_window(grid: numpy.ndarray, starts, shape: tuple[int, int, int], fill: float | None = None) -> numpy.ndarray:
    """
        Returns grid[starts : starts + shape] in (z, y, x) order, with voxels
        outside the grid filled by a constant (the mean of the in-grid part
        when fill is None).
    """

    starts = numpy.asarray(starts, dtype=numpy.int64)
    size = numpy.array(shape, dtype=numpy.int64)
    limits = numpy.array(grid.shape[:3], dtype=numpy.int64)
    low: numpy.ndarray = numpy.clip(starts, 0, limits)
    high: numpy.ndarray = numpy.maximum(numpy.clip(starts + size, 0, limits), low)

    window: numpy.ndarray = grid[low[0]:high[0], low[1]:high[1], low[2]:high[2]]
    before: numpy.ndarray = numpy.clip(low - starts, 0, size)
    after: numpy.ndarray = size - before - (high - low)

    if fill is None:
        fill = float(window.mean()) if window.size else 0.0

    padding: list[tuple[int, int]] = list(zip(before.tolist(), after.tolist())) + [(0, 0)] * (grid.ndim - 3)

    return numpy.pad(window, padding, mode="constant", constant_values=fill)
