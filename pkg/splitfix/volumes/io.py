"""
    Volume & skeleton file reading/writing in splitfix app.

    A volume file holds one grid: a 64-byte little-endian header followed by
    the raw grid in x-fastest order. Images are stored as 8-bit intensities,
    label grids as unsigned 32-bit integers. A labeled volume directory holds
    one file per grid (image.vol, segments.vol, neurons.vol) sharing the same
    header geometry.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy

from core.utils import atomic_write, provenance_line
from splitfix.exceptions import VolumeFormatError
from splitfix.geometry import Skeleton, parse_swc, serialize_swc
from splitfix.volumes.types import LabeledVolume

VOLUME_MAGIC = b"SPLITVOL"
VOLUME_VERSION = 1
VOLUME_HEADER = numpy.dtype([
    ("magic", "S8"),
    ("version", "<u4"),
    ("kind", "<u4"),
    ("dims", "<u4", (3,)),
    ("voxel_size", "<f4", (3,)),
    ("origin", "<f4", (3,)),
    ("config_hash", "V8"),
    ("reserved", "V4")
])
VOLUME_KINDS: dict[str, tuple[int, str]] = {
    "image": (1, "<u1"),
    "segments": (2, "<u4"),
    "neurons": (3, "<u4")
}
GRID_FILE_NAMES: dict[str, str] = {"image": "image.vol", "segments": "segments.vol", "neurons": "neurons.vol"}


@dataclass(frozen=True)
class VolumeHeader:
    kind: str
    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    origin: tuple[float, float, float]
    config_hash: str


def write_volume(path: Path, grid: numpy.ndarray, kind: str, voxel_size, origin, config_digest: str) -> None:
    """
        Writes one (z, y, x) grid to a volume file. Image grids are expected
        in [0, 1] & are quantized to 8 bits.
    """

    if kind not in VOLUME_KINDS:
        raise ValueError(f"Volume kind must be one of {tuple(VOLUME_KINDS)}.")

    kind_code, data_type = VOLUME_KINDS[kind]
    depth, height, width = grid.shape

    header = numpy.zeros(1, dtype=VOLUME_HEADER)
    header["magic"] = VOLUME_MAGIC
    header["version"] = VOLUME_VERSION
    header["kind"] = kind_code
    header["dims"] = (width, height, depth)
    header["voxel_size"] = voxel_size
    header["origin"] = origin
    header["config_hash"] = numpy.void(bytes.fromhex(config_digest[:16]))

    if kind == "image":
        data: numpy.ndarray = numpy.round(numpy.clip(grid, 0.0, 1.0) * 255).astype(data_type)
    else:
        data = numpy.asarray(grid).astype(data_type)

    def _write(file: IO[bytes]) -> None:
        file.write(header.tobytes())
        file.write(numpy.ascontiguousarray(data).tobytes())

    atomic_write(path, _write)


def read_volume(path: Path) -> tuple[numpy.ndarray, VolumeHeader]:
    """
        Reads one volume file, returning its (z, y, x) grid (images as float32
        in [0, 1], labels as uint32) & its header.
    """

    path = Path(path)
    try:
        raw: bytes = path.read_bytes()
    except OSError as e:
        raise VolumeFormatError(f"Volume file could not be read: {e}", path=str(path)) from e

    if len(raw) < VOLUME_HEADER.itemsize:
        raise VolumeFormatError("Volume file is shorter than its header.", path=str(path))

    header = numpy.frombuffer(raw, dtype=VOLUME_HEADER, count=1)[0]
    if bytes(header["magic"]) != VOLUME_MAGIC:
        raise VolumeFormatError("Volume file has the wrong magic bytes.", path=str(path))
    if int(header["version"]) != VOLUME_VERSION:
        raise VolumeFormatError(f"Unsupported volume file version {int(header['version'])}.", path=str(path))

    kinds_by_code: dict[int, str] = {code: kind for kind, (code, _) in VOLUME_KINDS.items()}
    kind: str | None = kinds_by_code.get(int(header["kind"]))
    if kind is None:
        raise VolumeFormatError(f"Unknown volume kind code {int(header['kind'])}.", path=str(path))

    width, height, depth = (int(size) for size in header["dims"])
    data_type = numpy.dtype(VOLUME_KINDS[kind][1])
    payload: bytes = raw[VOLUME_HEADER.itemsize:]
    if len(payload) != width * height * depth * data_type.itemsize:
        raise VolumeFormatError("Volume file payload size does not match its header dims.", path=str(path))

    grid: numpy.ndarray = numpy.frombuffer(payload, dtype=data_type).reshape(depth, height, width)
    if kind == "image":
        grid = (grid.astype(numpy.float32) / 255).astype(numpy.float32)
    else:
        grid = grid.astype(numpy.uint32)

    return grid, VolumeHeader(
        kind=kind,
        dims=(width, height, depth),
        voxel_size=tuple(float(value) for value in header["voxel_size"]),
        origin=tuple(float(value) for value in header["origin"]),
        config_hash=bytes(header["config_hash"]).hex()
    )


def save_labeled_volume(directory: Path, volume: LabeledVolume, config_digest: str) -> None:
    """ Writes the three grids of a labeled volume into the given directory. """

    directory = Path(directory)
    grids: dict[str, numpy.ndarray] = {"image": volume.image, "segments": volume.segment_ids, "neurons": volume.neuron_ids}

    kind: str
    for kind, grid in grids.items():
        write_volume(directory / GRID_FILE_NAMES[kind], grid, kind, volume.voxel_size, volume.origin, config_digest)

    logging.info(f"Saved volume of dims {volume.dims} to {directory}.")


def load_labeled_volume(directory: Path) -> LabeledVolume:
    """
        Reads the three grids of a labeled volume directory, checking that they
        share one geometry.
    """

    directory = Path(directory)
    grids: dict[str, numpy.ndarray] = {}
    headers: dict[str, VolumeHeader] = {}

    kind: str
    for kind, file_name in GRID_FILE_NAMES.items():
        grids[kind], headers[kind] = read_volume(directory / file_name)
        if headers[kind].kind != kind:
            raise VolumeFormatError(f"Expected a {kind} grid but found a {headers[kind].kind} grid.", path=str(directory / file_name))

    geometries: set[tuple] = {(header.dims, header.voxel_size, header.origin) for header in headers.values()}
    if len(geometries) != 1:
        raise VolumeFormatError("Volume grids in the directory do not share the same geometry.", path=str(directory))

    return LabeledVolume(
        image=grids["image"],
        segment_ids=grids["segments"],
        neuron_ids=grids["neurons"],
        voxel_size=numpy.array(headers["image"].voxel_size),
        origin=numpy.array(headers["image"].origin)
    )


def save_skeletons(directory: Path, skeletons: list[Skeleton], config_digest: str) -> None:
    """
        Writes one nanometer SWC file per skeleton, named by its neuron id
        (list position + 1) so that reading them back keeps the neuron order.
    """

    directory = Path(directory)

    neuron_id: int
    skeleton: Skeleton
    for neuron_id, skeleton in enumerate(skeletons, start=1):
        text: str = f"{provenance_line(config_digest)}\n{serialize_swc(skeleton, unit_nm=1.0)}"
        atomic_write(directory / f"neuron_{neuron_id:05d}.swc", lambda file, text=text: file.write(text.encode("utf-8")))


def load_skeletons(directory: Path, unit_nm: float = 1.0) -> list[Skeleton]:
    """ Reads every SWC file in the directory, in file name order. """

    skeletons: list[Skeleton] = []

    path: Path
    for path in sorted(Path(directory).glob("*.swc")):
        with path.open("r", encoding="utf-8") as file:
            skeletons.append(parse_swc(file, unit_nm=unit_nm))

    return skeletons
