"""
    Binary sample cache files, so classifier training & evaluation can reuse
    samples without re-cropping the volume.

    Layout (all little-endian):
        magic b"SFSC", u32 format version,
        u16 length + UTF-8 sample kind ("point" or "mask"),
        32 raw bytes of the run configuration SHA-256 digest,
        u32 sample count, u8 data rank & one u32 per data dimension,
        then one fixed-size record per sample: u8 label, u64 seg_a,
        u64 seg_b, 3 x f64 truncation (nm), 3 x f64 origin (nm), f64 scale
        & the sample data as float32.
"""

import io
import struct
from pathlib import Path
from typing import IO, Sequence

import numpy

from core.utils import atomic_write
from splitfix.connectnet.samples import MaskSample, PointSample
from splitfix.exceptions import SampleCacheFormatError

CACHE_MAGIC = b"SFSC"
CACHE_VERSION = 1
SAMPLE_KINDS: dict[str, type] = {"point": PointSample, "mask": MaskSample}


def record_dtype(data_shape: tuple[int, ...]) -> numpy.dtype:
    return numpy.dtype([
        ("label", "<u1"),
        ("seg_a", "<u8"),
        ("seg_b", "<u8"),
        ("truncation", "<f8", (3,)),
        ("origin", "<f8", (3,)),
        ("scale", "<f8"),
        ("data", "<f4", data_shape)
    ])


def _read_exact(stream: IO[bytes], size: int, path) -> bytes:
    data: bytes = stream.read(size)
    if len(data) != size:
        raise SampleCacheFormatError("Sample cache file ended unexpectedly.", path=str(path))

    return data


def write_sample_cache(path: Path, samples: Sequence[PointSample | MaskSample], config_digest: str) -> None:
    """ Atomically writes same-shaped samples of one kind to a cache file. """

    if not samples:
        raise ValueError("A sample cache needs at least one sample.")

    kind: str = "point" if isinstance(samples[0], PointSample) else "mask"
    data_shape: tuple[int, ...] = samples[0].data.shape
    if any(not isinstance(sample, SAMPLE_KINDS[kind]) or sample.data.shape != data_shape for sample in samples):
        raise ValueError("Cached samples must share one kind & one data shape.")

    records = numpy.zeros(len(samples), dtype=record_dtype(data_shape))
    records["label"] = [sample.label for sample in samples]
    records["seg_a"] = [sample.seg_a for sample in samples]
    records["seg_b"] = [sample.seg_b for sample in samples]
    records["truncation"] = [sample.truncation for sample in samples]
    records["data"] = numpy.stack([sample.data for sample in samples])
    if kind == "point":
        records["origin"] = [sample.origin for sample in samples]
        records["scale"] = [sample.scale for sample in samples]

    def _write(stream: IO[bytes]) -> None:
        encoded_kind: bytes = kind.encode("utf-8")

        stream.write(CACHE_MAGIC)
        stream.write(struct.pack("<I", CACHE_VERSION))
        stream.write(struct.pack("<H", len(encoded_kind)))
        stream.write(encoded_kind)
        stream.write(bytes.fromhex(config_digest))
        stream.write(struct.pack("<I", len(samples)))
        stream.write(struct.pack("<B", len(data_shape)))
        stream.write(struct.pack(f"<{len(data_shape)}I", *data_shape))
        stream.write(records.tobytes())

    atomic_write(path, _write)


def read_sample_cache(path: Path, expected_digest: str | None = None) -> tuple[list[PointSample | MaskSample], str]:
    """
        Reads a cache file back into samples, returning them with the stored
        configuration digest. A given expected_digest must match the stored
        one.
    """

    path = Path(path)
    try:
        stream = io.BytesIO(path.read_bytes())
    except OSError as e:
        raise SampleCacheFormatError(f"Sample cache file could not be read: {e}", path=str(path)) from e

    if _read_exact(stream, 4, path) != CACHE_MAGIC:
        raise SampleCacheFormatError("Sample cache file has the wrong magic bytes.", path=str(path))
    (version,) = struct.unpack("<I", _read_exact(stream, 4, path))
    if version != CACHE_VERSION:
        raise SampleCacheFormatError(f"Unsupported sample cache version {version}.", path=str(path))

    (kind_length,) = struct.unpack("<H", _read_exact(stream, 2, path))
    kind: str = _read_exact(stream, kind_length, path).decode("utf-8", errors="replace")
    if kind not in SAMPLE_KINDS:
        raise SampleCacheFormatError(f"Unknown sample kind {kind!r}.", path=str(path))

    config_digest: str = _read_exact(stream, 32, path).hex()
    if expected_digest is not None and config_digest != expected_digest:
        raise SampleCacheFormatError("Sample cache was built from a different run configuration.", path=str(path))

    (count,) = struct.unpack("<I", _read_exact(stream, 4, path))
    (rank,) = struct.unpack("<B", _read_exact(stream, 1, path))
    data_shape: tuple[int, ...] = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank, path))

    dtype: numpy.dtype = record_dtype(data_shape)
    payload: bytes = _read_exact(stream, count * dtype.itemsize, path)
    if stream.read(1):
        raise SampleCacheFormatError("Sample cache file has trailing bytes.", path=str(path))

    records: numpy.ndarray = numpy.frombuffer(payload, dtype=dtype)
    samples: list[PointSample | MaskSample] = []

    record: numpy.void
    for record in records:
        common = {
            "data": numpy.array(record["data"], dtype=numpy.float32),
            "label": int(record["label"]),
            "seg_a": int(record["seg_a"]),
            "seg_b": int(record["seg_b"]),
            "truncation": tuple(float(value) for value in record["truncation"])
        }
        if kind == "point":
            samples.append(PointSample(**common, origin=tuple(float(value) for value in record["origin"]), scale=float(record["scale"])))
        else:
            samples.append(MaskSample(**common))

    return samples, config_digest
