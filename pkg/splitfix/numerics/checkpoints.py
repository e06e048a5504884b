"""
    Binary checkpoint files for model parameters & optimizer state.

    Layout (all little-endian):
        magic b"SFCK", u32 format version,
        u16 length + UTF-8 architecture tag,
        32 raw bytes of the run configuration SHA-256 digest,
        u32 parameter count, then per parameter: u16 length + UTF-8 name,
        u8 rank & one u32 per dimension,
        every parameter's float32 values in declaration order,
        u8 optimizer flag; when 1: u64 step count, then the first & second
        moments of every trainable parameter as float32.
"""

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy

from core.utils import atomic_write
from splitfix.exceptions import CheckpointFormatError
from splitfix.numerics.optimizers import OptimizerState
from splitfix.numerics.tensor import Parameter

CHECKPOINT_MAGIC = b"SFCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CheckpointInfo:
    architecture: str
    config_hash: str
    optimizer_step: int | None


def _write_text(stream: IO[bytes], text: str) -> None:
    encoded: bytes = text.encode("utf-8")
    stream.write(struct.pack("<H", len(encoded)))
    stream.write(encoded)


def _read_exact(stream: IO[bytes], size: int, path) -> bytes:
    data: bytes = stream.read(size)
    if len(data) != size:
        raise CheckpointFormatError("Checkpoint file ended unexpectedly.", path=str(path))

    return data


def _read_text(stream: IO[bytes], path) -> str:
    (length,) = struct.unpack("<H", _read_exact(stream, 2, path))

    return _read_exact(stream, length, path).decode("utf-8")


def save_checkpoint(path: Path, architecture: str, parameters: list[Parameter], config_digest: str, optimizer_state: OptimizerState | None = None) -> None:
    """ Atomically writes the given parameters (& optional optimizer state) to a checkpoint file. """

    def _write(stream: IO[bytes]) -> None:
        stream.write(CHECKPOINT_MAGIC)
        stream.write(struct.pack("<I", CHECKPOINT_VERSION))
        _write_text(stream, architecture)
        stream.write(bytes.fromhex(config_digest))
        stream.write(struct.pack("<I", len(parameters)))

        parameter: Parameter
        for parameter in parameters:
            _write_text(stream, parameter.name)
            stream.write(struct.pack("<B", parameter.data.ndim))
            stream.write(struct.pack(f"<{parameter.data.ndim}I", *parameter.shape))

        for parameter in parameters:
            stream.write(numpy.ascontiguousarray(parameter.data, dtype="<f4").tobytes())

        if optimizer_state is None:
            stream.write(struct.pack("<B", 0))
            return

        stream.write(struct.pack("<B", 1))
        stream.write(struct.pack("<Q", optimizer_state.step))
        for parameter in parameters:
            if parameter.trainable:
                empty: numpy.ndarray = numpy.zeros(parameter.shape)
                stream.write(numpy.ascontiguousarray(optimizer_state.first_moments.get(parameter.name, empty), dtype="<f4").tobytes())
                stream.write(numpy.ascontiguousarray(optimizer_state.second_moments.get(parameter.name, empty), dtype="<f4").tobytes())

    atomic_write(path, _write)


def load_checkpoint(path: Path, architecture: str, parameters: list[Parameter], optimizer_state: OptimizerState | None = None) -> CheckpointInfo:
    """
        Reads a checkpoint into the given parameters (& optimizer state, when
        given & present), checking the architecture tag, names & shapes.
    """

    path = Path(path)
    try:
        stream = io.BytesIO(path.read_bytes())
    except OSError as e:
        raise CheckpointFormatError(f"Checkpoint file could not be read: {e}", path=str(path)) from e

    if _read_exact(stream, 4, path) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("Checkpoint file has the wrong magic bytes.", path=str(path))
    (version,) = struct.unpack("<I", _read_exact(stream, 4, path))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"Unsupported checkpoint version {version}.", path=str(path))

    stored_architecture: str = _read_text(stream, path)
    if stored_architecture != architecture:
        raise CheckpointFormatError(f"Checkpoint holds a {stored_architecture!r} model, not a {architecture!r} model.", path=str(path))

    config_hash: str = _read_exact(stream, 32, path).hex()
    (count,) = struct.unpack("<I", _read_exact(stream, 4, path))
    if count != len(parameters):
        raise CheckpointFormatError(f"Checkpoint holds {count} parameters but the model has {len(parameters)}.", path=str(path))

    parameter: Parameter
    for parameter in parameters:
        name: str = _read_text(stream, path)
        (rank,) = struct.unpack("<B", _read_exact(stream, 1, path))
        shape: tuple[int, ...] = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank, path))
        if name != parameter.name or shape != parameter.shape:
            raise CheckpointFormatError(f"Checkpoint parameter {name} {shape} does not match {parameter.name} {parameter.shape}.", path=str(path))

    def _read_array(shape: tuple[int, ...]) -> numpy.ndarray:
        size = int(numpy.prod(shape, dtype=numpy.int64))
        return numpy.frombuffer(_read_exact(stream, 4 * size, path), dtype="<f4").reshape(shape).astype(numpy.float32)

    for parameter in parameters:
        parameter.data = _read_array(parameter.shape)
        parameter.zero_grad()

    (has_optimizer,) = struct.unpack("<B", _read_exact(stream, 1, path))
    step: int | None = None
    if has_optimizer:
        (step,) = struct.unpack("<Q", _read_exact(stream, 8, path))
        moments: dict[str, tuple[numpy.ndarray, numpy.ndarray]] = {
            parameter.name: (_read_array(parameter.shape), _read_array(parameter.shape))
            for parameter in parameters
            if parameter.trainable
        }
        if optimizer_state is not None:
            optimizer_state.step = step
            optimizer_state.first_moments = {name: first for name, (first, _) in moments.items()}
            optimizer_state.second_moments = {name: second for name, (_, second) in moments.items()}

    return CheckpointInfo(architecture=stored_architecture, config_hash=config_hash, optimizer_step=step)
