"""
    Utility functions within core app.
"""

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Callable, IO

from django.conf import settings


def derive_seed(master_seed: int, stage: str) -> int:
    """
        Returns the seed for one pipeline stage, derived from the master seed
        so that any stage can be re-run on its own and still receive the same
        seed.
    """

    digest: bytes = hashlib.sha256(f"{master_seed}:{stage}".encode("utf-8")).digest()

    return int.from_bytes(digest[:8], "little") % (2 ** 63)


def config_hash(resolved_config: dict[str, dict[str, ...]]) -> str:
    """
        Returns the hex SHA-256 digest of the canonical JSON form of the given
        resolved configuration.
    """

    canonical: str = json.dumps(resolved_config, sort_keys=True, separators=(",", ":"), default=str)

    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def provenance_line(config_digest: str) -> str:
    """
        Returns the comment line written at the top of every text output file.
    """

    return f"# config_hash={config_digest} version={settings.VERSION}"


def atomic_write(path: Path, write: Callable[[IO[bytes]], None]) -> None:
    """
        Writes a file by handing a temporary file in the same directory to the
        given write callable, then renaming it over the destination path.
    """

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    file_descriptor, temporary_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(file_descriptor, "wb") as temporary_file:
            write(temporary_file)
        os.replace(temporary_name, path)
    except BaseException:
        if os.path.exists(temporary_name):
            os.remove(temporary_name)
        raise
