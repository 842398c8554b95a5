import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from gridedge.shared.constants import MANIFEST_FORMAT
from gridedge.shared.exceptions import ConfigError, DataIOError
from gridedge.utils.json import dumps


logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"


def ensure_dir(path: Path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"Cannot create output directory {path}: {e}") from e
    return path


def write_matrix(
    path: Path,
    matrix: np.ndarray,
    channels: Sequence[str],
    stamps: Optional[Sequence[Any]] = None,
) -> Path:
    """Write a channel-by-time matrix as CSV.

    Args:
        path: Target file.
        matrix: Array of shape (len(channels), n_columns).
        channels: Row labels, written in the leading ``channel`` column.
        stamps: Column labels (minute stamps); defaults to 0..n_columns-1.

    Returns:
        The written path.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[0] != len(channels):
        raise DataIOError(
            f"{path}: {matrix.shape[0]} rows but {len(channels)} channel labels"
        )
    if stamps is None:
        stamps = range(matrix.shape[1])
    frame = pd.DataFrame(matrix, index=list(channels), columns=[str(s) for s in stamps])
    frame.index.name = "channel"
    try:
        frame.to_csv(path, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise DataIOError(f"Failed to write {path}: {e}") from e
    return Path(path)


def read_matrix(path: Path, required: bool = True) -> Optional[pd.DataFrame]:
    """Read a CSV written by :func:`write_matrix`.

    A missing required file is a configuration problem (the referenced input
    does not exist); a file that exists but cannot be parsed is an I/O problem.
    """
    path = Path(path)
    if not path.exists():
        if required:
            raise ConfigError(f"Required input file is missing: {path}")
        return None
    try:
        frame = pd.read_csv(path, index_col="channel")
    except (OSError, ValueError) as e:
        raise DataIOError(f"Cannot parse matrix file {path}: {e}") from e
    return frame.astype(float)


def write_table(path: Path, rows: List[Dict[str, Any]], columns: Sequence[str]) -> Path:
    frame = pd.DataFrame(rows, columns=list(columns))
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise DataIOError(f"Failed to write {path}: {e}") from e
    return Path(path)


def read_table(path: Path, required: bool = True) -> Optional[pd.DataFrame]:
    path = Path(path)
    if not path.exists():
        if required:
            raise ConfigError(f"Required input file is missing: {path}")
        return None
    try:
        return pd.read_csv(path)
    except (OSError, ValueError) as e:
        raise DataIOError(f"Cannot parse table {path}: {e}") from e


def write_json(path: Path, data: Any) -> Path:
    try:
        Path(path).write_text(dumps(data))
    except OSError as e:
        raise DataIOError(f"Failed to write {path}: {e}") from e
    return Path(path)


def read_json(path: Path, required: bool = True) -> Optional[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        if required:
            raise ConfigError(f"Required input file is missing: {path}")
        return None
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataIOError(f"Cannot parse JSON file {path}: {e}") from e


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Manifest:
    """Index of the files written by one command, with content hashes.

    Every output is registered exactly once; ``volatile`` marks files whose
    content legitimately differs between reruns (wall-clock timings).
    """

    def __init__(self, root: Path, command: str, config_hash: str, seed: int):
        self.root = Path(root)
        self.command = command
        self.config_hash = config_hash
        self.seed = seed
        self.entries: Dict[str, Dict[str, Any]] = {}

    def add(self, path: Path, kind: str, volatile: bool = False) -> None:
        relative = Path(path).resolve().relative_to(self.root.resolve()).as_posix()
        if relative in self.entries:
            raise DataIOError(f"{relative} registered twice in manifest")
        self.entries[relative] = {
            "kind": kind,
            "sha256": file_digest(path),
            "volatile": volatile,
        }
        logger.debug(f"manifest: {relative} ({kind})")

    def as_dict(self) -> Dict[str, Any]:
        return {
            "format": MANIFEST_FORMAT,
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "files": self.entries,
        }

    def save(self, extra: Optional[Dict[str, Any]] = None) -> Path:
        data = self.as_dict()
        if extra:
            data.update(extra)
        return write_json(self.root / "manifest.json", data)
