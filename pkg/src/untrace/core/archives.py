"""Deterministic zip archives for checkpoints and bundled artifacts.

Python's zipfile stamps entries with the current time, which breaks
byte-identical reruns. Entries here are stored uncompressed with a fixed
timestamp and written in sorted order, so the same payload always yields
the same bytes on disk.

Layout: `meta.json` (format name + version + user metadata) plus one
`arrays/<key>.npy` entry per tensor.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, CheckpointVersionError, DataIOError

ARCHIVE_EPOCH = (1980, 1, 1, 0, 0, 0)  # earliest date_time zip can represent


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_archive(path, format_name: str, version: int, meta: dict,
                 arrays: dict[str, np.ndarray]) -> None:
    """Write a deterministic archive. `meta` must be JSON-serializable."""
    path = Path(path)
    payload = dict(meta)
    payload["format"] = format_name
    payload["version"] = int(version)
    entries: list[tuple[str, bytes]] = [("meta.json", _canonical_json(payload))]
    for key in sorted(arrays):
        buf = io.BytesIO()
        np.save(buf, np.ascontiguousarray(arrays[key]), allow_pickle=False)
        entries.append((f"arrays/{key}.npy", buf.getvalue()))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            for name, data in entries:
                info = zipfile.ZipInfo(name, date_time=ARCHIVE_EPOCH)
                info.compress_type = zipfile.ZIP_STORED
                info.external_attr = 0o644 << 16
                zf.writestr(info, data)
    except OSError as e:
        raise DataIOError(f"cannot write archive {path}: {e}") from e


def peek_format(path) -> str:
    """Read just the format tag of an archive."""
    path = Path(path)
    if not path.exists():
        raise DataIOError(f"archive not found: {path}")
    try:
        with zipfile.ZipFile(path, "r") as zf:
            meta = json.loads(zf.read("meta.json").decode("utf-8"))
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as e:
        raise CheckpointError(f"{path} is not a valid archive: {e}") from e
    return str(meta.get("format"))


def load_archive(path, format_name: str, version: int
                 ) -> tuple[dict, dict[str, np.ndarray]]:
    """Read an archive, checking the format tag and exact version."""
    path = Path(path)
    if not path.exists():
        raise DataIOError(f"archive not found: {path}")
    try:
        with zipfile.ZipFile(path, "r") as zf:
            names = set(zf.namelist())
            if "meta.json" not in names:
                raise CheckpointError(f"{path} has no meta.json entry")
            meta = json.loads(zf.read("meta.json").decode("utf-8"))
            arrays = {}
            for name in sorted(names):
                if name.startswith("arrays/") and name.endswith(".npy"):
                    key = name[len("arrays/"):-len(".npy")]
                    buf = io.BytesIO(zf.read(name))
                    arrays[key] = np.load(buf, allow_pickle=False)
    except zipfile.BadZipFile as e:
        raise CheckpointError(f"{path} is not a valid archive: {e}") from e
    except OSError as e:
        raise DataIOError(f"cannot read archive {path}: {e}") from e
    if meta.get("format") != format_name:
        raise CheckpointError(
            f"{path}: expected format {format_name!r}, found {meta.get('format')!r}"
        )
    if meta.get("version") != version:
        raise CheckpointVersionError(
            f"{path}: expected version {version}, found {meta.get('version')}"
        )
    return meta, arrays
