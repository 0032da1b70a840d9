"""Portable array-archive directories.

An archive is a directory with a ``manifest.json`` plus one raw binary file
per array.  The manifest records each array's dtype, shape, byte order
(always little-endian) and SHA-256, together with free-form metadata.  Every
part of the package that persists arrays (datasets, checkpoints) uses this
one format, so round-trips are bit-exact and corruption is detectable.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CorruptArchiveError

MANIFEST_NAME = "manifest.json"
FORMAT_NAME = "array-archive"
FORMAT_VERSION = 1

_SAFE_NAME = re.compile(r"^[A-Za-z0-9._-]+$")


def _as_little_endian(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def save_array_archive(
    path: str | Path,
    arrays: Mapping[str, np.ndarray],
    metadata: dict | None = None,
) -> Path:
    """Write ``arrays`` and ``metadata`` to ``path``, returning the path.

    Existing manifest/array files in the directory are overwritten.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in arrays.items():
        if not _SAFE_NAME.match(name):
            raise ValueError(f"array name not filesystem-safe: {name!r}")
        arr = _as_little_endian(np.asarray(arr))
        raw = arr.tobytes()
        filename = f"{name}.bin"
        (path / filename).write_bytes(raw)
        entries[name] = {
            "file": filename,
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "sha256": hashlib.sha256(raw).hexdigest(),
        }
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "byte_order": "little",
        "arrays": entries,
        "metadata": metadata or {},
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise CorruptArchiveError(f"no {MANIFEST_NAME} in {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptArchiveError(f"malformed manifest in {path}: {exc}") from exc
    if manifest.get("format") != FORMAT_NAME:
        raise CorruptArchiveError(f"not an {FORMAT_NAME} manifest: {path}")
    if not isinstance(manifest.get("arrays"), dict):
        raise CorruptArchiveError(f"manifest missing array table: {path}")
    return manifest


def load_array_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Load an archive, verifying shapes and checksums.

    Raises :class:`CorruptArchiveError` on any inconsistency between the
    manifest and the binary payloads.
    """
    path = Path(path)
    manifest = read_manifest(path)
    arrays: dict[str, np.ndarray] = {}
    for name, entry in manifest["arrays"].items():
        try:
            dtype = np.dtype(entry["dtype"]).newbyteorder("<")
            shape = tuple(int(s) for s in entry["shape"])
            filename = entry["file"]
            expected_sha = entry["sha256"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptArchiveError(f"bad manifest entry for {name!r}: {exc}") from exc
        file_path = path / filename
        if not file_path.is_file():
            raise CorruptArchiveError(f"missing payload {filename} for array {name!r}")
        raw = file_path.read_bytes()
        expected_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if len(raw) != expected_bytes:
            raise CorruptArchiveError(
                f"array {name!r}: payload is {len(raw)} bytes, "
                f"manifest shape {shape} implies {expected_bytes}"
            )
        actual_sha = hashlib.sha256(raw).hexdigest()
        if actual_sha != expected_sha:
            raise CorruptArchiveError(f"array {name!r}: checksum mismatch")
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return arrays, manifest.get("metadata", {})


def archive_fingerprint(path: str | Path) -> str:
    """Content hash of an archive: stable across re-saves of equal data."""
    manifest = read_manifest(path)
    digest_input = {
        "arrays": {name: e["sha256"] for name, e in manifest["arrays"].items()},
        "metadata": manifest.get("metadata", {}),
    }
    canonical = json.dumps(digest_input, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
