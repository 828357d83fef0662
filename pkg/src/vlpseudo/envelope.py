"""Manifest + raw-float file envelope shared by all on-disk artifacts.

Every persistent artifact (embedding cache, pseudo-label scores, latent
snapshots, classifier checkpoints, similarity dumps) is a pair of files:

  <base>.manifest   UTF-8 text, one ``key=value`` per line, fixed key order.
                    Repeated keys (``image_id``, ``class_name``) keep their
                    write order and encode ordered lists.
  <base>.bin        raw little-endian IEEE-754 floats, no header.

The blob is binary32 unless the manifest carries ``dtype=float64``
(snapshots and checkpoints, which must round-trip float64 payloads
bit-exactly). Writing is deterministic: identical inputs produce
byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class EnvelopeError(ValueError):
    """Malformed, truncated, or version-incompatible envelope."""


FORMAT_VERSION = "1"

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
}


def manifest_path(base: str | Path) -> Path:
    return Path(str(base) + ".manifest")


def blob_path(base: str | Path) -> Path:
    return Path(str(base) + ".bin")


def format_float(x: float) -> str:
    """Shortest decimal string that round-trips the float64 exactly."""
    return repr(float(x))


def write_envelope(
    base: str | Path,
    kind: str,
    meta: list[tuple[str, str]],
    arrays: list[np.ndarray],
    dtype: str = "float32",
) -> Path:
    """Write manifest plus concatenated flat arrays; returns the manifest path.

    ``meta`` is an ordered list so repeated keys are legal. ``arrays`` are
    flattened in order into one contiguous blob.
    """
    if dtype not in _DTYPES:
        raise EnvelopeError(f"unsupported dtype {dtype!r}")
    np_dtype = _DTYPES[dtype]

    lines = [f"version={FORMAT_VERSION}", f"kind={kind}", f"dtype={dtype}"]
    for key, value in meta:
        if "\n" in str(value):
            raise EnvelopeError(f"manifest value for {key!r} contains a newline")
        lines.append(f"{key}={value}")
    text = "\n".join(lines) + "\n"

    flat = np.concatenate([np.asarray(a).ravel() for a in arrays]) if arrays else np.empty(0)
    payload = np.ascontiguousarray(flat, dtype=np_dtype).tobytes()

    mpath = manifest_path(base)
    mpath.parent.mkdir(parents=True, exist_ok=True)
    mpath.write_text(text, encoding="utf-8")
    blob_path(base).write_bytes(payload)
    return mpath


class Manifest:
    """Parsed manifest: scalar access plus ordered repeated-key lists."""

    def __init__(self, pairs: list[tuple[str, str]]):
        self.pairs = pairs
        self._index: dict[str, list[str]] = {}
        for key, value in pairs:
            self._index.setdefault(key, []).append(value)

    def get(self, key: str) -> str:
        values = self._index.get(key)
        if not values:
            raise EnvelopeError(f"manifest missing key {key!r}")
        if len(values) > 1:
            raise EnvelopeError(f"manifest key {key!r} repeated; use get_all")
        return values[0]

    def get_int(self, key: str) -> int:
        return int(self.get(key))

    def get_float(self, key: str) -> float:
        return float(self.get(key))

    def get_all(self, key: str) -> list[str]:
        return self._index.get(key, [])

    @property
    def kind(self) -> str:
        return self.get("kind")

    @property
    def dtype(self) -> str:
        return self.get("dtype")


def read_envelope(base: str | Path, expect_kind: str | None = None) -> tuple[Manifest, np.ndarray]:
    """Read manifest and flat blob; validates version and optional kind."""
    mpath = manifest_path(base)
    bpath = blob_path(base)
    if not mpath.is_file():
        raise EnvelopeError(f"manifest not found: {mpath}")
    if not bpath.is_file():
        raise EnvelopeError(f"binary blob not found: {bpath}")

    pairs = []
    for lineno, line in enumerate(mpath.read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        if "=" not in line:
            raise EnvelopeError(f"{mpath}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        pairs.append((key, value))
    manifest = Manifest(pairs)

    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise EnvelopeError(f"{mpath}: unsupported format version {version!r}")
    if expect_kind is not None and manifest.kind != expect_kind:
        raise EnvelopeError(f"{mpath}: expected kind {expect_kind!r}, found {manifest.kind!r}")

    np_dtype = _DTYPES.get(manifest.dtype)
    if np_dtype is None:
        raise EnvelopeError(f"{mpath}: unsupported dtype {manifest.dtype!r}")
    raw = bpath.read_bytes()
    if len(raw) % np_dtype.itemsize != 0:
        raise EnvelopeError(f"{bpath}: size {len(raw)} not a multiple of {np_dtype.itemsize}")
    return manifest, np.frombuffer(raw, dtype=np_dtype)


def take(flat: np.ndarray, offset: int, count: int, where: str) -> tuple[np.ndarray, int]:
    """Slice ``count`` floats at ``offset``, raising on truncation."""
    end = offset + count
    if end > flat.size:
        raise EnvelopeError(f"blob truncated reading {where}: need {end} floats, have {flat.size}")
    return flat[offset:end], end
