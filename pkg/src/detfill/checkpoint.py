"""Deterministic checkpoint container.

Layout (all little-endian):

    bytes 0..8    magic b"DFCKPT01"
    bytes 8..16   uint64 header length in bytes
    header        canonical JSON: {"arrays": [{name, dtype, shape}...],
                  "format_version": 1, "meta": {...}}
    payload       raw C-order array bytes, concatenated in header order

Arrays are written sorted by name and the JSON is key-sorted with no
whitespace, so identical content always produces identical bytes —
save -> load -> save round-trips bit-for-bit (unlike zip-based formats,
which embed timestamps). ``meta`` is any JSON-serializable dict (config
echo, seed, step counter, mode).
"""

from __future__ import annotations

import json

import numpy as np

__all__ = ["CheckpointError", "FORMAT_VERSION", "save_checkpoint", "load_checkpoint"]

MAGIC = b"DFCKPT01"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Raised for malformed, truncated, or incompatible checkpoint files."""


def _canonical_dtype(arr):
    dt = arr.dtype.newbyteorder("<")
    return dt.str


def save_checkpoint(path, meta, arrays):
    """Write named arrays plus a metadata dict to `path`.

    arrays: mapping name -> ndarray. Names may use "/" to namespace
    (e.g. "generator/encoder.0.weight", "opt_g/.../exp_avg").
    """
    manifest = []
    blobs = []
    for name in sorted(arrays):
        # NOT ascontiguousarray: that would silently promote 0-dim arrays
        # (optimizer step counters) to shape (1,); tobytes already emits
        # C order for any layout
        arr = np.asarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        manifest.append(
            {"name": name, "dtype": _canonical_dtype(arr), "shape": list(arr.shape)}
        )
        blobs.append(arr.tobytes(order="C"))
    header = json.dumps(
        {"arrays": manifest, "format_version": FORMAT_VERSION, "meta": meta},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (meta, arrays) with arrays name-keyed."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    header_len = int.from_bytes(raw[8:16], "little")
    if 16 + header_len > len(raw):
        raise CheckpointError(f"truncated header in {path}")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header in {path}: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported format_version {version!r} (expected {FORMAT_VERSION})"
        )
    arrays = {}
    offset = 16 + header_len
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        end = offset + nbytes
        if end > len(raw):
            raise CheckpointError(f"truncated payload for {entry['name']!r} in {path}")
        arrays[entry["name"]] = np.frombuffer(
            raw[offset:end], dtype=dtype
        ).reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointError(
            f"{len(raw) - offset} trailing bytes in {path} beyond declared arrays"
        )
    return header["meta"], arrays
