"""Byte-stable checkpoint format.

Layout: magic line, one ASCII line with the header byte length, a JSON header
(sorted keys) naming the kind, config, index maps, and array shapes, then the
arrays concatenated as little-endian float64 in row-major order. No
timestamps or environment-dependent fields, so identical runs produce
identical files.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError

__all__ = ["save_checkpoint", "load_checkpoint"]

_MAGIC = b"FRCKPT1\n"


def save_checkpoint(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    names = sorted(arrays)
    header = {
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
        "kind": kind,
        "meta": meta,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(f"{len(header_bytes)}\n".encode("ascii"))
        fh.write(header_bytes)
        fh.write(b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        length_line = fh.readline()
        try:
            header_len = int(length_line.strip())
        except ValueError:
            raise DataError(f"{path}: corrupt header length") from None
        header = json.loads(fh.read(header_len).decode("utf-8"))
        fh.read(1)  # trailing newline
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"{path}: truncated array payload for {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header["kind"], header["meta"], arrays
