"""Tiny self-describing binary container shared by dataset and checkpoint files.

Layout::

    <MAGIC>\n
    version=<int>\n
    meta.<key>=<value>\n ...           (values are JSON)
    array=<name>:<dtype>:<d0,d1,..>:<nbytes>\n ...
    end-header\n
    <little-endian array bytes, in header order>
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPES = {"f8": "<f8", "i8": "<i8", "b1": "|b1"}


class FormatError(ValueError):
    """Bad magic, unsupported version or malformed header."""


class TruncatedFileError(FormatError):
    pass


def _code(arr: np.ndarray) -> str:
    if arr.dtype == np.bool_:
        return "b1"
    if np.issubdtype(arr.dtype, np.integer):
        return "i8"
    if np.issubdtype(arr.dtype, np.floating):
        return "f8"
    raise TypeError(f"unsupported dtype {arr.dtype}")


def write(path, magic: str, version: int, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    lines = [magic, f"version={version}"]
    for key in sorted(meta):
        lines.append(f"meta.{key}={json.dumps(meta[key], sort_keys=True)}")
    payload = []
    for name, arr in arrays.items():
        code = _code(np.asarray(arr))
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        shape = ",".join(str(s) for s in np.shape(arr))
        lines.append(f"array={name}:{code}:{shape}:{len(data)}")
        payload.append(data)
    lines.append("end-header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for chunk in payload:
            fh.write(chunk)


def read(path, magic: str, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    head_end = raw.find(b"\nend-header\n")
    first = raw.split(b"\n", 1)[0].decode("utf-8", "replace")
    if first != magic:
        raise FormatError(f"{path}: bad magic {first!r}, expected {magic!r}")
    if head_end < 0:
        raise TruncatedFileError(f"{path}: header terminator missing")
    header = raw[:head_end].decode("utf-8").split("\n")
    if header[1] != f"version={version}":
        raise FormatError(f"{path}: unsupported {header[1]!r}, expected version={version}")
    meta, specs = {}, []
    for line in header[2:]:
        if line.startswith("meta."):
            key, _, value = line[5:].partition("=")
            meta[key] = json.loads(value)
        elif line.startswith("array="):
            name, code, shape, nbytes = line[6:].split(":")
            dims = tuple(int(s) for s in shape.split(",")) if shape else ()
            specs.append((name, code, dims, int(nbytes)))
        else:
            raise FormatError(f"{path}: unexpected header line {line!r}")
    offset = head_end + len(b"\nend-header\n")
    arrays = {}
    for name, code, dims, nbytes in specs:
        if offset + nbytes > len(raw):
            raise TruncatedFileError(f"{path}: payload truncated in array {name!r}")
        arr = np.frombuffer(raw, dtype=_DTYPES[code], count=nbytes // np.dtype(_DTYPES[code]).itemsize,
                            offset=offset).reshape(dims)
        arrays[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return meta, arrays
