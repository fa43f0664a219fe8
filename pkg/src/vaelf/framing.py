"""Binary checkpoint framing shared by the VAE and MF models.

Layout: one line of UTF-8 JSON header terminated by a newline, then raw
little-endian float64 arrays in ``header["arrays"]`` order.
"""

import json
from pathlib import Path

import numpy as np


def write_framed(path, header: dict, arrays: list[np.ndarray]):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    tmp.replace(path)


def read_framed(path, fmt: str, version: int) -> tuple[dict, list[np.ndarray]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    if header.get("format") != fmt:
        raise ValueError(f"{path}: not a {fmt} checkpoint (format={header.get('format')!r})")
    if header.get("version") != version:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    arrays, offset = [], 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + n > len(blob):
            raise ValueError(f"{path}: truncated at array {entry['name']}")
        arrays.append(np.frombuffer(blob, dtype="<f8", count=n // 8, offset=offset).reshape(shape).astype(np.float64))
        offset += n
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    return header, arrays
