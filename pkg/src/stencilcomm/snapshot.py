"""State snapshot files.

Layout: a magic line, one line of JSON header, then the computational region
of every field as raw little-endian float64 in row-major order, field after
field.  Halo cells are not stored.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mhd import FIELD_NAMES, FieldState

MAGIC = b"STENCILCOMM-SNAPSHOT 1\n"


class SnapshotError(ValueError):
    pass


def write_snapshot(path, state: FieldState, **meta) -> None:
    names = list(FIELD_NAMES[: state.num_fields]) + [f"f{k}" for k in range(len(FIELD_NAMES), state.num_fields)]
    header = {
        "extent": list(state.extent),
        "radius": state.radius,
        "spacing": [float(h) for h in state.spacing],
        "fields": names,
        "dtype": "<f8",
        "order": "C",
        **meta,
    }
    body = np.ascontiguousarray(state.interior, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(body)


def read_snapshot(path) -> tuple[FieldState, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise SnapshotError(f"{path}: not a snapshot file")
    rest = raw[len(MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    extent = tuple(header["extent"])
    nf = len(header["fields"])
    expected = nf * int(np.prod(extent)) * 8
    body = rest[nl + 1:]
    if len(body) != expected:
        raise SnapshotError(f"{path}: expected {expected} data bytes, found {len(body)}")
    interior = np.frombuffer(body, dtype="<f8").reshape((nf, *extent)).astype(np.float64)
    state = FieldState.from_interior(interior, header["radius"], tuple(header["spacing"]))
    return state, header
