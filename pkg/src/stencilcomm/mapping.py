"""Rank-to-subdomain mappings: Z-order (Morton) and row-wise scan.

Morton decoding assigns the lowest interleaved bit to axis 0, so for a 3D
index ``abcdef`` (binary) the coordinate is ``(cf, be, ad)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .geometry import Extent, cell_count


class MappingScheme(str, Enum):
    ZORDER = "zorder"
    ROWWISE = "rowwise"


def morton_encode(coord: Sequence[int], bits: int = 21) -> int:
    d = len(coord)
    for c in coord:
        if not 0 <= c < (1 << bits):
            raise OverflowError(f"coordinate {tuple(coord)} does not fit in {bits} bits")
    index = 0
    for b in range(bits):
        for axis, c in enumerate(coord):
            index |= ((c >> b) & 1) << (b * d + axis)
    return index


def morton_decode(i: int, d: int = 3) -> tuple[int, ...]:
    if i < 0:
        raise ValueError(f"Morton index must be >= 0, got {i}")
    coord = [0] * d
    b = 0
    while i:
        for axis in range(d):
            coord[axis] |= (i & 1) << b
            i >>= 1
        b += 1
    return tuple(coord)


def morton_decode_array(indices, d: int = 3, bits: int = 21) -> np.ndarray:
    """Vectorized :func:`morton_decode`; returns an ``(len(indices), d)`` array."""
    idx = np.asarray(indices, dtype=np.uint64)
    out = np.zeros(idx.shape + (d,), dtype=np.uint64)
    one = np.uint64(1)
    for b in range(bits):
        for axis in range(d):
            bit = (idx >> np.uint64(b * d + axis)) & one
            out[..., axis] |= bit << np.uint64(b)
    return out


def morton_encode_array(coords, bits: int = 21) -> np.ndarray:
    c = np.asarray(coords, dtype=np.uint64)
    d = c.shape[-1]
    out = np.zeros(c.shape[:-1], dtype=np.uint64)
    one = np.uint64(1)
    for b in range(bits):
        for axis in range(d):
            out |= ((c[..., axis] >> np.uint64(b)) & one) << np.uint64(b * d + axis)
    return out


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


def morton_decode_grid(i: int, grid: Sequence[int]) -> tuple[int, ...]:
    """Morton decode onto a power-of-two cuboid.

    Axes whose extent has run out of bits drop out of the interleaving, which
    keeps the map a bijection onto non-cubic grids and reduces to
    :func:`morton_decode` on cubes.
    """
    coord = [0] * len(grid)
    b = 0
    while i:
        active = [a for a, g in enumerate(grid) if (1 << b) < g]
        if not active:
            raise ValueError("index exceeds grid size")
        for axis in active:
            coord[axis] |= (i & 1) << b
            i >>= 1
        b += 1
    return tuple(coord)


def partition_from_count(c: int, d: int = 3) -> Extent:
    """Device grid implied by a Morton decode of ``c - 1``.

    Only powers of two give a grid whose size is ``c``; anything else should
    go through :func:`stencilcomm.decomposition.optimize_decomposition`.
    """
    if c < 1:
        raise ValueError(f"count must be >= 1, got {c}")
    p = Extent(x + 1 for x in morton_decode(c - 1, d))
    if cell_count(p) != c:
        raise ValueError(
            f"Morton partition {tuple(p)} of {c} devices has {cell_count(p)} cells; "
            "use optimize_decomposition for non power-of-two counts"
        )
    return p


def _neighbor_offsets(d: int) -> list[tuple[int, ...]]:
    out = []
    for axis in range(d):
        for sign in (-1, 1):
            off = [0] * d
            off[axis] = sign
            out.append(tuple(off))
    return out


@dataclass(frozen=True)
class RankTopology:
    device_grid: Extent
    ranks_per_node: int
    scheme: MappingScheme
    rank_to_coord: tuple[tuple[int, ...], ...]
    coord_to_rank: dict = field(repr=False)

    @property
    def total_ranks(self) -> int:
        return len(self.rank_to_coord)

    def node_of(self, rank: int) -> int:
        return rank // self.ranks_per_node

    def neighbor(self, rank: int, offset: Sequence[int]) -> int:
        """Rank owning the subdomain at ``offset`` from ``rank`` (periodic wrap)."""
        c = self.rank_to_coord[rank]
        target = tuple((ci + oi) % g for ci, oi, g in zip(c, offset, self.device_grid))
        return self.coord_to_rank[target]


def build_topology(
    device_grid: Sequence[int], ranks_per_node: int, scheme: MappingScheme | str = MappingScheme.ZORDER
) -> RankTopology:
    grid = Extent(device_grid)
    scheme = MappingScheme(scheme)
    total = cell_count(grid)
    if ranks_per_node < 1 or total % ranks_per_node:
        raise ValueError(f"{total} ranks cannot be split into nodes of {ranks_per_node}")
    if scheme is MappingScheme.ZORDER:
        if not all(_is_pow2(g) for g in grid):
            raise ValueError(f"Z-order mapping needs power-of-two device grid extents, got {tuple(grid)}")
        coords = tuple(morton_decode_grid(k, grid) for k in range(total))
    else:
        coords = tuple(tuple(int(x) for x in np.unravel_index(k, grid)) for k in range(total))
    inverse = {c: k for k, c in enumerate(coords)}
    assert len(inverse) == total
    return RankTopology(grid, ranks_per_node, scheme, coords, inverse)


def inter_node_face_count(t: RankTopology, periodic: bool = True) -> list[int]:
    """Per rank, how many of its 2d face neighbors live on another node."""
    offsets = _neighbor_offsets(t.device_grid.ndim)
    counts = []
    for rank, c in enumerate(t.rank_to_coord):
        k = 0
        for off in offsets:
            target = [ci + oi for ci, oi in zip(c, off)]
            if not periodic and any(not 0 <= x < g for x, g in zip(target, t.device_grid)):
                continue
            if t.node_of(t.neighbor(rank, off)) != t.node_of(rank):
                k += 1
        counts.append(k)
    return counts


def node_block_shape(t: RankTopology, node: int = 0) -> tuple[int, ...]:
    """Bounding box of the subdomains a node owns."""
    members = [t.rank_to_coord[k] for k in range(t.total_ranks) if t.node_of(k) == node]
    return tuple(max(c[a] for c in members) - min(c[a] for c in members) + 1 for a in range(t.device_grid.ndim))


def write_topology_csv(t: RankTopology, fh, periodic: bool = True, comment: str | None = None) -> None:
    if comment:
        fh.write(f"# {comment}\n")
    faces = inter_node_face_count(t, periodic)
    w = csv.writer(fh, lineterminator="\n")
    axes = [f"c{a}" for a in range(t.device_grid.ndim)]
    w.writerow(["rank", *axes, "node", "inter_node_faces"])
    for rank, c in enumerate(t.rank_to_coord):
        w.writerow([rank, *c, t.node_of(rank), faces[rank]])


def locality_summary(t: RankTopology, periodic: bool = True) -> dict:
    faces = inter_node_face_count(t, periodic)
    return {
        "mean": float(np.mean(faces)),
        "min": min(faces),
        "max": max(faces),
        "values": sorted(set(faces)),
    }

