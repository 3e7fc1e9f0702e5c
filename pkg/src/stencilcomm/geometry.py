"""Extents, grids, subdomains and halo segments.

Local grids use halo-inclusive, row-major coordinates with the origin at the
grid corner.  The computational domain of a subgrid spans ``[r, r + n_i)`` on
every axis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence


class DecompositionError(ValueError):
    """A decomposition does not split the grid into equal integer subdomains."""


class Extent(tuple):
    """A d-tuple of positive cell counts.

    Behaves exactly like a tuple of ints (comparisons, indexing, hashing) but
    validates its components on construction.
    """

    def __new__(cls, dims: Iterable[int]):
        dims = tuple(int(d) for d in dims)
        if not dims:
            raise ValueError("an extent needs at least one axis")
        if any(d < 1 for d in dims):
            raise ValueError(f"extent components must be >= 1, got {dims}")
        return super().__new__(cls, dims)

    @property
    def ndim(self) -> int:
        return len(self)

    def __repr__(self) -> str:
        return f"Extent{tuple(self)}"


def cell_count(e: Sequence[int]) -> int:
    return math.prod(int(x) for x in e)


def grid_of(n: Sequence[int], r: int) -> Extent:
    """Grow a computational domain by a halo of ``r`` cells on every side."""
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {r}")
    return Extent(ni + 2 * r for ni in n)


def subdomain_of(n: Sequence[int], p: Sequence[int]) -> Extent:
    if len(n) != len(p):
        raise DecompositionError(f"dimension mismatch between {tuple(n)} and {tuple(p)}")
    for ni, pi in zip(n, p):
        if pi < 1 or ni % pi:
            raise DecompositionError(
                f"decomposition {tuple(p)} does not divide grid {tuple(n)} evenly"
            )
    return Extent(ni // pi for ni, pi in zip(n, p))


@dataclass(frozen=True)
class GridSpec:
    domain: Extent
    radius: int

    def __post_init__(self):
        object.__setattr__(self, "domain", Extent(self.domain))
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")

    @property
    def grid(self) -> Extent:
        return grid_of(self.domain, self.radius)


class SegmentKind(str, Enum):
    SIDE = "side"
    EDGE = "edge"
    CORNER = "corner"


_KIND_BY_ORDER = {1: SegmentKind.SIDE, 2: SegmentKind.EDGE, 3: SegmentKind.CORNER}


@dataclass(frozen=True)
class HaloSegment:
    """One halo piece of a 3D subgrid.

    ``neighbor_offset`` points at the device whose computational cells fill
    this segment.
    """

    kind: SegmentKind
    first: tuple[int, ...]
    extent: Extent
    neighbor_offset: tuple[int, ...]
    tag: int

    @property
    def cells(self) -> int:
        return cell_count(self.extent)

    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(f, f + e) for f, e in zip(self.first, self.extent))


def linear_index(index: Sequence[int], shape: Sequence[int]) -> int:
    """Row-major linearization (last axis fastest)."""
    out = 0
    for i, m in zip(index, shape):
        out = out * m + i
    return out


def segment_tag(first: Sequence[int], n_local: Sequence[int], r: int) -> tuple[tuple[int, ...], int]:
    """Map a halo segment's first index onto the sender's computational domain.

    Returns ``(mapped_first, tag)``.  The mapped index locates the cells that
    the neighbor packs for this segment; the tag is the row-major position of
    ``first`` within the local grid.
    """
    if len(first) != len(n_local):
        raise ValueError("index and extent dimension mismatch")
    m = grid_of(n_local, r)
    for s, mi in zip(first, m):
        if not 0 <= s < mi:
            raise IndexError(f"segment index {tuple(first)} outside local grid {tuple(m)}")
    mapped = tuple(((s - r) % ni) + r for s, ni in zip(first, n_local))
    return mapped, linear_index(first, m)


def _segment_order(offset: tuple[int, ...]) -> int:
    return sum(1 for o in offset if o)


def enumerate_halo_segments(
    n_local: Sequence[int], r: int, include_corners: bool = True
) -> list[HaloSegment]:
    """All halo segments of a 3D subgrid in a fixed order.

    Sides come first, then edges, then corners; within a class the segments
    are sorted by neighbor offset.
    """
    n_local = Extent(n_local)
    if n_local.ndim != 3:
        raise NotImplementedError(f"halo segments are only defined for 3D grids, got d={n_local.ndim}")
    if r < 1:
        raise ValueError(f"halo segments need radius >= 1, got {r}")

    offsets = [o for o in itertools.product((-1, 0, 1), repeat=3) if any(o)]
    offsets.sort(key=lambda o: (_segment_order(o), o))

    segments = []
    for off in offsets:
        kind = _KIND_BY_ORDER[_segment_order(off)]
        if kind is SegmentKind.CORNER and not include_corners:
            continue
        first, ext = [], []
        for o, ni in zip(off, n_local):
            if o < 0:
                first.append(0)
                ext.append(r)
            elif o > 0:
                first.append(r + ni)
                ext.append(r)
            else:
                first.append(r)
                ext.append(ni)
        _, tag = segment_tag(first, n_local, r)
        segments.append(HaloSegment(kind, tuple(first), Extent(ext), off, tag))
    return segments


def computational_slices(n_local: Sequence[int], r: int) -> tuple[slice, ...]:
    return tuple(slice(r, r + ni) for ni in n_local)
