"""Central finite differences of order 2, 4, 6 and 8 on 3D lattices.

Operators evaluate on a *region*: a tuple of slices into the halo-inclusive
array.  The region must keep ``r`` cells of clearance from the array edges.
Every cell is computed with the same sequence of floating-point operations
whatever the region, so splitting a domain into pieces reproduces the
undivided result bit for bit.

Mixed second derivatives sample only the in-plane diagonals
``z(x +/- y)``, so no operator ever reads a 3D corner of the halo.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

SUPPORTED_ORDERS = (2, 4, 6, 8)

Region = tuple[slice, ...]


class Derivative(str, Enum):
    FIRST = "first"
    SECOND = "second"


class HaloError(ValueError):
    """A stencil would read outside the populated grid."""


def _check_order(order: int) -> int:
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported stencil order {order}; expected one of {SUPPORTED_ORDERS}")
    return order // 2


def stencil_points(order: int) -> frozenset[tuple[int, int, int]]:
    """Offsets ``z(x +/- y)`` for ``x, y`` in the unit axes or zero and ``|z| <= r``."""
    r = _check_order(order)
    basis = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)]
    pts = set()
    for x, y in itertools.combinations(basis, 2):
        for sign in (1, -1):
            v = tuple(a + sign * b for a, b in zip(x, y))
            for z in range(-r, r + 1):
                pts.add(tuple(z * c for c in v))
    return frozenset(pts)


def chebyshev_radius(points) -> int:
    return max(max(abs(c) for c in p) for p in points)


@lru_cache(maxsize=None)
def fd_weights_exact(order: int, derivative: str) -> tuple[Fraction, ...]:
    """Exact central weights for unit spacing, offsets ``-r..r``.

    Solves the moment conditions ``sum_j w_j j^k = m! [k == m]`` for
    ``k = 0..2r`` by Gaussian elimination over the rationals.
    """
    r = _check_order(order)
    m = 1 if Derivative(derivative) is Derivative.FIRST else 2
    offsets = range(-r, r + 1)
    size = 2 * r + 1
    rows = [[Fraction(j) ** k for j in offsets] + [Fraction(math.factorial(m) if k == m else 0)]
            for k in range(size)]
    for col in range(size):
        piv = next(i for i in range(col, size) if rows[i][col] != 0)
        rows[col], rows[piv] = rows[piv], rows[col]
        p = rows[col][col]
        rows[col] = [v / p for v in rows[col]]
        for i in range(size):
            if i != col and rows[i][col] != 0:
                f = rows[i][col]
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[col])]
    return tuple(rows[i][size] for i in range(size))


def fd_coefficients(order: int, derivative: Derivative | str = Derivative.FIRST) -> tuple[float, ...]:
    return tuple(float(w) for w in fd_weights_exact(order, Derivative(derivative).value))


def _shift(region: Region, axis: int, k: int) -> Region:
    s = list(region)
    s[axis] = slice(s[axis].start + k, s[axis].stop + k)
    return tuple(s)


def _shift2(region: Region, a: int, ka: int, b: int, kb: int) -> Region:
    return _shift(_shift(region, a, ka), b, kb)


@dataclass(frozen=True)
class Stencil:
    """Derivative operators of one order on a uniform grid."""

    order: int = 6
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    _c1: tuple[float, ...] = field(init=False, repr=False)
    _c2: tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self):
        _check_order(self.order)
        if len(self.spacing) != 3 or any(h <= 0 for h in self.spacing):
            raise ValueError(f"spacing must be three positive numbers, got {self.spacing}")
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        object.__setattr__(self, "_c1", fd_coefficients(self.order, Derivative.FIRST))
        object.__setattr__(self, "_c2", fd_coefficients(self.order, Derivative.SECOND))

    @property
    def radius(self) -> int:
        return self.order // 2

    def check(self, a: np.ndarray, region: Region, axes: Sequence[int]) -> None:
        r = self.radius
        for ax in axes:
            s = region[ax]
            if s.start - r < 0 or s.stop + r > a.shape[ax]:
                raise HaloError(
                    f"region {s.start}:{s.stop} on axis {ax} needs {r} halo cells within extent {a.shape[ax]}"
                )

    def d1(self, a: np.ndarray, axis: int, region: Region) -> np.ndarray:
        self.check(a, region, (axis,))
        r, c = self.radius, self._c1
        acc = c[r + 1] * (a[_shift(region, axis, 1)] - a[_shift(region, axis, -1)])
        for z in range(2, r + 1):
            acc = acc + c[r + z] * (a[_shift(region, axis, z)] - a[_shift(region, axis, -z)])
        return acc * (1.0 / self.spacing[axis])

    def d2(self, a: np.ndarray, axis: int, region: Region) -> np.ndarray:
        self.check(a, region, (axis,))
        r, c = self.radius, self._c2
        # weights sum to zero, so differencing against the centre keeps constants exact
        centre = a[region]
        acc = c[r + 1] * ((a[_shift(region, axis, 1)] - centre) + (a[_shift(region, axis, -1)] - centre))
        for z in range(2, r + 1):
            acc = acc + c[r + z] * ((a[_shift(region, axis, z)] - centre) + (a[_shift(region, axis, -z)] - centre))
        return acc * (1.0 / (self.spacing[axis] * self.spacing[axis]))

    def dmix(self, a: np.ndarray, i: int, j: int, region: Region) -> np.ndarray:
        """Cross derivative from the difference of second derivatives along both diagonals."""
        if i == j:
            return self.d2(a, i, region)
        if i > j:
            i, j = j, i
        self.check(a, region, (i, j))
        r, c = self.radius, self._c2
        acc = None
        for z in range(1, r + 1):
            same = a[_shift2(region, i, z, j, z)] + a[_shift2(region, i, -z, j, -z)]
            cross = a[_shift2(region, i, z, j, -z)] + a[_shift2(region, i, -z, j, z)]
            term = c[r + z] * (same - cross)
            acc = term if acc is None else acc + term
        return acc * (1.0 / (4.0 * self.spacing[i] * self.spacing[j]))


def computational_region(shape: Sequence[int], r: int) -> Region:
    return tuple(slice(r, m - r) for m in shape)


def fill_periodic_halo(a: np.ndarray, r: int, axes: Sequence[int] | None = None) -> np.ndarray:
    """Fill the outer ``r`` layers of the trailing three axes by periodic wrap, in place.

    Axes are filled one after another so edges and corners come out right.
    """
    if r == 0:
        return a
    lead = a.ndim - 3
    for ax in (range(3) if axes is None else axes):
        full = lead + ax
        n = a.shape[full] - 2 * r
        if n < r:
            raise HaloError(f"axis {ax} has {n} interior cells, fewer than the radius {r}")
        idx = [slice(None)] * a.ndim
        src = list(idx)
        idx[full], src[full] = slice(0, r), slice(n, n + r)
        a[tuple(idx)] = a[tuple(src)]
        idx[full], src[full] = slice(n + r, n + 2 * r), slice(r, 2 * r)
        a[tuple(idx)] = a[tuple(src)]
    return a


@dataclass
class ScalarLattice:
    """One scalar field on a halo-inclusive 3D grid."""

    values: np.ndarray
    radius: int
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError("a scalar lattice is three dimensional")
        if any(m < 2 * self.radius + 1 for m in self.values.shape):
            raise ValueError(f"extent {self.values.shape} too small for radius {self.radius}")

    @property
    def extent(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def region(self) -> Region:
        return computational_region(self.values.shape, self.radius)

    @property
    def interior(self) -> np.ndarray:
        return self.values[self.region]

    @classmethod
    def from_interior(cls, interior: np.ndarray, radius: int, spacing=(1.0, 1.0, 1.0), periodic: bool = True):
        vals = np.full(tuple(n + 2 * radius for n in interior.shape), np.nan)
        vals[computational_region(vals.shape, radius)] = interior
        if periodic:
            fill_periodic_halo(vals, radius)
        return cls(vals, radius, tuple(spacing))


def apply_derivative(
    f: ScalarLattice, axis: int, order: int, derivative: Derivative | str = Derivative.FIRST
) -> np.ndarray:
    st = Stencil(order, f.spacing)
    if Derivative(derivative) is Derivative.FIRST:
        return st.d1(f.values, axis, f.region)
    return st.d2(f.values, axis, f.region)


# vector calculus on 3-component sequences of arrays; outputs live on `region`

def gradient(f: np.ndarray, st: Stencil, region: Region) -> list[np.ndarray]:
    return [st.d1(f, a, region) for a in range(3)]


def divergence(u: Sequence[np.ndarray], st: Stencil, region: Region) -> np.ndarray:
    return st.d1(u[0], 0, region) + st.d1(u[1], 1, region) + st.d1(u[2], 2, region)


def curl(u: Sequence[np.ndarray], st: Stencil, region: Region) -> list[np.ndarray]:
    return [
        st.d1(u[2], 1, region) - st.d1(u[1], 2, region),
        st.d1(u[0], 2, region) - st.d1(u[2], 0, region),
        st.d1(u[1], 0, region) - st.d1(u[0], 1, region),
    ]


def laplacian(f: np.ndarray, st: Stencil, region: Region) -> np.ndarray:
    return st.d2(f, 0, region) + st.d2(f, 1, region) + st.d2(f, 2, region)


def vector_laplacian(u: Sequence[np.ndarray], st: Stencil, region: Region) -> list[np.ndarray]:
    return [laplacian(c, st, region) for c in u]


def grad_div(u: Sequence[np.ndarray], st: Stencil, region: Region) -> list[np.ndarray]:
    """``grad(div u)`` from second and cross derivatives, without an intermediate halo."""
    return [
        st.dmix(u[0], i, 0, region) + st.dmix(u[1], i, 1, region) + st.dmix(u[2], i, 2, region)
        for i in range(3)
    ]


def velocity_gradient(u: Sequence[np.ndarray], st: Stencil, region: Region) -> list[list[np.ndarray]]:
    """``G[i][j] = d u_i / d x_j``."""
    return [[st.d1(u[i], j, region) for j in range(3)] for i in range(3)]


def traceless_rate_of_shear(u: Sequence[np.ndarray], st: Stencil, region: Region, grad=None) -> list[list[np.ndarray]]:
    """``S_ij = (d_j u_i + d_i u_j) / 2 - delta_ij div(u) / 3``."""
    g = velocity_gradient(u, st, region) if grad is None else grad
    div = g[0][0] + g[1][1] + g[2][2]
    s = [[None] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(3):
            if j < i:
                s[i][j] = s[j][i]
            elif i == j:
                s[i][j] = g[i][i] - (1.0 / 3.0) * div
            else:
                s[i][j] = 0.5 * (g[i][j] + g[j][i])
    return s
