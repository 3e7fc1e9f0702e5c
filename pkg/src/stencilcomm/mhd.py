"""Non-ideal MHD in non-conservative form with low-storage RK3 time stepping.

The solved fields are log density, velocity, specific entropy and the
magnetic vector potential.  ``B = curl A`` and ``mu0 j = grad(div A) - lap A``,
so the current needs only second derivatives of ``A`` and one halo exchange
per substep suffices.

Temperature follows an ideal-gas law,
``ln T = ln T0 + gamma s / cp + (gamma - 1) (ln rho - ln rho0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import stencil as fd
from .stencil import HaloError, Region, Stencil, computational_region

FIELD_NAMES = ("lnrho", "ux", "uy", "uz", "ss", "ax", "ay", "az")
NUM_FIELDS = len(FIELD_NAMES)

# 2N-storage third-order Runge-Kutta coefficients
RK3_ALPHA = (0.0, -5.0 / 9.0, -153.0 / 128.0)
RK3_BETA = (1.0 / 3.0, 15.0 / 16.0, 8.0 / 15.0)

# Benchmark timestep used for the verification runs.
BENCHMARK_DT = 1.19209e-7


class NonFiniteError(FloatingPointError):
    """A term of the equations or an RK substep produced inf or NaN."""


@dataclass
class FieldState:
    """All solved fields on one halo-inclusive subgrid.

    ``data`` has shape ``(8, mx, my, mz)`` in :data:`FIELD_NAMES` order.
    """

    data: np.ndarray
    radius: int
    spacing: tuple[float, float, float] = (2 * math.pi / 32,) * 3

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ValueError(f"field data must be (fields, x, y, z), got shape {self.data.shape}")
        if any(m < 2 * self.radius + 1 for m in self.data.shape[1:]):
            raise ValueError(f"grid {self.data.shape[1:]} too small for radius {self.radius}")
        self.spacing = tuple(float(h) for h in self.spacing)

    @property
    def num_fields(self) -> int:
        return self.data.shape[0]

    @property
    def grid_extent(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    @property
    def extent(self) -> tuple[int, int, int]:
        """Computational extent (halo excluded)."""
        return tuple(m - 2 * self.radius for m in self.data.shape[1:])

    @property
    def region(self) -> Region:
        return computational_region(self.data.shape[1:], self.radius)

    @property
    def interior(self) -> np.ndarray:
        return self.data[(slice(None),) + self.region]

    @property
    def lnrho(self) -> np.ndarray:
        return self.data[0]

    @property
    def u(self) -> np.ndarray:
        return self.data[1:4]

    @property
    def ss(self) -> np.ndarray:
        return self.data[4]

    @property
    def aa(self) -> np.ndarray:
        return self.data[5:8]

    def lattice(self, name: str) -> fd.ScalarLattice:
        return fd.ScalarLattice(self.data[FIELD_NAMES.index(name)], self.radius, self.spacing)

    def copy(self) -> "FieldState":
        return FieldState(self.data.copy(), self.radius, self.spacing)

    def fill_periodic_halo(self) -> "FieldState":
        fd.fill_periodic_halo(self.data, self.radius)
        return self

    @classmethod
    def from_interior(cls, interior: np.ndarray, radius: int, spacing=None, periodic_fill: bool = False):
        nf = interior.shape[0]
        shape = (nf,) + tuple(n + 2 * radius for n in interior.shape[1:])
        data = np.full(shape, np.nan)
        data[(slice(None),) + computational_region(shape[1:], radius)] = interior
        state = cls(data, radius, spacing if spacing is not None else default_spacing(interior.shape[1:]))
        if periodic_fill:
            state.fill_periodic_halo()
        return state

    @classmethod
    def random(cls, n: Sequence[int], radius: int, seed: int = 0, spacing=None, num_fields: int = NUM_FIELDS):
        """Uniform [0, 1) values from a seeded PCG64 stream, filled field by field in row-major order."""
        rng = np.random.Generator(np.random.PCG64(seed))
        interior = rng.random((num_fields, *n))
        return cls.from_interior(interior, radius, spacing)

    @classmethod
    def uniform(cls, n: Sequence[int], radius: int, values: Sequence[float], spacing=None):
        interior = np.empty((len(values), *n))
        for k, v in enumerate(values):
            interior[k] = v
        return cls.from_interior(interior, radius, spacing, periodic_fill=True)


def default_spacing(n: Sequence[int]) -> tuple[float, ...]:
    """Uniform spacing of a periodic box 2 pi on a side."""
    return tuple(2 * math.pi / ni for ni in n)


@dataclass(frozen=True)
class MhdParams:
    """Physical parameters.  Defaults are illustrative, not taken from any benchmark."""

    nu: float = 5e-3
    zeta: float = 1e-2
    eta: float = 5e-3
    cs: float = 1.0
    cp: float = 1.0
    cv: float = 0.6
    gamma: float = 5.0 / 3.0
    mu0: float = 1.0
    K: float = 1e-3
    heating: float = 0.0
    cooling: float = 0.0
    T0: float = 1.0
    rho0: float = 1.0
    isothermal: bool = False

    def __post_init__(self):
        if min(self.nu, self.zeta, self.eta, self.K) < 0:
            raise ValueError("diffusivities must be non-negative")
        if self.cs <= 0 or self.gamma <= 1 or self.mu0 <= 0 or self.cp <= 0 or self.T0 <= 0 or self.rho0 <= 0:
            raise ValueError(f"invalid physical parameters {self}")


def _grow(region: Region, r: int, shape: Sequence[int], axes: Sequence[int]) -> Region:
    out = list(region)
    for a in axes:
        s = region[a]
        out[a] = slice(max(s.start - r, 0), min(s.stop + r, shape[a]))
    return tuple(out)


def check_footprint(data: np.ndarray, region: Region, r: int) -> None:
    """Raise if any cell a stencil at ``region`` would read is not finite.

    The footprint is the region grown by ``r`` along every pair of axes; 3D
    corner halos are never read and are not checked.
    """
    shape = data.shape[1:]
    for a in range(3):
        if region[a].start - r < 0 or region[a].stop + r > shape[a]:
            raise HaloError(f"region needs {r} halo cells on axis {a}, grid extent is {shape[a]}")
    for axes in ((0, 1), (0, 2), (1, 2)):
        box = (slice(None),) + _grow(region, r, shape, axes)
        if not np.isfinite(data[box]).all():
            bad = np.argwhere(~np.isfinite(data[box]))[0]
            raise HaloError(
                f"non-finite value in stencil footprint (unpopulated halo?) at field "
                f"{FIELD_NAMES[bad[0]] if bad[0] < NUM_FIELDS else bad[0]}"
            )


def _finite(term: str, *arrays) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NonFiniteError(f"non-finite values in {term}")


def _cross(a, b):
    return [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]


def temperature_of(state: FieldState, params: MhdParams) -> fd.ScalarLattice:
    if params.isothermal:
        raise ValueError("temperature is undefined in isothermal mode")
    with np.errstate(invalid="ignore"):
        t = _temperature(state.lnrho, state.ss, params)
    return fd.ScalarLattice(t, state.radius, state.spacing)


def _temperature(lnrho: np.ndarray, ss: np.ndarray, params: MhdParams) -> np.ndarray:
    ln_t = (
        math.log(params.T0)
        + params.gamma * ss * (1.0 / params.cp)
        + (params.gamma - 1.0) * (lnrho - math.log(params.rho0))
    )
    return np.exp(ln_t)


def mhd_rhs(
    state: FieldState,
    params: MhdParams,
    st: Stencil | None = None,
    region: Region | None = None,
    check: bool = True,
) -> np.ndarray:
    """Time derivatives of all eight fields on ``region`` (default: computational domain).

    Returns an array of shape ``(8, *region_shape)``.
    """
    st = st or Stencil(2 * state.radius, state.spacing)
    r = st.radius
    region = state.region if region is None else region
    data = state.data
    if check:
        check_footprint(data, region, r)
    lnrho, u, ss, aa = data[0], data[1:4], data[4], data[5:8]
    uc = [u[i][region] for i in range(3)]

    # continuity
    g_lnrho = fd.gradient(lnrho, st, region)
    grad_u = fd.velocity_gradient(u, st, region)
    div_u = grad_u[0][0] + grad_u[1][1] + grad_u[2][2]
    d_lnrho = -(uc[0] * g_lnrho[0] + uc[1] * g_lnrho[1] + uc[2] * g_lnrho[2]) - div_u
    if check:
        _finite("continuity", d_lnrho)

    # magnetic field and current
    bb = fd.curl(aa, st, region)
    lap_a = fd.vector_laplacian(aa, st, region)
    gd_a = fd.grad_div(aa, st, region)
    inv_mu0 = 1.0 / params.mu0
    jj = [(gd_a[i] - lap_a[i]) * inv_mu0 for i in range(3)]

    # induction
    uxb = _cross(uc, bb)
    d_aa = [uxb[i] + params.eta * lap_a[i] for i in range(3)]
    if check:
        _finite("induction", *d_aa)

    # momentum
    rho = np.exp(lnrho[region])
    inv_rho = 1.0 / rho
    advection = [uc[0] * grad_u[i][0] + uc[1] * grad_u[i][1] + uc[2] * grad_u[i][2] for i in range(3)]
    cs2 = params.cs * params.cs
    if params.isothermal:
        pressure = [-cs2 * g_lnrho[i] for i in range(3)]
    else:
        g_ss = fd.gradient(ss, st, region)
        inv_cp = 1.0 / params.cp
        pressure = [-cs2 * (g_ss[i] * inv_cp + g_lnrho[i]) for i in range(3)]
    jxb = _cross(jj, bb)
    lorentz = [jxb[i] * inv_rho for i in range(3)]
    sij = fd.traceless_rate_of_shear(u, st, region, grad=grad_u)
    lap_u = fd.vector_laplacian(u, st, region)
    gd_u = fd.grad_div(u, st, region)
    s_glnrho = [sij[i][0] * g_lnrho[0] + sij[i][1] * g_lnrho[1] + sij[i][2] * g_lnrho[2] for i in range(3)]
    viscous = [
        params.nu * (lap_u[i] + (1.0 / 3.0) * gd_u[i] + 2.0 * s_glnrho[i]) + params.zeta * gd_u[i]
        for i in range(3)
    ]
    if check:
        _finite("momentum advection", *advection)
        _finite("momentum pressure gradient", *pressure)
        _finite("momentum Lorentz force", *lorentz)
        _finite("momentum viscous force", *viscous)
    d_u = [-advection[i] + pressure[i] + lorentz[i] + viscous[i] for i in range(3)]

    # entropy
    if params.isothermal:
        d_ss = np.zeros_like(d_lnrho)
    else:
        box = _grow(region, r, data.shape[1:], (0, 1, 2))
        with np.errstate(invalid="ignore", over="ignore"):
            temp = _temperature(lnrho[box], ss[box], params)
        local = tuple(slice(s.start - b.start, s.stop - b.start) for s, b in zip(region, box))
        lap_t = fd.laplacian(temp, st, local)
        t_c = temp[local]
        j2 = jj[0] * jj[0] + jj[1] * jj[1] + jj[2] * jj[2]
        s2 = sum(sij[i][k] * sij[i][k] for i in range(3) for k in range(3))
        heat = (
            (params.heating - params.cooling)
            + params.K * lap_t
            + params.eta * params.mu0 * j2
            + 2.0 * rho * params.nu * s2
            + params.zeta * rho * div_u * div_u
        )
        adv_s = uc[0] * g_ss[0] + uc[1] * g_ss[1] + uc[2] * g_ss[2]
        d_ss = -adv_s + heat / (rho * t_c)
        if check:
            _finite("entropy heating", heat)
            _finite("entropy", d_ss)

    return np.stack([d_lnrho, *d_u, d_ss, *d_aa])


RhsProvider = Callable[[FieldState, Region], np.ndarray]


def mhd_rhs_provider(params: MhdParams, order: int | None = None) -> RhsProvider:
    cache: dict = {}

    def rhs(state: FieldState, region: Region) -> np.ndarray:
        key = (order or 2 * state.radius, state.spacing)
        st = cache.get(key)
        if st is None:
            st = cache[key] = Stencil(key[0], state.spacing)
        return mhd_rhs(state, params, st, region)

    return rhs


def rk3_substep(f: np.ndarray, w: np.ndarray, rhs: np.ndarray, substep: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One 2N-storage substep on matching blocks: returns ``(f_new, w_new)``.

    Every caller (serial or distributed) goes through here, so all paths apply
    the identical floating-point sequence per cell.
    """
    w_new = RK3_ALPHA[substep] * w + dt * rhs
    f_new = f + RK3_BETA[substep] * w_new
    return f_new, w_new


def rk3_step(
    state: FieldState,
    dt: float,
    params: MhdParams | None = None,
    rhs_provider: RhsProvider | None = None,
    halo_fill: Callable[[FieldState], None] | None = None,
) -> FieldState:
    """Advance one full step (three substeps) on a single periodic grid.

    ``halo_fill`` refreshes the halo before each substep; the default is a
    periodic wrap.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if rhs_provider is None:
        rhs_provider = mhd_rhs_provider(params or MhdParams())
    fill = halo_fill or (lambda s: s.fill_periodic_halo())
    out = state.copy()
    region = (slice(None),) + out.region
    w = np.zeros_like(out.data[region])
    for i in range(3):
        fill(out)
        rhs = rhs_provider(out, out.region)
        f_new, w = rk3_substep(out.data[region], w, rhs, i, dt)
        if not np.isfinite(f_new).all():
            raise NonFiniteError(f"non-finite state after RK3 substep {i + 1}")
        out.data[region] = f_new
    return out


def integrate(state: FieldState, dt: float, steps: int, params: MhdParams | None = None, **kw) -> FieldState:
    for _ in range(steps):
        state = rk3_step(state, dt, params, **kw)
    return state

