import math

import numpy as np
import pytest

from stencilcomm.mhd import (
    BENCHMARK_DT,
    FIELD_NAMES,
    FieldState,
    MhdParams,
    NonFiniteError,
    RK3_ALPHA,
    RK3_BETA,
    default_spacing,
    integrate,
    mhd_rhs,
    rk3_step,
    temperature_of,
)
from stencilcomm.stencil import HaloError


def analytic_state(n, r, fields, spacing=None):
    """Fill every cell, halo included, from functions of physical position."""
    h = spacing or default_spacing(n)
    axes = [(np.arange(ni + 2 * r) - r) * hi for ni, hi in zip(n, h)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    data = np.zeros((8, *x.shape))
    for k, f in fields.items():
        data[FIELD_NAMES.index(k)] = f(x, y, z)
    return FieldState(data, r, h), (x, y, z)


def scalar_decay_rhs(state, region):
    return -state.data[(slice(None),) + region]


def test_rk3_coefficients_are_consistent():
    # the effective weights of the three stages sum to one
    a, b = RK3_ALPHA, RK3_BETA
    assert a[0] == 0
    assert sum(b) != 0
    dt_total = b[0] + b[1] * (a[1] + 1) + b[2] * (a[2] * (a[1] + 1) + 1)
    assert dt_total == pytest.approx(1.0)


@pytest.mark.parametrize("isothermal", [False, True])
def test_uniform_state_is_a_fixed_point(isothermal):
    state = FieldState.uniform((8, 8, 8), 3, [0.7, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0])
    rhs = mhd_rhs(state, MhdParams(isothermal=isothermal))
    assert rhs.shape == (8, 8, 8, 8)
    for k, name in enumerate(FIELD_NAMES):
        assert np.all(rhs[k] == 0.0), name


def test_uniform_flow_stays_uniform():
    params = MhdParams(nu=0, zeta=0, eta=0)
    state = FieldState.uniform((8, 8, 8), 3, [0.2, 0.5, -0.25, 1.0, 0.1, 0.0, 0.0, 0.0])
    out = rk3_step(state, 1e-3, params)
    for k in range(8):
        assert np.all(out.interior[k] == out.interior[k].flat[0])


def test_linear_vector_potential_has_no_diffusion():
    state, _ = analytic_state(
        (10, 10, 10), 3,
        {"ax": lambda x, y, z: 2 * y + z, "ay": lambda x, y, z: -x + 3 * z, "az": lambda x, y, z: 0.5 * x},
    )
    rhs = mhd_rhs(state, MhdParams(eta=0.7))
    assert np.max(np.abs(rhs[5:8])) < 1e-12


def test_induction_is_a_heat_equation_without_flow():
    eta = 0.05
    state, (x, y, z) = analytic_state((32, 8, 8), 3, {"az": lambda x, y, z: np.sin(2 * x)})
    rhs = mhd_rhs(state, MhdParams(eta=eta))
    want = -4 * eta * np.sin(2 * x[state.region])
    assert np.max(np.abs(rhs[7] - want)) < 1e-5
    assert np.max(np.abs(rhs[5:7])) == 0


def test_advection_of_log_density():
    u0 = (0.3, -0.2, 0.5)
    params = MhdParams(nu=0, zeta=0, eta=0, isothermal=True)
    c = math.pi

    def gauss(x, y, z):
        return np.exp(-((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2))

    state, (x, y, z) = analytic_state(
        (32, 32, 32), 3,
        {"lnrho": gauss, "ux": lambda *a: u0[0] + 0 * a[0], "uy": lambda *a: u0[1] + 0 * a[0],
         "uz": lambda *a: u0[2] + 0 * a[0]},
    )
    reg = state.region
    g = gauss(x, y, z)[reg]
    grad = [-2 * (x[reg] - c) * g, -2 * (y[reg] - c) * g, -2 * (z[reg] - c) * g]
    want = -(u0[0] * grad[0] + u0[1] * grad[1] + u0[2] * grad[2])
    rhs = mhd_rhs(state, params)
    assert np.max(np.abs(rhs[0] - want)) < 1e-3 * np.max(np.abs(want))


def test_temperature():
    p = MhdParams(T0=2.0, rho0=1.5)
    state = FieldState.uniform((4, 4, 4), 1, [math.log(1.5), 0, 0, 0, 0, 0, 0, 0])
    assert np.allclose(temperature_of(state, p).interior, 2.0)
    s, lnrho = 0.4, 0.9
    state = FieldState.uniform((4, 4, 4), 1, [lnrho, 0, 0, 0, s, 0, 0, 0])
    t = temperature_of(state, p).interior
    ln_t = math.log(2.0) + p.gamma * s / p.cp + (p.gamma - 1) * (lnrho - math.log(1.5))
    assert np.allclose(t, math.exp(ln_t), rtol=1e-14)
    assert np.all(t == t.flat[0])
    with pytest.raises(ValueError):
        temperature_of(state, MhdParams(isothermal=True))


def test_zero_rhs_leaves_state_unchanged():
    state = FieldState.random((8, 8, 8), 2, seed=3)
    out = rk3_step(state, 0.1, rhs_provider=lambda s, reg: np.zeros((8, *(x.stop - x.start for x in reg))))
    assert np.array_equal(out.interior, state.interior)


def rk3_error(dt, t_end=1.0):
    state = FieldState.uniform((4, 4, 4), 1, [1.0] * 8)
    out = integrate(state, dt, round(t_end / dt), rhs_provider=scalar_decay_rhs)
    return abs(out.interior[0, 0, 0, 0] - math.exp(-t_end))


def test_rk3_global_order():
    dts = [0.2 / 2**k for k in range(5)]
    errs = [rk3_error(dt) for dt in dts]
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert abs(slope - 3.0) <= 0.2


def test_benchmark_step_is_finite():
    state = FieldState.random((16, 16, 16), 3, seed=0)
    out = rk3_step(state, BENCHMARK_DT)
    assert np.isfinite(out.interior).all()
    assert not np.array_equal(out.interior, state.interior)
    # the input is untouched
    assert np.isnan(state.data[0, 0, 0, 0])


def test_missing_halo_is_detected():
    state = FieldState.random((8, 8, 8), 3, seed=1)
    with pytest.raises(HaloError):
        mhd_rhs(state, MhdParams())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_overflow_names_the_term():
    state = FieldState.uniform((8, 8, 8), 3, [0, 1e200, 0, 0, 0, 0, 0, 0])
    state.data[1, 5, 5, 5] = -1e200
    with pytest.raises(NonFiniteError, match="momentum"):
        mhd_rhs(state, MhdParams())


def test_invalid_params_and_dt():
    with pytest.raises(ValueError):
        MhdParams(nu=-1)
    with pytest.raises(ValueError):
        rk3_step(FieldState.random((4, 4, 4), 1).fill_periodic_halo(), 0.0)


def test_random_init_is_reproducible():
    a = FieldState.random((6, 6, 6), 1, seed=42)
    b = FieldState.random((6, 6, 6), 1, seed=42)
    assert np.array_equal(a.interior, b.interior)
    assert a.interior.min() >= 0 and a.interior.max() < 1
    want = np.random.Generator(np.random.PCG64(42)).random((8, 6, 6, 6))
    assert np.array_equal(a.interior, want)
