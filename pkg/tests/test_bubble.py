import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridqmom.bubble import (
    BubbleState,
    PhysParams,
    SteppersConfig,
    integrate_rk3,
    rk3_adaptive,
    rk4_step,
    rp_rhs,
)
from hybridqmom.errors import DomainError, IntegrationError
from hybridqmom.forcing import ForcingSignal


def test_time_scale_is_one_natural_period():
    p = PhysParams()
    assert math.isclose(p.time_scale * p.omega0, 2 * math.pi)
    assert math.isclose(p.time_scale, 3.0659, rel_tol=1e-4)


@given(st.floats(1.0, 1e7), st.floats(1.0, 3.0))
def test_equilibrium_is_exact(Re, gamma):
    dR, dV = rp_rhs(1.0, 0.0, 1.0, PhysParams(Re=Re, gamma=gamma))
    assert dR == 0.0 and dV == 0.0


def test_unscaled_values():
    p = PhysParams()
    assert rp_rhs(1.0, 0.0, 2.0, p, scaled=False)[1] == -1.0
    # (2^-4.2 - 1)/2, Re -> infinity
    _, dV = rp_rhs(2.0, 0.0, 1.0, PhysParams(Re=1e300), scaled=False)
    assert math.isclose(dV, (2 ** -4.2 - 1) / 2, rel_tol=1e-14)
    # quoted elsewhere as -0.47281; the exact value is -0.4727953
    assert math.isclose(dV, -0.4727953, abs_tol=1e-7)


def test_scaled_is_time_scale_times_unscaled():
    p = PhysParams()
    a = rp_rhs(1.1, 0.3, 0.9, p, scaled=False)
    b = rp_rhs(1.1, 0.3, 0.9, p)
    assert np.allclose(np.array(b), p.time_scale * np.array(a), rtol=1e-15)


@given(st.floats(0.3, 3.0), st.floats(0.4, 1.6))
def test_sign_structure(R, cp):
    _, dV = rp_rhs(R, 0.0, cp, PhysParams(), scaled=False)
    expected = R ** (-4.2) - cp
    assert np.sign(dV) == np.sign(expected) or abs(expected) < 1e-14


def test_inverse_pressure_convention():
    p = PhysParams(pressure_convention="inverse")
    assert rp_rhs(1.0, 0.0, 2.0, p, scaled=False)[1] == pytest.approx(1.0 - 0.5)
    with pytest.raises(ValueError):
        PhysParams(pressure_convention="x")


def test_domain_errors():
    with pytest.raises(DomainError):
        rp_rhs(0.0, 0.0, 1.0, PhysParams())
    with pytest.raises(DomainError):
        BubbleState(-1.0, 0.0)


def test_equilibrium_trajectory():
    t = np.arange(0, 5001) * 0.01
    R, V = rk3_adaptive(BubbleState(1.0, 0.0), ForcingSignal.constant(1.0), t)
    assert np.max(np.abs(R - 1.0)) < 1e-10
    assert np.max(np.abs(V)) < 1e-10


def _zero_crossings(t, x):
    s = np.flatnonzero((x[:-1] < 0) & (x[1:] >= 0))
    return t[s] - x[s] * (t[s + 1] - t[s]) / (x[s + 1] - x[s])


def test_natural_period_is_one_time_unit():
    t = np.arange(0, 2001) * 0.005
    R, _ = rk3_adaptive(BubbleState(1.001, 0.0), ForcingSignal.constant(1.0), t, params=PhysParams(Re=1e6))
    up = _zero_crossings(t, R - 1.0)
    period = np.mean(np.diff(up))
    assert abs(period - 1.0) < 0.01


def test_energy_decay():
    t = np.arange(0, 1001) * 0.01
    R, _ = rk3_adaptive(BubbleState(1.05, 0.0), ForcingSignal.constant(1.0), t, params=PhysParams(Re=100))
    amps = [np.max(np.abs(R[k:k + 100] - 1)) for k in range(0, 1000, 100)]
    assert all(b <= a + 1e-12 for a, b in zip(amps, amps[1:]))


def test_tighter_tolerance_never_worse():
    sig = ForcingSignal((0.3,), (0.15,), (0.2,))
    params = PhysParams()
    t = np.linspace(0, 3, 31)

    def fun(_t, y):
        return np.array(rp_rhs(y[0], y[1], sig(_t), params))

    # reference: fixed-step RK4 ten times finer than the smallest adaptive step used below
    h = 1e-4
    y = np.array([1.1, 0.0])
    ref = [y]
    tt = 0.0
    for k in range(1, len(t)):
        n = int(round((t[k] - t[k - 1]) / h))
        for _ in range(n):
            y = rk4_step(fun, tt, y, h)
            tt += h
        ref.append(y)
    ref = np.array(ref)
    errs = []
    for tol in (1e-5, 5e-6, 2.5e-6, 1.25e-6):
        ys, _ = integrate_rk3(fun, np.array([1.1, 0.0]), t, SteppersConfig(rel_tol=tol, abs_tol=tol))
        errs.append(np.max(np.abs(ys - ref)))
    assert all(b <= a * 1.05 for a, b in zip(errs, errs[1:]))


def test_step_underflow_reports_time_and_state():
    def fun(t, y):
        return np.array([1.0 / (1.0 - t)])  # blows up at t = 1

    with pytest.raises(IntegrationError) as info:
        integrate_rk3(fun, np.array([0.0]), np.array([0.0, 2.0]), SteppersConfig(dt_min=1e-6))
    assert info.value.t is not None and info.value.t < 1.0
    assert info.value.state is not None


def test_rk4_zero_rhs_and_exponential():
    y = np.array([1.0, -2.0])
    assert np.array_equal(rk4_step(lambda t, y: np.zeros_like(y), 0.0, y, 0.3), y)
    y1 = rk4_step(lambda t, y: y, 0.0, np.array([1.0]), 0.1)[0]
    assert math.isclose(y1, 1 + 0.1 + 0.1 ** 2 / 2 + 0.1 ** 3 / 6 + 0.1 ** 4 / 24, rel_tol=1e-15)
    assert abs(y1 - math.exp(0.1)) < 1e-7


def test_rk4_linear_system_is_truncated_exponential(rng):
    A = rng.normal(size=(4, 4))
    y = rng.normal(size=4)
    h = 0.07
    M = np.eye(4)
    term = np.eye(4)
    for k in range(1, 5):
        term = term @ (h * A) / k
        M = M + term
    assert np.allclose(rk4_step(lambda t, v: A @ v, 0.0, y, h), M @ y, rtol=1e-13, atol=1e-14)


def test_rk4_order():
    def solve(n):
        y = np.array([1.0])
        h = 1.0 / n
        for k in range(n):
            y = rk4_step(lambda t, v: np.cos(t) * v, k * h, y, h)
        return y[0]

    exact = math.exp(math.sin(1.0))
    e1, e2 = abs(solve(10) - exact), abs(solve(20) - exact)
    assert 3.8 <= math.log2(e1 / e2) <= 4.2
