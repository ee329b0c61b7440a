"""Single-bubble Rayleigh-Plesset dynamics and the ODE steppers.

Public times are in natural oscillation periods.  The Rayleigh-Plesset
right-hand side is written in its usual dimensionless form (time unit
``sqrt(rho0/p0) R_o``) and multiplied by ``PhysParams.time_scale``, which is
one natural period in those units, ``2 pi / sqrt(3 gamma)``.  Radius and wall
velocity stay in Rayleigh-Plesset units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IntegrationError


@dataclass(frozen=True)
class PhysParams:
    Re: float = 1.0e3
    gamma: float = 1.4
    R_o: float = 1.0
    # "cp": driving term -Cp (as in the moment equations); "inverse": -1/Cp
    pressure_convention: str = "cp"

    def __post_init__(self):
        if not self.Re > 0:
            raise ValueError("Re must be positive")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.pressure_convention not in ("cp", "inverse"):
            raise ValueError(f"unknown pressure convention {self.pressure_convention!r}")

    @property
    def omega0(self):
        """Linear natural angular frequency in Rayleigh-Plesset time units."""
        return np.sqrt(3.0 * self.gamma)

    @property
    def time_scale(self):
        return 2.0 * np.pi / self.omega0

    def driving_pressure(self, cp):
        if self.pressure_convention == "inverse":
            return 1.0 / cp
        return cp


@dataclass(frozen=True)
class SteppersConfig:
    rel_tol: float = 1e-7
    dt_min: float = 1e-6
    dt_max: float = 0.05
    # absolute floor for components that pass through zero (wall velocity)
    abs_tol: float = 1e-7

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_max")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")


@dataclass(frozen=True)
class BubbleState:
    R: float
    Rdot: float

    def __post_init__(self):
        if not self.R > 0:
            raise DomainError(f"bubble radius must be positive, got {self.R}")


def rp_rhs(R, Rdot, cp, params, scaled=True):
    """Rayleigh-Plesset right-hand side ``(dR/dt, dRdot/dt)``.

    Works elementwise on arrays.  With ``scaled=False`` the rates are per
    Rayleigh-Plesset time unit; otherwise per natural period.
    """
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise DomainError("Rayleigh-Plesset right-hand side needs R > 0")
    p = params.driving_pressure(cp)
    accel = (
        R ** (-3.0 * params.gamma) - p - 1.5 * Rdot * Rdot - (4.0 / params.Re) * Rdot / R
    ) / R
    vel = np.asarray(Rdot, dtype=float)
    if scaled:
        ts = params.time_scale
        return vel * ts, accel * ts
    return vel * 1.0, accel


# Bogacki-Shampine 3(2) pair
_BS_C = (0.0, 0.5, 0.75, 1.0)
_BS_B = (2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0)
_BS_E = (-5.0 / 72.0, 1.0 / 12.0, 1.0 / 9.0, -1.0 / 8.0)


def integrate_rk3(fun, y0, t_out, cfg=SteppersConfig()):
    """Adaptive Bogacki-Shampine integration of ``y' = fun(t, y)``.

    Steps are clipped so every time in ``t_out`` is hit exactly; the state is
    recorded there.  Local error is controlled per component against
    ``rel_tol * max(|y|, |y_new|) + abs_tol``.

    Returns ``(ys, n_steps)`` with ``ys.shape == (len(t_out),) + y0.shape``.
    """
    t_out = np.asarray(t_out, dtype=float)
    if t_out.size == 0:
        raise ValueError("empty output grid")
    if np.any(np.diff(t_out) <= 0):
        raise ValueError("output times must be strictly increasing")
    y = np.array(y0, dtype=float)
    ys = np.empty((t_out.size,) + y.shape)
    ys[0] = y
    t = t_out[0]
    h = min(cfg.dt_max, max(cfg.dt_min, 1e-3))
    k1 = fun(t, y)
    n_steps = 0
    safety, grow, shrink = 0.9, 5.0, 0.2

    for idx in range(1, t_out.size):
        t_target = t_out[idx]
        while t < t_target:
            remaining = t_target - t
            last = h >= remaining
            step = remaining if last else h
            k2 = fun(t + _BS_C[1] * step, y + _BS_C[1] * step * k1)
            k3 = fun(t + _BS_C[2] * step, y + _BS_C[2] * step * k2)
            y_new = y + step * (_BS_B[0] * k1 + _BS_B[1] * k2 + _BS_B[2] * k3)
            k4 = fun(t + step, y_new)
            err = step * (_BS_E[0] * k1 + _BS_E[1] * k2 + _BS_E[2] * k3 + _BS_E[3] * k4)
            scale = cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new)) + cfg.abs_tol
            err_norm = float(np.max(np.abs(err) / scale))
            if not np.isfinite(err_norm):
                err_norm = np.inf

            if err_norm <= 1.0:
                t = t_target if last else t + step
                y = y_new
                k1 = k4
                n_steps += 1
                factor = grow if err_norm == 0 else min(grow, safety * err_norm ** (-1.0 / 3.0))
                # a step clipped to land on the grid does not shrink the proposal
                if not (last and step < h):
                    h = min(cfg.dt_max, max(cfg.dt_min, step * max(factor, shrink)))
                continue

            if step <= cfg.dt_min:
                raise IntegrationError(
                    f"step size underflow at t={t:.6g} (dt_min={cfg.dt_min})", t=t, state=y
                )
            factor = max(shrink, safety * err_norm ** (-1.0 / 3.0)) if np.isfinite(err_norm) else shrink
            h = max(cfg.dt_min, step * factor)
        ys[idx] = y
    return ys, n_steps


def rk3_adaptive(state0, signal, t_out, cfg=SteppersConfig(), params=PhysParams()):
    """Integrate one bubble (or an ensemble, if ``R``/``Rdot`` are arrays).

    ``state0`` is a ``BubbleState`` or an ``(R, Rdot)`` pair.  Returns
    ``(R, Rdot)`` sampled on ``t_out``.
    """
    if isinstance(state0, BubbleState):
        R0, V0 = state0.R, state0.Rdot
    else:
        R0, V0 = state0
    y0 = np.stack([np.asarray(R0, dtype=float), np.asarray(V0, dtype=float)])

    def fun(t, y):
        dR, dV = rp_rhs(y[0], y[1], signal(t), params)
        return np.stack([dR, dV])

    ys, _ = integrate_rk3(fun, y0, t_out, cfg)
    return ys[:, 0], ys[:, 1]


def rk4_combine(y, h, k1, k2, k3, k4):
    """Classical RK4 update from four precomputed stage slopes."""
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(fun, t, y, h):
    k1 = fun(t, y)
    k2 = fun(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = fun(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = fun(t + h, y + h * k3)
    return rk4_combine(y, h, k1, k2, k3, k4)
