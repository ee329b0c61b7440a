"""Moment evolution with baseline or ML-corrected CHyQMOM closure.

The five carried moments advance in macro-steps of ``dt_max`` between points
of the closure grid (spacing ``nn_grid_dt``).  Each macro-step is solved twice
with classical RK4, once with step ``dt`` and once with ``dt / 2``; the step
is halved until the two results agree to ``tau_tol``.  The finer solution is
kept.

Closure corrections are piecewise constant: the head output predicted at grid
point ``t_n`` is used for every RK4 stage whose step starts in
``[t_n, t_n + nn_grid_dt)`` (when the model preserves low-order moments the
projection onto the current baseline quadrature is redone at every stage).
The recurrent model consumes the moments at
each grid point in order, so its state is advanced tentatively during an
attempt and committed only when the macro-step is accepted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bubble import PhysParams, rk4_combine
from .errors import ConfigError, DomainError, IntegrationError, NonRealizableMoments
from .qbmm import Quadrature, chyqmom4_invert, target_moments, transport_rhs

log = logging.getLogger(__name__)

_GRID_EPS = 1e-9


@dataclass(frozen=True)
class IntegratorConfig:
    # neither tolerance nor maximum step is given in the source study
    tau_tol: float = 1e-6
    dt_max: float = 0.02
    nn_grid_dt: float = 0.01
    t_end: float = 50.0
    dt_min: float = 1e-7
    n_nodes: int = 4
    realizability_halvings: int = 5
    clamp_variance: float = 1e-12
    printed_exponents: bool = False

    def __post_init__(self):
        if not self.tau_tol > 0:
            raise ConfigError("tau_tol must be positive")
        ratio = self.dt_max / self.nn_grid_dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) not in (1, 2):
            raise ConfigError("dt_max must be one or two closure grid intervals")
        if self.n_nodes < 4:
            raise ConfigError("n_nodes must be at least 4")

    @property
    def grid_per_macro(self):
        return int(round(self.dt_max / self.nn_grid_dt))

    @property
    def n_grid(self):
        return int(round(self.t_end / self.nn_grid_dt))


@dataclass
class HybridRun:
    mode: str
    times: np.ndarray
    moments: np.ndarray          # (nt, 5)
    target_moments: np.ndarray   # (nt, 4)
    cp: np.ndarray
    quadratures: np.ndarray      # (nt, 3, N): weights, xi1, xi2
    step_sizes: list = field(default_factory=list)
    rejected: int = 0
    clamped: list = field(default_factory=list)

    @property
    def flagged(self):
        return bool(self.clamped)


class _Closure:
    """Correction source: zeros for the baseline, the LSTM for the hybrid."""

    def __init__(self, model, n_nodes):
        self.model = model
        self.n_nodes = n_nodes

    def start(self, moments, cp):
        return self.advance(None, moments, cp)

    def advance(self, state, moments, cp):
        if self.model is None:
            return None, None
        corr, state = self.model.predict_step(moments, cp, state)
        return corr, state


class HybridIntegrator:
    def __init__(self, signal, model=None, cfg=IntegratorConfig(), params=PhysParams()):
        if model is not None and model.n_nodes != cfg.n_nodes:
            raise ConfigError(f"model has {model.n_nodes} nodes, config asks for {cfg.n_nodes}")
        self.signal = signal
        self.model = model
        self.cfg = cfg
        self.params = params
        self.closure = _Closure(model, cfg.n_nodes)
        self.mode = "baseline" if model is None else "hybrid"

    # -- closure ------------------------------------------------------------

    def quadrature(self, moments, corr, min_variance=None):
        q = chyqmom4_invert(moments, self.cfg.n_nodes, min_variance)
        if corr is None:
            return q
        out, _ = self.model.project(np.concatenate(corr), q.w, q.xi1, q.xi2)
        dw, dx, dy = self.model.split(out)
        return Quadrature(q.w + dw, q.xi1 + dx, q.xi2 + dy)

    def rhs(self, moments, t, corr, min_variance=None):
        q = self.quadrature(moments, corr, min_variance)
        return transport_rhs(q, self.signal(t), self.params, self.cfg.printed_exponents)

    def _rk4(self, y, t, h, corr, min_variance):
        k1 = self.rhs(y, t, corr, min_variance)
        k2 = self.rhs(y + 0.5 * h * k1, t + 0.5 * h, corr, min_variance)
        k3 = self.rhs(y + 0.5 * h * k2, t + 0.5 * h, corr, min_variance)
        k4 = self.rhs(y + h * k3, t + h, corr, min_variance)
        return rk4_combine(y, h, k1, k2, k3, k4)

    # -- one macro-step -----------------------------------------------------

    def _attempt(self, y0, s, dt, corr0, state0, min_variance):
        """Coarse and fine solutions over one macro-step.

        Returns ``(coarse_end, fine_grid_values, corrections, states)`` where
        the lists hold the fine-path moments, corrections and model states at
        every closure grid point after ``s`` up to the macro-step end.
        """
        g = self.cfg.nn_grid_dt
        k = self.cfg.grid_per_macro
        corrs = [corr0]
        states = [state0]
        grid_vals = []

        # fine path: substeps of dt/2 always divide the grid spacing
        hf = 0.5 * dt
        n_sub = int(round(g / hf))
        y = y0
        for gi in range(k):
            t_grid = s + gi * g
            for m in range(n_sub):
                y = self._rk4(y, t_grid + m * hf, hf, corrs[gi], min_variance)
            grid_vals.append(y)
            if gi + 1 < k:
                corr, st = self.closure.advance(states[-1], y, self.signal(s + (gi + 1) * g))
                corrs.append(corr)
                states.append(st)

        # coarse path: correction of the grid interval containing each step start
        n_coarse = int(round(self.cfg.dt_max / dt))
        yc = y0
        for m in range(n_coarse):
            t0 = s + m * dt
            gi = min(int((m * dt) / g + _GRID_EPS), k - 1)
            yc = self._rk4(yc, t0, dt, corrs[gi], min_variance)
        return yc, grid_vals, corrs, states

    def step(self, y0, s, corr0, state0):
        """Advance one macro-step from grid time ``s``.

        ``corr0``/``state0`` are the correction and model state at ``s``.
        Returns ``(grid_values, diagnostics)``; ``grid_values`` are the moments
        at each closure grid point inside ``(s, s + dt_max]``.
        """
        cfg = self.cfg
        dt = cfg.dt_max
        failures = 0
        rejected = 0
        min_variance = None
        while True:
            if dt < cfg.dt_min:
                raise IntegrationError(
                    f"step size underflow at t={s:.4f} (dt={dt:.3e})", t=s, state=y0
                )
            try:
                yc, grid_vals, corrs, states = self._attempt(y0, s, dt, corr0, state0, min_variance)
                ok = np.all(np.isfinite(yc)) and np.all(np.isfinite(grid_vals[-1]))
            except (NonRealizableMoments, DomainError) as exc:
                failures += 1
                if failures > cfg.realizability_halvings:
                    if min_variance is not None:
                        raise IntegrationError(
                            f"moments not realizable at t={s:.4f} after clamping: {exc}", t=s, state=y0
                        ) from exc
                    log.warning("clamping covariance discriminant at t=%.4f (%s)", s, exc)
                    min_variance = cfg.clamp_variance
                    dt = cfg.dt_max
                    continue
                dt *= 0.5
                rejected += 1
                continue
            ratio = float(np.max(np.abs(yc - grid_vals[-1]))) / cfg.tau_tol if ok else np.inf
            if np.floor(ratio) <= 1:
                diag = {
                    "dt": dt,
                    "ratio": ratio,
                    "rejected": rejected,
                    "clamped": min_variance is not None,
                    "corrections": corrs,
                    "states": states,
                }
                return grid_vals, diag
            dt *= 0.5
            rejected += 1

    # -- full run -----------------------------------------------------------

    def run(self, initial):
        cfg = self.cfg
        g = cfg.nn_grid_dt
        n_grid = cfg.n_grid
        if n_grid % cfg.grid_per_macro:
            raise ConfigError("t_end must be a whole number of macro-steps")
        times = np.arange(n_grid + 1) * g
        N = cfg.n_nodes
        moments = np.empty((n_grid + 1, 5))
        targets = np.empty((n_grid + 1, 4))
        quads = np.empty((n_grid + 1, 3, N))
        cps = np.asarray(self.signal(times), dtype=float).reshape(n_grid + 1)

        y = np.asarray(initial.as_array() if hasattr(initial, "as_array") else initial, dtype=float)
        corr, state = self.closure.start(y, cps[0])
        run = HybridRun(self.mode, times, moments, targets, cps, quads)
        self._record(run, 0, y, corr, None)

        idx = 0
        while idx < n_grid:
            s = times[idx]
            grid_vals, diag = self.step(y, s, corr, state)
            run.step_sizes.append(diag["dt"])
            run.rejected += diag["rejected"]
            mv = cfg.clamp_variance if diag["clamped"] else None
            if diag["clamped"]:
                run.clamped.append(float(s))
            # interior grid points reuse the corrections computed on the fine path
            for gi in range(1, len(grid_vals)):
                self._record(run, idx + gi, grid_vals[gi - 1], diag["corrections"][gi], mv)
            y = grid_vals[-1]
            idx += len(grid_vals)
            corr, state = self.closure.advance(diag["states"][-1], y, cps[idx])
            self._record(run, idx, y, corr, mv)
        return run

    def _record(self, run, idx, y, corr, min_variance):
        run.moments[idx] = y
        try:
            q = self.quadrature(y, corr, min_variance)
        except NonRealizableMoments:
            q = self.quadrature(y, corr, self.cfg.clamp_variance)
            run.clamped.append(float(run.times[idx]))
        run.quadratures[idx] = (q.w, q.xi1, q.xi2)
        try:
            run.target_moments[idx] = target_moments(q, self.params.gamma)
        except DomainError:
            run.target_moments[idx] = np.nan
            run.clamped.append(float(run.times[idx]))


def run(initial, signal, model=None, cfg=IntegratorConfig(), params=PhysParams()):
    """Evolve ``initial`` moments under ``signal``; baseline when ``model`` is None."""
    return HybridIntegrator(signal, model, cfg, params).run(initial)


def gaussian_initial_moments(sigma_R, sigma_Rdot):
    """Moments of independent normals centred on the equilibrium state."""
    return np.array([1.0, 0.0, 1.0 + sigma_R ** 2, 0.0, sigma_Rdot ** 2])
