"""Closure loss on the corrected quadrature and its gradient.

All functions broadcast over leading sample axes; node arrays carry the node
index in the last axis.
"""

from __future__ import annotations

import logging

import numpy as np

from ..qbmm import Quadrature, loss_indices

log = logging.getLogger(__name__)

N_RATES = 5
N_MATCHED = 10


def hybrid_quadrature(baseline, corrections):
    """Add ``(w', xi1', xi2')`` to a baseline ``Quadrature``; no renormalization."""
    dw, dx, dy = corrections
    if not (np.shape(dw) == np.shape(dx) == np.shape(dy) == baseline.w.shape):
        raise ValueError("correction length does not match the number of nodes")
    return Quadrature(baseline.w + dw, baseline.xi1 + dx, baseline.xi2 + dy)


def _rate_table(params, printed_exponents):
    """Rate terms as ``(rate, coef, i, j, pressure_factor)``.

    A term contributes ``coef * p**pressure_factor * P(i, j)`` where ``p`` is
    the driving pressure of the sample.
    """
    g3 = 3.0 if printed_exponents else 3.0 * params.gamma
    visc = 4.0 / params.Re
    return (
        (0, 1.0, 0, 1, 0),
        (1, -1.5, -1, 2, 0), (1, -visc, -2, 1, 0), (1, 1.0, -g3 - 1.0, 0, 0), (1, -1.0, -1, 0, 1),
        (2, 2.0, 1, 1, 0),
        (3, -0.5, 0, 2, 0), (3, -visc, -1, 1, 0), (3, 1.0, -g3, 0, 0),
        (4, -3.0, -1, 3, 0), (4, -2.0 * visc, -2, 2, 0), (4, 2.0, -g3 - 1.0, 1, 0), (4, -2.0, -1, 1, 1),
    )


class QuadratureObjective:
    """Evaluate the closure loss for batches of corrected quadratures.

    The loss per sample is::

        sum_r alpha_r (rate_r - rate_mc_r)**2
        + sum_m beta_m (P(i_m, j_m) - mu_mc_m)**2
        + lam * sum_k relu(-w_k)

    with rates per natural period and the ten matched moments
    ``(0,0), (1,0), (0,1), (2,0), (1,1), (0,2), (3,0), (2,1), (3,2), (3-3 gamma,0)``.
    """

    def __init__(self, params, lam=1.0, printed_exponents=False):
        self.params = params
        self.lam = lam
        self.table = _rate_table(params, printed_exponents)
        self.matched = loss_indices(params.gamma)
        self.exponents = sorted(
            {(t[2], t[3]) for t in self.table} | set(self.matched), key=lambda ij: (float(ij[0]), ij[1])
        )

    def _powers(self, x, y):
        xp, yp = {}, {}
        for i, j in self.exponents:
            if i not in xp:
                xp[i] = x ** i
            if j not in yp:
                yp[j] = y ** j
        return xp, yp

    def rates(self, w, x, y, cp):
        """Quadrature rates ``(..., 5)`` per natural period."""
        xp, yp = self._powers(x, y)
        p = self.params.driving_pressure(np.asarray(cp))
        out = np.zeros(np.shape(p) + (N_RATES,), dtype=np.result_type(w, x, y))
        for r, coef, i, j, pf in self.table:
            term = coef * np.sum(w * xp[i] * yp[j], axis=-1)
            out[..., r] += term * p if pf else term
        out[..., 3] -= p
        return out * self.params.time_scale

    def moments(self, w, x, y):
        xp, yp = self._powers(x, y)
        return np.stack([np.sum(w * xp[i] * yp[j], axis=-1) for i, j in self.matched], axis=-1)

    def loss(self, w, x, y, cp, rates_mc, mom_mc, alpha, beta):
        """Per-sample loss (shape of the leading axes)."""
        dr = self.rates(w, x, y, cp) - rates_mc
        dm = self.moments(w, x, y) - mom_mc
        penalty = self.lam * np.sum(np.maximum(-w, 0.0), axis=-1)
        return np.sum(alpha * dr * dr, axis=-1) + np.sum(beta * dm * dm, axis=-1) + penalty

    def loss_and_grad(self, w, x, y, cp, rates_mc, mom_mc, alpha, beta):
        """Per-sample loss and its gradient w.r.t. ``(w, x, y)``."""
        xp, yp = self._powers(x, y)
        ts = self.params.time_scale
        p = self.params.driving_pressure(np.asarray(cp, dtype=float))

        P = {ij: np.sum(w * xp[ij[0]] * yp[ij[1]], axis=-1) for ij in self.exponents}
        rates = np.zeros(np.shape(p) + (N_RATES,))
        for r, coef, i, j, pf in self.table:
            rates[..., r] += coef * P[(i, j)] * (p if pf else 1.0)
        rates[..., 3] -= p
        rates *= ts
        dr = rates - rates_mc
        mom = np.stack([P[ij] for ij in self.matched], axis=-1)
        dm = mom - mom_mc
        loss = (
            np.sum(alpha * dr * dr, axis=-1)
            + np.sum(beta * dm * dm, axis=-1)
            + self.lam * np.sum(np.maximum(-w, 0.0), axis=-1)
        )

        # dL/dP for every projected moment
        gP = {ij: 0.0 for ij in self.exponents}
        g_rate = 2.0 * alpha * dr * ts
        for r, coef, i, j, pf in self.table:
            gP[(i, j)] = gP[(i, j)] + coef * g_rate[..., r] * (p if pf else 1.0)
        g_mom = 2.0 * beta * dm
        for m, ij in enumerate(self.matched):
            gP[ij] = gP[ij] + g_mom[..., m]

        gw = np.where(w < 0, -self.lam, 0.0)
        gx = np.zeros(np.broadcast_shapes(np.shape(x), np.shape(w)))
        gy = np.zeros_like(gx)
        for (i, j), g in gP.items():
            g = np.asarray(g)[..., None]
            xi, yj = xp[i], yp[j]
            gw = gw + g * xi * yj
            if i != 0:
                gx = gx + g * w * i * (xi / x) * yj
            if j != 0:
                gy = gy + g * w * j * xi * yp_lower(yp, y, j)
        return loss, (gw, gx, gy)


def yp_lower(yp, y, j):
    """``y**(j-1)`` from the cached integer powers."""
    if j - 1 in yp:
        return yp[j - 1]
    return y ** (j - 1)


def loss(hq, cp, params, rates_mc, mom_mc, alpha, beta, lam=1.0, printed_exponents=False):
    """Closure loss for a single corrected ``Quadrature``."""
    obj = QuadratureObjective(params, lam, printed_exponents)
    return float(obj.loss(hq.w, hq.xi1, hq.xi2, cp, rates_mc, mom_mc, alpha, beta))


def _inverse_sup(series, names):
    sup = np.max(np.abs(series), axis=0)
    out = np.zeros_like(sup, dtype=float)
    nz = sup > 0
    out[nz] = 1.0 / sup[nz]
    for k in np.flatnonzero(~nz):
        log.warning("series %s is identically zero; its loss weight is set to 0", names[k])
    return out


def matched_moment_series(record):
    """``(nt, 10)`` MC values of the matched moments, ``mu00 = 1`` first."""
    nt = len(record.times)
    return np.concatenate([np.ones((nt, 1)), record.moments, record.target_moments], axis=1)


def loss_weights(record):
    """Per-trajectory reciprocal sup-norm weights ``(alpha[5], beta[10])``."""
    alpha = _inverse_sup(record.moment_rates, [f"rate{k}" for k in range(N_RATES)])
    beta = _inverse_sup(matched_moment_series(record), [f"moment{k}" for k in range(N_MATCHED)])
    return alpha, beta
