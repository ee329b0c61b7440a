"""Model-form error metrics against Monte Carlo surrogate truth."""

from __future__ import annotations

import numpy as np


class UndefinedMetric(ValueError):
    """Metric undefined because its reference (denominator) is zero."""


def l2_error(pred, mc):
    """Relative discrete L2 error ``sqrt(sum (pred-mc)^2 / sum mc^2)``."""
    pred = np.asarray(pred, dtype=float)
    mc = np.asarray(mc, dtype=float)
    if pred.shape != mc.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {mc.shape}")
    denom = np.sum(mc * mc)
    if denom == 0:
        raise UndefinedMetric("reference series is identically zero")
    return float(np.sqrt(np.sum((pred - mc) ** 2) / denom))


def improvement_q(eps_qbmm, eps_ml):
    """Percent improvement of the hybrid error over the baseline error."""
    if eps_qbmm == 0:
        raise UndefinedMetric("baseline error is zero")
    # this form keeps Q <= 100 exactly in floating point for eps_ml >= 0
    return 100.0 * (1.0 - eps_ml / eps_qbmm)


def median_ratio_c(errors_ml, errors_qbmm):
    """Ratio of median errors across a test set."""
    if len(errors_ml) == 0 or len(errors_qbmm) == 0:
        raise ValueError("empty error set")
    den = float(np.median(errors_qbmm))
    if den == 0:
        raise UndefinedMetric("median baseline error is zero")
    return float(np.median(errors_ml)) / den


def histogram(values, edges):
    """Counts in right-open bins ``[e_k, e_{k+1})``; the last bin is closed."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly ascending")
    counts, _ = np.histogram(np.asarray(values, dtype=float), bins=edges)
    return counts


def default_edges(q_values, bins=10):
    """Uniform bins from ``min(Q)`` to 100."""
    lo = float(np.min(q_values)) if len(q_values) else 0.0
    if lo >= 100.0:
        lo = 0.0
    return np.linspace(lo, 100.0, bins + 1)


def window_slice(times, window=None):
    """Index mask selecting ``window = (t0, t1)`` (inclusive); all if None."""
    times = np.asarray(times)
    if window is None:
        return np.ones(times.shape, dtype=bool)
    t0, t1 = window
    return (times >= t0 - 1e-9) & (times <= t1 + 1e-9)


def series_errors(pred, mc, times=None, window=None, skip_initial=True):
    """Per-column ``l2_error`` of two ``(nt, k)`` arrays.

    ``skip_initial`` drops ``t = 0`` so the sum runs over the ``N_t``
    uniformly spaced times after the shared initial condition.
    """
    pred = np.asarray(pred)
    mc = np.asarray(mc)
    mask = np.ones(len(mc), dtype=bool) if times is None else window_slice(times, window)
    if skip_initial:
        mask[0] = False
    return np.array([l2_error(pred[mask, k], mc[mask, k]) for k in range(mc.shape[1])])
