"""CHyQMOM inversion, quadrature projection and the closed moment equations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NonRealizableMoments

MOMENT_NAMES = ("mu10", "mu01", "mu20", "mu11", "mu02")
CARRIED_INDICES = ((1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
TARGET_NAMES = ("mu30", "mu21", "mu32", "mu_pbw")


def target_indices(gamma):
    return ((3, 0), (2, 1), (3, 2), (3.0 * (1.0 - gamma), 0))


def loss_indices(gamma):
    """Moments matched by the closure loss, starting with the normalization."""
    return ((0, 0),) + CARRIED_INDICES + target_indices(gamma)


@dataclass(frozen=True)
class MomentSet:
    mu10: float
    mu01: float
    mu20: float
    mu11: float
    mu02: float

    def as_array(self):
        return np.array([self.mu10, self.mu01, self.mu20, self.mu11, self.mu02])

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in a))

    @property
    def var_R(self):
        return self.mu20 - self.mu10 * self.mu10

    @property
    def cond_var_Rdot(self):
        """Velocity variance left after removing the part correlated with R."""
        var_R = self.var_R
        if var_R <= 0:
            return -np.inf
        cov = self.mu11 - self.mu10 * self.mu01
        return self.mu02 - self.mu01 * self.mu01 - cov * cov / var_R

    def is_realizable(self):
        return self.var_R > 0 and self.cond_var_Rdot >= 0


@dataclass(frozen=True)
class Quadrature:
    """Weighted nodes in (R, Rdot) phase space."""

    w: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray

    def __post_init__(self):
        for name in ("w", "xi1", "xi2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.w.shape == self.xi1.shape == self.xi2.shape) or self.w.ndim != 1:
            raise ValueError("weights and nodes must be 1-d arrays of equal length")

    @property
    def n_nodes(self):
        return self.w.size

    def positive_radii(self):
        """True when every weighted node has a positive radius coordinate."""
        used = self.w != 0
        return bool(np.all(self.xi1[used] > 0))


def chyqmom4_invert(m, n_nodes=4, min_variance=None):
    """Four-node CHyQMOM inversion of the first- and second-order moments.

    Nodes past the fourth sit at the mean with zero weight.  ``min_variance``
    clamps both variances from below instead of raising; the integrator uses
    it as a last-resort recovery.
    """
    if n_nodes < 4:
        raise ValueError("CHyQMOM needs at least 4 nodes")
    if not isinstance(m, MomentSet):
        m = MomentSet.from_array(m)
    mu10, mu01 = m.mu10, m.mu01
    var_R = m.mu20 - mu10 * mu10
    if min_variance is not None:
        var_R = max(var_R, min_variance)
    if not var_R > 0:
        raise NonRealizableMoments(f"radius variance {var_R:.3e} is not positive", var_R)
    sig_R = np.sqrt(var_R)
    alpha = (m.mu11 - mu10 * mu01) / sig_R
    var_V = m.mu02 - alpha * alpha - mu01 * mu01
    if min_variance is not None:
        var_V = max(var_V, min_variance)
    if not var_V >= 0:
        raise NonRealizableMoments(f"conditional velocity variance {var_V:.3e} is negative", var_V)
    sig_V = np.sqrt(var_V)

    w = np.zeros(n_nodes)
    w[:4] = 0.25
    xi1 = np.full(n_nodes, mu10)
    xi2 = np.full(n_nodes, mu01)
    xi1[:4] = (mu10 + sig_R, mu10 + sig_R, mu10 - sig_R, mu10 - sig_R)
    xi2[:4] = (
        mu01 + alpha + sig_V,
        mu01 + alpha - sig_V,
        mu01 - alpha + sig_V,
        mu01 - alpha - sig_V,
    )
    return Quadrature(w, xi1, xi2)


def chyqmom4_invert_batch(m, n_nodes=4, min_variance=0.0):
    """Vectorized inversion of an ``(..., 5)`` moment array.

    Variances are clamped at ``min_variance``; returns ``(w, xi1, xi2)``
    with a trailing node axis.  Used on Monte Carlo data, which is
    realizable up to round-off.
    """
    m = np.asarray(m, dtype=float)
    mu10, mu01, mu20, mu11, mu02 = (m[..., k] for k in range(5))
    sig_R = np.sqrt(np.maximum(mu20 - mu10 * mu10, min_variance))
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(sig_R > 0, (mu11 - mu10 * mu01) / sig_R, 0.0)
    sig_V = np.sqrt(np.maximum(mu02 - alpha * alpha - mu01 * mu01, min_variance))
    shape = m.shape[:-1] + (n_nodes,)
    w = np.zeros(shape)
    w[..., :4] = 0.25
    xi1 = np.repeat(mu10[..., None], n_nodes, axis=-1)
    xi2 = np.repeat(mu01[..., None], n_nodes, axis=-1)
    xi1[..., 0] = xi1[..., 1] = mu10 + sig_R
    xi1[..., 2] = xi1[..., 3] = mu10 - sig_R
    xi2[..., 0] = mu01 + alpha + sig_V
    xi2[..., 1] = mu01 + alpha - sig_V
    xi2[..., 2] = mu01 - alpha + sig_V
    xi2[..., 3] = mu01 - alpha - sig_V
    return w, xi1, xi2


def _needs_positive(i):
    return i < 0 or float(i) != int(i)


def project_moment(q, i, j):
    """Quadrature estimate of ``mu_{i,j} = sum_k w_k xi1_k^i xi2_k^j``."""
    used = q.w != 0
    x = q.xi1[used]
    if _needs_positive(i) and np.any(x <= 0):
        raise DomainError(f"moment ({i}, {j}) needs positive radius nodes")
    return float((q.w[used] * x ** i * q.xi2[used] ** j).sum())


def rate_terms(cp, params, printed_exponents=False):
    """Linear form of the five moment rates in terms of projected moments.

    Returns ``(terms, const)`` where ``terms[r]`` is a list of
    ``(coefficient, i, j)`` and ``const[r]`` an additive constant, all per
    Rayleigh-Plesset time unit.  ``printed_exponents`` uses the gamma = 1
    radius exponents (-4, -3) regardless of ``params.gamma``.
    """
    p = params.driving_pressure(cp)
    g3 = 3.0 if printed_exponents else 3.0 * params.gamma
    visc = 4.0 / params.Re
    terms = (
        ((1.0, 0, 1),),
        ((-1.5, -1, 2), (-visc, -2, 1), (1.0, -g3 - 1.0, 0), (-p, -1, 0)),
        ((2.0, 1, 1),),
        ((-0.5, 0, 2), (-visc, -1, 1), (1.0, -g3, 0)),
        ((-3.0, -1, 3), (-2.0 * visc, -2, 2), (2.0, -g3 - 1.0, 1), (-2.0 * p, -1, 1)),
    )
    const = np.array([0.0, 0.0, 0.0, -p, 0.0])
    return terms, const


def transport_rhs(q, cp, params, printed_exponents=False):
    """Quadrature-closed rates of the five carried moments per natural period."""
    terms, const = rate_terms(cp, params, printed_exponents)
    used = q.w != 0
    w, x, y = q.w[used], q.xi1[used], q.xi2[used]
    if np.any(x <= 0):
        raise DomainError("moment rates need positive radius nodes")
    xp = {}
    yp = {0: 1.0, 1: y}
    out = const.copy()
    for r, row in enumerate(terms):
        acc = 0.0
        for c, i, j in row:
            if i not in xp:
                xp[i] = x ** i
            if j not in yp:
                yp[j] = y ** j
            acc += c * (w * xp[i] * yp[j]).sum()
        out[r] += acc
    return out * params.time_scale


def target_moments(q, gamma):
    """The four moments consumed by the averaged flow equations."""
    return np.array([project_moment(q, i, j) for i, j in target_indices(gamma)])


def low_moment_jacobian(w, x, y):
    """Jacobian of ``mu_00, mu_10, mu_01, mu_20, mu_11, mu_02`` w.r.t. ``(w, xi1, xi2)``.

    Broadcasts over leading axes; returns ``(..., 6, 3N)`` with columns laid
    out as ``[w_1..w_N, xi1_1..xi1_N, xi2_1..xi2_N]``.
    """
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    rows = (
        (one, zero, zero),
        (x, w, zero),
        (y, zero, w),
        (x * x, 2.0 * w * x, zero),
        (x * y, w * y, w * x),
        (y * y, zero, 2.0 * w * y),
    )
    return np.stack([np.concatenate(r, axis=-1) for r in rows], axis=-2)


def moment_preserving_projector(w, x, y, ridge=1e-14):
    """Orthogonal projector onto corrections that leave the low-order moments
    unchanged to first order: ``I - J^T (J J^T)^-1 J``."""
    J = low_moment_jacobian(np.asarray(w, float), np.asarray(x, float), np.asarray(y, float))
    JJt = J @ np.swapaxes(J, -1, -2)
    JJt = JJt + ridge * np.eye(JJt.shape[-1])
    sol = np.linalg.solve(JJt, J)
    n = J.shape[-1]
    return np.eye(n) - np.swapaxes(J, -1, -2) @ sol
