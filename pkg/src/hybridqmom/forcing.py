"""Randomized Fourier pressure forcing ``Cp(t)``.

Time is measured in natural bubble periods, so the frequencies are cycles per
period.  Random draws use numpy's PCG64 generator (``numpy.random.default_rng``)
seeded with a plain integer; uniforms come from ``Generator.uniform`` which is
stable across platforms for a given numpy version.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

N_COMPONENTS = 6
FREQ_RANGE = (0.1, 0.2)
AMPLITUDE_CAP = 0.6


@dataclass(frozen=True)
class ForcingComponent:
    amplitude: float
    frequency: float
    phase: float


@dataclass(frozen=True)
class ForcingSignal:
    """Sum of sines ``Cp(t) = 1 + sum_i a_i sin(2 pi f_i t + phi_i)``."""

    amplitudes: tuple
    frequencies: tuple
    phases: tuple
    seed: int | None = None

    def __post_init__(self):
        n = len(self.amplitudes)
        if len(self.frequencies) != n or len(self.phases) != n:
            raise ValueError("amplitudes, frequencies and phases must have equal length")
        if any(a < 0 for a in self.amplitudes):
            raise ValueError("amplitudes must be non-negative")
        # normalize to tuples of python floats so equality/hash are value based
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        object.__setattr__(self, "frequencies", tuple(float(f) for f in self.frequencies))
        object.__setattr__(self, "phases", tuple(float(p) for p in self.phases))

    @property
    def components(self):
        return [
            ForcingComponent(a, f, p)
            for a, f, p in zip(self.amplitudes, self.frequencies, self.phases)
        ]

    def __call__(self, t):
        return eval_cp(self, t)

    def to_dict(self):
        return {
            "amplitudes": list(self.amplitudes),
            "frequencies": list(self.frequencies),
            "phases": list(self.phases),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["amplitudes"]),
            tuple(d["frequencies"]),
            tuple(d["phases"]),
            d.get("seed"),
        )

    @classmethod
    def constant(cls, cp=1.0):
        """Signal with ``Cp(t) = cp``, built from a zero-frequency component."""
        if cp == 1.0:
            return cls((0.0,), (0.0,), (0.0,))
        # sin(pi/2) == 1 exactly, so this is 1 + (cp - 1)
        if cp > 1.0:
            return cls((cp - 1.0,), (0.0,), (np.pi / 2,))
        return cls((1.0 - cp,), (0.0,), (-np.pi / 2,))


def rescale_amplitudes(raw, mode="cap"):
    """Rescale raw amplitude draws so that their sum respects ``AMPLITUDE_CAP``.

    ``mode="cap"`` multiplies by ``min(1, cap / sum)``; ``mode="normalize"``
    forces the sum to exactly ``cap``.
    """
    raw = np.asarray(raw, dtype=float)
    total = raw.sum()
    if total == 0.0:
        return raw.copy()
    factor = AMPLITUDE_CAP / total
    if mode == "cap":
        factor = min(1.0, factor)
    elif mode != "normalize":
        raise ValueError(f"unknown rescale mode {mode!r}")
    return raw * factor


def sample_forcing(seed, mode="cap"):
    """Draw one six-component forcing from an integer seed."""
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.0, 1.0, N_COMPONENTS)
    freqs = rng.uniform(FREQ_RANGE[0], FREQ_RANGE[1], N_COMPONENTS)
    phases = rng.uniform(0.0, 2.0 * np.pi, N_COMPONENTS)
    amps = rescale_amplitudes(raw, mode)
    return ForcingSignal(tuple(amps), tuple(freqs), tuple(phases), int(seed))


def sample_forcings(count, seed, mode="cap"):
    """Sample ``count`` forcings with per-signal seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint32)
    return [sample_forcing(int(s), mode) for s in seeds]


def eval_cp(signal, t):
    """Evaluate the pressure ratio at ``t`` (scalar or array)."""
    a = np.asarray(signal.amplitudes)
    f = np.asarray(signal.frequencies)
    p = np.asarray(signal.phases)
    t_arr = np.asarray(t, dtype=float)
    arg = 2.0 * np.pi * np.multiply.outer(t_arr, f) + p
    out = 1.0 + np.sin(arg) @ a
    if np.ndim(out) == 0:
        return float(out)
    return out


def nucleation_threshold(signal, horizon, dt=1e-3):
    """Return ``-min_t (Cp(t) - 1)`` over ``[0, horizon]``.

    Dense grid scan followed by a bounded scalar refinement around the grid
    minimum.  Compare the result against the cavitation number 0.40.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n = int(np.ceil(horizon / dt))
    t = np.linspace(0.0, horizon, n + 1)
    cp = eval_cp(signal, t)
    k = int(np.argmin(cp))
    lo, hi = t[max(k - 1, 0)], t[min(k + 1, n)]
    best = cp[k]
    if hi > lo:
        res = minimize_scalar(
            lambda s: eval_cp(signal, s), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-12},
        )
        best = min(best, float(res.fun))
    return -(best - 1.0)
