import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridqmom.forcing import (
    AMPLITUDE_CAP,
    ForcingSignal,
    eval_cp,
    nucleation_threshold,
    rescale_amplitudes,
    sample_forcing,
    sample_forcings,
)


def single(a, f, phi):
    return ForcingSignal((a,), (f,), (phi,))


def test_zero_raw_amplitudes_stay_zero():
    assert np.all(rescale_amplitudes(np.zeros(6)) == 0.0)


def test_cap_rule_on_unit_draws():
    # sum 6 > 0.6, factor 0.6/6 -> every amplitude 0.1
    out = rescale_amplitudes(np.ones(6))
    assert np.allclose(out, 0.1, rtol=0, atol=1e-15)
    assert math.isclose(out.sum(), 0.6, rel_tol=1e-15)


def test_cap_leaves_small_sums_alone_normalize_does_not():
    raw = np.full(6, 0.05)
    assert np.array_equal(rescale_amplitudes(raw), raw)
    assert math.isclose(rescale_amplitudes(raw, "normalize").sum(), AMPLITUDE_CAP)
    with pytest.raises(ValueError):
        rescale_amplitudes(raw, "bogus")


def test_eval_cp_direct_values():
    assert eval_cp(ForcingSignal((0.0,) * 6, (0.15,) * 6, (0.3,) * 6), 3.7) == 1.0
    assert math.isclose(eval_cp(single(0.5, 0.1, 0.0), 2.5), 1.5, rel_tol=1e-15)


def test_eval_cp_vectorized_matches_scalar():
    sig = sample_forcing(4)
    t = np.linspace(0, 50, 101)
    vec = eval_cp(sig, t)
    assert vec.shape == t.shape
    assert np.allclose(vec, [eval_cp(sig, float(x)) for x in t], rtol=0, atol=1e-15)


def test_dense_grid_min_for_full_amplitude_signal():
    sig = sample_forcing(11, mode="normalize")
    assert math.isclose(sum(sig.amplitudes), 0.6, rel_tol=1e-12)
    t = np.arange(0.0, 100.0, 1e-3)
    assert eval_cp(sig, t).min() >= 0.4


def test_nucleation_threshold_examples():
    assert nucleation_threshold(ForcingSignal((0.0,), (0.1,), (0.0,)), 50.0) == 0.0
    assert math.isclose(nucleation_threshold(single(0.5, 0.1, 0.0), 50.0), 0.5, abs_tol=1e-9)


def test_nucleation_threshold_bounded_by_cap():
    for sig in sample_forcings(50, 3):
        assert nucleation_threshold(sig, 50.0) <= 0.6 + 1e-12


def test_sampling_is_deterministic_and_bitwise():
    a = json.dumps([s.to_dict() for s in sample_forcings(5, 99)])
    b = json.dumps([s.to_dict() for s in sample_forcings(5, 99)])
    assert a == b
    assert a != json.dumps([s.to_dict() for s in sample_forcings(5, 98)])


def test_sample_ranges():
    for s in sample_forcings(200, 1):
        assert len(s.amplitudes) == 6
        assert all(0.1 <= f <= 0.2 for f in s.frequencies)
        assert all(0.0 <= p < 2 * np.pi for p in s.phases)
        assert sum(s.amplitudes) <= 0.6 + 1e-15


@given(st.integers(min_value=0, max_value=2**32 - 1), st.floats(min_value=0, max_value=500))
def test_cp_bounds_property(seed, t):
    cp = eval_cp(sample_forcing(seed), t)
    assert 0.4 - 1e-12 <= cp <= 1.6 + 1e-12


def test_periodicity_with_equal_frequencies():
    sig = ForcingSignal((0.1, 0.2, 0.05), (0.125,) * 3, (0.1, 1.0, 2.0))
    t = np.linspace(0, 8, 57)
    assert np.allclose(eval_cp(sig, t), eval_cp(sig, t + 8.0), rtol=0, atol=1e-13)


def test_round_trip_dict():
    s = sample_forcing(5)
    assert ForcingSignal.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_constant_signal():
    for cp in (0.7, 1.0, 1.3):
        assert eval_cp(ForcingSignal.constant(cp), np.array([0.0, 3.3, 40.0])) == pytest.approx(cp, abs=1e-15)


def test_invalid_signal():
    with pytest.raises(ValueError):
        ForcingSignal((0.1, 0.2), (0.1,), (0.0, 0.0))
    with pytest.raises(ValueError):
        ForcingSignal((-0.1,), (0.1,), (0.0,))
