import json
import logging

import numpy as np
import pytest

from helpers import longdouble_fd_gradient, lstm_reference, relative_gradient_error
from hybridqmom.bubble import PhysParams
from hybridqmom.closure import checkpoint
from hybridqmom.closure.model import PARAM_NAMES, ClosureModel, forward
from hybridqmom.closure.objective import (
    QuadratureObjective,
    hybrid_quadrature,
    loss,
    loss_weights,
    matched_moment_series,
)
from hybridqmom.closure.training import Batch, Hyperparams, batch_loss, evaluate_loss, gradient, prepare_trajectory, train
from hybridqmom.ensemble import EnsembleConfig, TrajectoryRecord, run_ensemble
from hybridqmom.errors import CheckpointError, ConfigError, ContractError
from hybridqmom.forcing import sample_forcing
from hybridqmom.qbmm import Quadrature, chyqmom4_invert

P = PhysParams()


@pytest.fixture(scope="module")
def records():
    return [run_ensemble(EnsembleConfig(n_bubbles=30, t_end=1.0, seed=s), sample_forcing(s)) for s in (1, 2)]


@pytest.fixture(scope="module")
def trajs(records):
    return [prepare_trajectory(r, 4) for r in records]


def random_model(rng, H, N=4, head=0.2, seed=0):
    m = ClosureModel(N, H, seed=seed, init_scale=0.3)
    m.params["V"] = rng.uniform(-head, head, m.params["V"].shape)
    m.params["c"] = rng.uniform(-head, head, m.params["c"].shape)
    return m


def flat(grads):
    return np.concatenate([grads[k].ravel() for k in PARAM_NAMES])


# -- model -------------------------------------------------------------------


@pytest.mark.parametrize("H,N", [(1, 4), (2, 4), (32, 4), (8, 7)])
def test_parameter_count(H, N):
    m = ClosureModel(N, H)
    assert m.n_params == 4 * H * (6 + H + 1) + 3 * N * (H + 1)
    assert m.get_theta().size == m.n_params


def test_fresh_model_has_zero_head(rng):
    m = ClosureModel(4, 5, seed=3)
    assert m.has_zero_head()
    out, _, _ = m.forward(rng.normal(size=(2, 7, 6)))
    assert not np.any(out)


def test_matches_reference_recursion(rng):
    m = random_model(rng, H=2)
    m.in_mean = rng.normal(size=6)
    m.in_std = rng.uniform(0.5, 2, size=6)
    x = rng.normal(size=(1, 9, 6))
    out, (h, c), _ = m.forward(x)
    z = (x[0] - m.in_mean) / m.in_std
    ref, h_ref, c_ref = lstm_reference(z, *(m.params[k] for k in PARAM_NAMES))
    np.testing.assert_allclose(out[0], ref * m.out_scale, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(h[0], h_ref, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(c[0], c_ref, rtol=1e-12, atol=1e-14)


def test_state_carry_equals_one_long_window(rng):
    m = random_model(rng, H=3)
    x = rng.normal(size=(2, 10, 6))
    full, _, _ = m.forward(x)
    a, st, _ = m.forward(x[:, :4])
    b, _, _ = m.forward(x[:, 4:], st)
    np.testing.assert_allclose(np.concatenate([a, b], axis=1), full, rtol=1e-14, atol=1e-15)


def test_reset_state_forgets_previous_trajectory(rng):
    m = random_model(rng, H=3)
    x1, x2 = rng.normal(size=(2, 1, 5, 6))
    fresh, _, _ = m.forward(x2)
    m.forward(x1)
    again, _, _ = m.forward(x2, None)
    np.testing.assert_array_equal(fresh, again)


def test_contract_errors(rng):
    m = ClosureModel(4, 3)
    with pytest.raises(ContractError):
        m.forward(np.zeros((1, 3, 5)))
    with pytest.raises(ContractError):
        m.forward(np.zeros((2, 3, 6)), m.zero_state(1))
    with pytest.raises(ContractError):
        m.set_theta(np.zeros(3))
    with pytest.raises(ContractError):
        ClosureModel(3, 2)
    with pytest.raises(ContractError):
        forward(m, np.zeros((3, 6)), training=True)


def test_dropout_only_when_training(rng):
    m = random_model(rng, H=4)
    win = rng.normal(size=(6, 6))
    a, _ = forward(m, win)
    b, _ = forward(m, win)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    hyp = Hyperparams(dropout=0.5, recurrent_dropout=0.5)
    c, _ = forward(m, win, training=True, rng=np.random.default_rng(1), hyper=hyp)
    assert not all(np.array_equal(u, v) for u, v in zip(a, c))


# -- quadrature corrections and loss --------------------------------------------


def test_hybrid_quadrature_examples():
    q = chyqmom4_invert([1.0, 0.0, 1.01, 0.0, 0.04])
    z = np.zeros(4)
    same = hybrid_quadrature(q, (z, z, z))
    np.testing.assert_array_equal(same.w, q.w)
    np.testing.assert_array_equal(same.xi1, q.xi1)
    np.testing.assert_array_equal(same.xi2, q.xi2)
    moved = hybrid_quadrature(q, (np.array([0.01, -0.01, 0, 0]), z, z))
    assert moved.w.sum() == pytest.approx(1.0, abs=1e-15)
    neg = hybrid_quadrature(q, (np.array([-0.3, 0, 0, 0]), z, z))
    assert neg.w[0] < 0 and neg.positive_radii()
    obj = QuadratureObjective(P, lam=1.0)
    exact = dict(rates_mc=obj.rates(q.w, q.xi1, q.xi2, 1.0), mom_mc=obj.moments(q.w, q.xi1, q.xi2))
    assert loss(q, 1.0, P, alpha=np.ones(5), beta=np.ones(10), **exact) == 0.0
    assert loss(neg, 1.0, P, alpha=np.zeros(5), beta=np.zeros(10), **exact) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        hybrid_quadrature(q, (np.zeros(5), np.zeros(5), np.zeros(5)))


def test_loss_examples():
    hq = Quadrature([1.1, -0.1], [1.0, 1.2], [0.0, 0.1])
    obj = QuadratureObjective(P)
    rates = obj.rates(hq.w, hq.xi1, hq.xi2, 0.9)
    moms = obj.moments(hq.w, hq.xi1, hq.xi2)
    args = dict(rates_mc=np.zeros(5), mom_mc=np.zeros(10), alpha=np.zeros(5), beta=np.zeros(10))
    assert loss(hq, 0.9, P, **args) == pytest.approx(0.1, rel=1e-15)
    assert loss(hq, 0.9, P, lam=2.5, **args) == pytest.approx(0.25, rel=1e-15)
    # perfect reconstruction with nonnegative weights
    good = Quadrature([0.6, 0.4], [1.0, 1.2], [0.0, 0.1])
    r = obj.rates(good.w, good.xi1, good.xi2, 0.9)
    m = obj.moments(good.w, good.xi1, good.xi2)
    assert loss(good, 0.9, P, r, m, np.ones(5), np.ones(10)) == 0.0
    assert rates.shape == (5,) and moms.shape == (10,)


def test_baseline_closure_error_is_finite(records):
    rec = records[0]
    alpha, beta = loss_weights(rec)
    obj = QuadratureObjective(P)
    mom = matched_moment_series(rec)
    for k in (0, 50, 100):
        q = chyqmom4_invert(rec.moments[k])
        val = loss(q, rec.cp[k], P, rec.moment_rates[k], mom[k], alpha, beta)
        assert np.isfinite(val) and val >= 0
    assert obj.moments(q.w, q.xi1, q.xi2)[0] == pytest.approx(1.0)


def test_loss_weights(records, caplog):
    rec = records[0]
    alpha, beta = loss_weights(rec)
    assert np.all(np.isfinite(alpha)) and np.all(alpha > 0)
    assert np.all(np.isfinite(beta)) and np.all(beta > 0)
    assert beta[0] == 1.0
    moments = rec.moments.copy()
    moments[:, 0] = np.linspace(-2.0, 1.5, len(moments))
    scaled = TrajectoryRecord(rec.times, moments, rec.moment_rates * 4.0, rec.target_moments, rec.cp)
    a2, b2 = loss_weights(scaled)
    assert b2[1] == 0.5
    np.testing.assert_allclose(a2, alpha / 4.0, rtol=1e-15)
    zero = TrajectoryRecord(rec.times, rec.moments, np.zeros_like(rec.moment_rates), rec.target_moments, rec.cp)
    caplog.set_level(logging.WARNING)
    a3, _ = loss_weights(zero)
    assert np.all(a3 == 0) and "identically zero" in caplog.text


# -- gradients -------------------------------------------------------------------


@pytest.mark.parametrize("case", range(6))
def test_gradient_matches_extended_precision_fd(trajs, case):
    rng = np.random.default_rng(100 + case)
    H, T, B = 1 + case % 4, 2 + case, 1 + case % 2
    m = random_model(rng, H, seed=case)
    m.fit_normalization(np.concatenate([t.inputs for t in trajs]))
    start = int(rng.integers(0, 60))
    batch = Batch.from_trajectories(trajs[:B], start, start + T)
    state = (0.3 * rng.normal(size=(B, H)), 0.3 * rng.normal(size=(B, H))) if case % 2 else None
    seq = case % 3 != 0
    _, g, _ = gradient(m, QuadratureObjective(P), batch, state, None, seq)
    fd = longdouble_fd_gradient(m, QuadratureObjective(P), batch, state, None, seq, h=1e-5)
    assert relative_gradient_error(flat(g), fd) < 1e-5


def test_gradient_with_moment_projection(trajs, rng):
    m = random_model(rng, 2)
    m.preserve_low_moments = True
    m.fit_normalization(np.concatenate([t.inputs for t in trajs]))
    batch = Batch.from_trajectories(trajs, 10, 14)
    obj = QuadratureObjective(P)
    L, g, _ = gradient(m, obj, batch)
    theta = m.get_theta()
    h = 1e-6

    def at(t):
        m.set_theta(t)
        return batch_loss(m, obj, batch)[0]

    fd = np.array([(at(theta + h * e) - at(theta - h * e)) / (2 * h) for e in np.eye(theta.size)])
    m.set_theta(theta)
    assert relative_gradient_error(flat(g), fd, floor=1e-6) < 1e-4
    assert L == pytest.approx(batch_loss(m, obj, batch)[0], rel=1e-14)


def test_zero_loss_gives_zero_gradient(trajs, rng):
    m = random_model(rng, 3)
    batch = Batch.from_trajectories(trajs, 0, 6)
    out, _, _ = m.forward(batch.inputs)
    dw, dx, dy = m.split(out)
    w, x, y = batch.w0 + dw, batch.x0 + dx, batch.y0 + dy
    assert np.all(w > 0)
    obj = QuadratureObjective(P)
    batch.rates = obj.rates(w, x, y, batch.cp)
    batch.moments = obj.moments(w, x, y)
    L, g, _ = gradient(m, obj, batch)
    assert L == 0.0
    assert not np.any(flat(g))


def test_gradient_is_deterministic(trajs, rng):
    m = random_model(rng, 3)
    batch = Batch.from_trajectories(trajs, 5, 12)
    a = flat(gradient(m, QuadratureObjective(P), batch)[1])
    b = flat(gradient(m, QuadratureObjective(P), batch)[1])
    np.testing.assert_array_equal(a, b)


# -- training ---------------------------------------------------------------------


def small_hyper(**kw):
    base = dict(epochs=20, learning_rate=1e-3, window=32, hidden=8, dropout=0.0, recurrent_dropout=0.0)
    base.update(kw)
    return Hyperparams(**base)


def test_zero_epochs_returns_initialization(records):
    model, hist = train(records, small_hyper(epochs=0), seed=5)
    init = ClosureModel(4, 8, seed=5, init_scale=0.05)
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(model.params[k], init.params[k])
    assert hist == []


def test_training_lowers_the_loss(records):
    model, hist = train(records, small_hyper(), seed=0)
    assert len(hist) == 20
    assert hist[-1] < hist[0]
    assert evaluate_loss(model, records, small_hyper()) < evaluate_loss(
        ClosureModel(4, 8), records, small_hyper())


def test_training_is_deterministic(records):
    hyp = small_hyper(epochs=3, dropout=0.1, recurrent_dropout=0.1)
    m1, h1 = train(records, hyp, seed=11)
    m2, h2 = train(records, hyp, seed=11)
    assert h1 == h2
    np.testing.assert_array_equal(m1.get_theta(), m2.get_theta())
    _, h3 = train(records, hyp, seed=12)
    assert h3 != h1


def test_training_input_errors(records):
    with pytest.raises(ConfigError):
        train([], small_hyper())
    short = run_ensemble(EnsembleConfig(n_bubbles=10, t_end=0.5), sample_forcing(3))
    with pytest.raises(ConfigError):
        train([records[0], short], small_hyper())


@pytest.mark.parametrize("bad", [{"epochs": -1}, {"dropout": 1.0}, {"activation": "relu"},
                                 {"out_scale": [1, 2]}, {"nonsense": 3}])
def test_hyperparameter_validation(bad):
    with pytest.raises(ConfigError):
        Hyperparams.from_dict(bad)


def test_hyperparameter_round_trip():
    h = small_hyper(out_scale=(0.2, 0.1, 0.05))
    assert Hyperparams.from_dict(json.loads(json.dumps(h.to_dict()))) == h


# -- checkpoints ------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, rng):
    m = random_model(rng, 5, N=6)
    m.in_mean, m.in_std = rng.normal(size=6), rng.uniform(0.1, 3, 6)
    path = tmp_path / "model.ckpt"
    checkpoint.save(m, path)
    back = checkpoint.load(path)
    for k in PARAM_NAMES:
        assert back.params[k].tobytes() == m.params[k].tobytes()
    assert back.in_mean.tobytes() == m.in_mean.tobytes()
    assert back.out_scale.tobytes() == m.out_scale.tobytes()
    x = rng.normal(size=(1, 4, 6))
    np.testing.assert_array_equal(back.forward(x)[0], m.forward(x)[0])
    # loading twice in a row gives the same model
    np.testing.assert_array_equal(checkpoint.load(path).forward(x)[0], back.forward(x)[0])


def test_checkpoint_corruption(tmp_path, rng):
    path = tmp_path / "model.ckpt"
    checkpoint.save(random_model(rng, 2), path)
    text = path.read_text()
    (tmp_path / "cut.ckpt").write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "cut.ckpt")
    doc = json.loads(text)
    doc["version"] = 99
    (tmp_path / "v.ckpt").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.load(tmp_path / "v.ckpt")
    doc["version"] = 1
    doc["params"]["V"]["shape"] = [3, 3]
    (tmp_path / "s.ckpt").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "s.ckpt")
    (tmp_path / "list.ckpt").write_text("[1, 2]")
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "list.ckpt")
