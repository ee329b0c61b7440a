"""Shared generators and independent reference implementations for tests."""

import numpy as np


def random_moment_set(rng, mean_R=(0.5, 2.0), var=(1e-4, 0.5)):
    """Realizable first/second-order moments built from a mean and a covariance."""
    m10 = rng.uniform(*mean_R)
    m01 = rng.uniform(-1.0, 1.0)
    vR, vV = rng.uniform(*var, size=2)
    rho = rng.uniform(-0.99, 0.99)
    return np.array([m10, m01, m10 ** 2 + vR, rho * np.sqrt(vR * vV) + m10 * m01, m01 ** 2 + vV])


def node_sum(w, x, y, i, j):
    """Brute-force quadrature sum with an explicit loop."""
    total = 0.0
    for wk, xk, yk in zip(w, x, y):
        if wk != 0:
            total += wk * xk ** i * yk ** j
    return total


def rates_by_loop(w, x, y, cp, Re, gamma, scale):
    """Direct evaluation of the five moment rates node by node."""
    def mu(i, j):
        return node_sum(w, x, y, i, j)

    g3 = 3.0 * gamma
    return scale * np.array([
        mu(0, 1),
        -1.5 * mu(-1, 2) - 4.0 / Re * mu(-2, 1) + mu(-g3 - 1, 0) - cp * mu(-1, 0),
        2.0 * mu(1, 1),
        -0.5 * mu(0, 2) - 4.0 / Re * mu(-1, 1) + mu(-g3, 0) - cp,
        -3.0 * mu(-1, 3) - 8.0 / Re * mu(-2, 2) + 2.0 * mu(-g3 - 1, 1) - 2.0 * cp * mu(-1, 1),
    ])


def lstm_reference(x, W, U, b, V, c, h=None, cell=None):
    """Straight-line LSTM with hard-sigmoid gates for a single sequence ``x`` (T, n_in)."""
    H = U.shape[0]
    h = np.zeros(H) if h is None else h
    cell = np.zeros(H) if cell is None else cell
    outs = []
    for t in range(x.shape[0]):
        pre = []
        for gate in range(4):
            row = []
            for k in range(H):
                col = gate * H + k
                s = b[col]
                for m in range(x.shape[1]):
                    s += x[t, m] * W[m, col]
                for m in range(H):
                    s += h[m] * U[m, col]
                row.append(s)
            pre.append(np.array(row))
        hs = lambda v: min(1.0, max(0.0, 0.2 * v + 0.5))
        i = np.array([hs(v) for v in pre[0]])
        f = np.array([hs(v) for v in pre[1]])
        g = np.tanh(pre[2])
        o = np.array([hs(v) for v in pre[3]])
        cell = f * cell + i * g
        h = o * np.tanh(cell)
        outs.append(h @ V + c)
    return np.array(outs), h, cell


def sequence_loss_ld(model, objective, batch, state, masks, sequence_loss):
    """Batch loss kept in the working precision of ``batch`` (no float64 cast)."""
    out, _, _ = model.forward(batch.inputs, state, masks)
    dw, dx, dy = model.split(out)
    per = objective.loss(batch.w0 + dw, batch.x0 + dx, batch.y0 + dy, batch.cp,
                         batch.rates, batch.moments, batch.alpha, batch.beta)
    B, T = per.shape
    if sequence_loss:
        return np.sum(per) / (B * T)
    return np.sum(per[:, -1]) / B


def longdouble_fd_gradient(model, objective, batch, state=None, masks=None, sequence_loss=True, h=1e-6):
    """Central finite differences of the batch loss in extended precision."""
    ld = np.longdouble
    m = model.copy()
    m.params = {k: v.astype(ld) for k, v in model.params.items()}
    m.in_mean, m.in_std = model.in_mean.astype(ld), model.in_std.astype(ld)
    m.out_scale = model.out_scale.astype(ld)
    b = type(batch)(**{k: np.asarray(v, dtype=ld) for k, v in vars(batch).items()})
    st = None if state is None else tuple(s.astype(ld) for s in state)
    mk = None if masks is None else tuple(s.astype(ld) for s in masks)
    theta = m.get_theta()
    grad = np.empty(theta.size, dtype=ld)
    for k in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        m.set_theta(tp)
        fp = sequence_loss_ld(m, objective, b, st, mk, sequence_loss)
        m.set_theta(tm)
        fm = sequence_loss_ld(m, objective, b, st, mk, sequence_loss)
        grad[k] = (fp - fm) / (2 * h)
    return grad


def relative_gradient_error(analytic, numeric, floor=1e-7):
    a = np.asarray(analytic, dtype=np.longdouble)
    n = np.asarray(numeric, dtype=np.longdouble)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))
