"""Stateful LSTM mapping moment/pressure history to quadrature corrections.

One LSTM layer (Keras gate order: input, forget, cell, output; hard-sigmoid
gates, tanh cell) followed by an affine head of width ``3 * n_nodes`` laid out
as ``[w', xi1', xi2']``.  Inputs are ``(mu10, mu01, mu20, mu11, mu02, Cp)``,
standardized with constants stored on the model.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..qbmm import moment_preserving_projector

N_INPUTS = 6
PARAM_NAMES = ("W", "U", "b", "V", "c")


def hard_sigmoid(x):
    return np.clip(0.2 * x + 0.5, 0.0, 1.0)


def hard_sigmoid_grad(x):
    return np.where((x > -2.5) & (x < 2.5), 0.2, 0.0)


class ClosureModel:
    """LSTM correction network.

    Parameters
    ----------
    n_nodes : int
        Quadrature nodes corrected (4 baseline nodes plus padding).
    hidden : int
        LSTM width.
    seed : int
        Seed for the uniform recurrent-layer initialization.
    init_scale : float
        Half-width of the uniform init for the LSTM kernels.  The output
        head always starts at zero, so a fresh model reproduces the baseline.
    out_scale : sequence of 3 floats
        Multipliers applied to the weight, radius and velocity corrections.
    preserve_low_moments : bool
        Project the head output onto corrections that leave the zeroth,
        first and second moments of the baseline quadrature unchanged to
        first order (see ``qbmm.moment_preserving_projector``).  The
        projection is applied where the corrections meet the baseline
        quadrature, not inside ``forward``.
    """

    def __init__(self, n_nodes=4, hidden=32, seed=0, init_scale=0.05, out_scale=(0.1, 0.1, 0.1),
                 preserve_low_moments=False):
        if n_nodes < 4:
            raise ContractError("need at least 4 quadrature nodes")
        self.n_nodes = int(n_nodes)
        self.hidden = int(hidden)
        self.preserve_low_moments = bool(preserve_low_moments)
        H, N = self.hidden, self.n_nodes
        rng = np.random.default_rng(seed)
        self.params = {
            "W": rng.uniform(-init_scale, init_scale, (N_INPUTS, 4 * H)),
            "U": rng.uniform(-init_scale, init_scale, (H, 4 * H)),
            "b": np.zeros(4 * H),
            "V": np.zeros((H, 3 * N)),
            "c": np.zeros(3 * N),
        }
        self.out_scale = np.repeat(np.asarray(out_scale, dtype=float), N)
        self.in_mean = np.zeros(N_INPUTS)
        self.in_std = np.ones(N_INPUTS)

    # -- parameter vector ---------------------------------------------------

    @property
    def n_params(self):
        return sum(p.size for p in self.params.values())

    def get_theta(self):
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    def set_theta(self, theta):
        theta = np.asarray(theta)
        if theta.size != self.n_params:
            raise ContractError(f"expected {self.n_params} parameters, got {theta.size}")
        pos = 0
        for k in PARAM_NAMES:
            p = self.params[k]
            self.params[k] = theta[pos:pos + p.size].reshape(p.shape).astype(p.dtype)
            pos += p.size

    def copy(self):
        other = ClosureModel.__new__(ClosureModel)
        other.n_nodes, other.hidden = self.n_nodes, self.hidden
        other.preserve_low_moments = self.preserve_low_moments
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.out_scale = self.out_scale.copy()
        other.in_mean = self.in_mean.copy()
        other.in_std = self.in_std.copy()
        return other

    def fit_normalization(self, inputs):
        """Per-feature mean/std from an ``(n, 6)`` array of training inputs."""
        inputs = np.asarray(inputs, dtype=float).reshape(-1, N_INPUTS)
        self.in_mean = inputs.mean(axis=0)
        std = inputs.std(axis=0)
        self.in_std = np.where(std > 1e-12, std, 1.0)

    def zero_state(self, batch=1, dtype=float):
        H = self.hidden
        return np.zeros((batch, H), dtype=dtype), np.zeros((batch, H), dtype=dtype)

    def has_zero_head(self):
        return not np.any(self.params["V"]) and not np.any(self.params["c"])

    # -- forward / backward -------------------------------------------------

    def forward(self, inputs, state=None, masks=None, params=None):
        """Run the LSTM over ``inputs`` of shape ``(B, T, 6)``.

        ``masks`` is an optional ``(input_mask (B, 6), recurrent_mask (B, H))``
        pair of already-scaled dropout masks.  ``params`` overrides the model
        parameters (used for extended-precision checks).

        Returns ``(out, (h, c), cache)`` with ``out`` of shape ``(B, T, 3N)``.
        """
        P = self.params if params is None else params
        x = np.asarray(inputs)
        if x.ndim != 3 or x.shape[2] != N_INPUTS:
            raise ContractError(f"inputs must have shape (B, T, {N_INPUTS}), got {x.shape}")
        B, T, _ = x.shape
        H = self.hidden
        dtype = P["W"].dtype
        if state is None:
            h, c = self.zero_state(B, dtype)
        else:
            h, c = state
            if h.shape != (B, H) or c.shape != (B, H):
                raise ContractError("recurrent state does not match batch/hidden size")
        z = (x - self.in_mean) / self.in_std
        mx, mh = masks if masks is not None else (None, None)
        if mx is not None:
            z = z * mx[:, None, :]

        W, U, b, V, cb = P["W"], P["U"], P["b"], P["V"], P["c"]
        cache = {"z": z, "mh": mh, "steps": []}
        hs = np.empty((B, T, H), dtype=dtype)
        for t in range(T):
            hm = h if mh is None else h * mh
            a = z[:, t] @ W + hm @ U + b
            ai, af, ag, ao = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            i, f, o = hard_sigmoid(ai), hard_sigmoid(af), hard_sigmoid(ao)
            g = np.tanh(ag)
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            cache["steps"].append((hm, c, a, i, f, g, o, tc))
            h, c = h_new, c_new
            hs[:, t] = h
        out = (hs @ V + cb) * self.out_scale
        cache["hs"] = hs
        return out, (h, c), cache

    def backward(self, cache, d_out):
        """Gradients of a scalar loss given ``d_out = dL/d(out)``.

        Backpropagates through the window only; the incoming state is treated
        as a constant (truncated BPTT at window boundaries).
        """
        P = self.params
        H = self.hidden
        W, U, V = P["W"], P["U"], P["V"]
        z, mh, hs = cache["z"], cache["mh"], cache["hs"]
        d_lin = d_out * self.out_scale
        B, T, _ = d_lin.shape
        grads = {
            "V": np.einsum("bth,btk->hk", hs, d_lin),
            "c": d_lin.sum(axis=(0, 1)),
            "W": np.zeros_like(W),
            "U": np.zeros_like(U),
            "b": np.zeros_like(P["b"]),
        }
        dh_out = d_lin @ V.T
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        da = np.empty((B, 4 * H))
        for t in range(T - 1, -1, -1):
            hm, c_prev, a, i, f, g, o, tc = cache["steps"][t]
            dh = dh_out[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da[:, :H] = dc * g * hard_sigmoid_grad(a[:, :H])
            da[:, H:2 * H] = dc * c_prev * hard_sigmoid_grad(a[:, H:2 * H])
            da[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            da[:, 3 * H:] = dh * tc * hard_sigmoid_grad(a[:, 3 * H:])
            grads["W"] += z[:, t].T @ da
            grads["U"] += hm.T @ da
            grads["b"] += da.sum(axis=0)
            dh_next = da @ U.T
            if mh is not None:
                dh_next = dh_next * mh
            dc_next = dc * f
        return grads

    def split(self, out):
        """Split head output ``(..., 3N)`` into ``(w', xi1', xi2')``."""
        N = self.n_nodes
        return out[..., :N], out[..., N:2 * N], out[..., 2 * N:]

    def project(self, out, w0, x0, y0):
        """Map head output onto corrections for the baseline quadrature ``(w0, x0, y0)``.

        Identity unless ``preserve_low_moments``.  Returns ``(corr, P)`` with
        ``P`` the projector (None when unused) so callers can pull gradients
        back through it.
        """
        if not self.preserve_low_moments:
            return out, None
        P = moment_preserving_projector(w0, x0, y0)
        return np.einsum("...ij,...j->...i", P, out), P

    def predict_step(self, moments, cp, state):
        """Single inference step from raw moments and pressure; dropout off.

        Returns the head output split into ``(w', xi1', xi2')`` before any
        projection; see ``project``.
        """
        x = np.empty((1, 1, N_INPUTS))
        x[0, 0, :5] = moments
        x[0, 0, 5] = cp
        out, state, _ = self.forward(x, state)
        dw, dx, dy = self.split(out[0, 0])
        return (dw, dx, dy), state


def dropout_masks(rng, batch, hidden, rate, recurrent_rate):
    """Inverted-dropout masks held fixed across the time steps of a window."""
    mx = (rng.random((batch, N_INPUTS)) >= rate) / (1.0 - rate) if rate > 0 else np.ones((batch, N_INPUTS))
    mh = (rng.random((batch, hidden)) >= recurrent_rate) / (1.0 - recurrent_rate) if recurrent_rate > 0 else np.ones((batch, hidden))
    return mx, mh


def forward(model, window, state=None, training=False, rng=None, hyper=None):
    """Corrections for one window; dropout applies only when ``training``."""
    window = np.asarray(window, dtype=float)
    if window.ndim == 2:
        window = window[None]
    masks = None
    if training:
        if rng is None or hyper is None:
            raise ContractError("training forward needs an rng and hyperparameters")
        masks = dropout_masks(rng, window.shape[0], model.hidden, hyper.dropout, hyper.recurrent_dropout)
    out, state, _ = model.forward(window, state, masks)
    return model.split(out), state
