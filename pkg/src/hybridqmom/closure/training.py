"""Windowed stateful training of the closure model with Adam."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..bubble import PhysParams
from ..errors import ConfigError, TrainingError
from ..qbmm import chyqmom4_invert_batch
from .model import ClosureModel, dropout_masks
from .objective import QuadratureObjective, loss_weights, matched_moment_series

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparams:
    epochs: int = 500
    learning_rate: float = 1e-5
    batch_size: int = 32
    window: int = 256
    activation: str = "tanh"
    recurrent_activation: str = "hard_sigmoid"
    dropout: float = 0.10
    recurrent_dropout: float = 0.10
    stateful: bool = True
    # not given in the source study
    lam: float = 1.0
    hidden: int = 32
    n_nodes: int = 4
    init_scale: float = 0.05
    out_scale: tuple = (0.1, 0.1, 0.1)
    sequence_loss: bool = True
    preserve_low_moments: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    printed_exponents: bool = False

    def __post_init__(self):
        if self.activation != "tanh" or self.recurrent_activation != "hard_sigmoid":
            raise ConfigError("only tanh / hard_sigmoid activations are implemented")
        if self.epochs < 0 or self.batch_size < 1 or self.window < 1:
            raise ConfigError("epochs, batch_size and window must be positive")
        if not (0 <= self.dropout < 1 and 0 <= self.recurrent_dropout < 1):
            raise ConfigError("dropout rates must lie in [0, 1)")
        if len(self.out_scale) != 3:
            raise ConfigError("out_scale needs three entries")
        object.__setattr__(self, "out_scale", tuple(float(v) for v in self.out_scale))

    def to_dict(self):
        d = asdict(self)
        d["out_scale"] = list(self.out_scale)
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"invalid hyperparameters: {exc}") from exc


@dataclass
class TrajectoryData:
    """Training arrays for one Monte Carlo trajectory on the NN grid."""

    inputs: np.ndarray     # (nt, 6)
    w0: np.ndarray         # (nt, N) baseline quadrature from MC moments
    x0: np.ndarray
    y0: np.ndarray
    cp: np.ndarray         # (nt,)
    rates: np.ndarray      # (nt, 5)
    moments: np.ndarray    # (nt, 10)
    alpha: np.ndarray      # (5,)
    beta: np.ndarray       # (10,)

    @property
    def length(self):
        return self.inputs.shape[0]


def prepare_trajectory(record, n_nodes):
    w0, x0, y0 = chyqmom4_invert_batch(record.moments, n_nodes)
    alpha, beta = loss_weights(record)
    return TrajectoryData(
        inputs=np.concatenate([record.moments, record.cp[:, None]], axis=1),
        w0=w0, x0=x0, y0=y0,
        cp=np.asarray(record.cp, dtype=float),
        rates=np.asarray(record.moment_rates, dtype=float),
        moments=matched_moment_series(record),
        alpha=alpha, beta=beta,
    )


@dataclass
class Batch:
    """A stack of same-length windows taken from ``B`` trajectories."""

    inputs: np.ndarray
    w0: np.ndarray
    x0: np.ndarray
    y0: np.ndarray
    cp: np.ndarray
    rates: np.ndarray
    moments: np.ndarray
    alpha: np.ndarray      # (B, 1, 5)
    beta: np.ndarray       # (B, 1, 10)

    @classmethod
    def from_trajectories(cls, trajs, start, stop):
        sl = slice(start, stop)
        stack = lambda name: np.stack([getattr(tr, name)[sl] for tr in trajs])
        return cls(
            inputs=stack("inputs"), w0=stack("w0"), x0=stack("x0"), y0=stack("y0"),
            cp=stack("cp"), rates=stack("rates"), moments=stack("moments"),
            alpha=np.stack([tr.alpha for tr in trajs])[:, None, :],
            beta=np.stack([tr.beta for tr in trajs])[:, None, :],
        )


def _loss_mask(T, sequence_loss):
    mask = np.zeros(T)
    if sequence_loss:
        mask[:] = 1.0 / T
    else:
        mask[-1] = 1.0
    return mask


def batch_loss(model, objective, batch, state=None, masks=None, sequence_loss=True):
    """Mean loss of a batch; forward pass only."""
    out, new_state, _ = model.forward(batch.inputs, state, masks)
    out, _ = model.project(out, batch.w0, batch.x0, batch.y0)
    dw, dx, dy = model.split(out)
    per = objective.loss(
        batch.w0 + dw, batch.x0 + dx, batch.y0 + dy, batch.cp,
        batch.rates, batch.moments, batch.alpha, batch.beta,
    )
    B, T = per.shape
    return float(np.sum(per * _loss_mask(T, sequence_loss)) / B), new_state


def gradient(model, objective, batch, state=None, masks=None, sequence_loss=True):
    """Mean batch loss and its exact gradient w.r.t. every model parameter.

    Returns ``(loss, grads, new_state)``; ``grads`` has the keys of
    ``model.params``.
    """
    out, new_state, cache = model.forward(batch.inputs, state, masks)
    out, proj = model.project(out, batch.w0, batch.x0, batch.y0)
    dw, dx, dy = model.split(out)
    per, (gw, gx, gy) = objective.loss_and_grad(
        batch.w0 + dw, batch.x0 + dx, batch.y0 + dy, batch.cp,
        batch.rates, batch.moments, batch.alpha, batch.beta,
    )
    B, T = per.shape
    mask = _loss_mask(T, sequence_loss)
    loss = float(np.sum(per * mask) / B)
    scale = (mask / B)[None, :, None]
    d_out = np.concatenate([gw * scale, gx * scale, gy * scale], axis=-1)
    if proj is not None:
        d_out = np.einsum("btij,bti->btj", proj, d_out)
    grads = model.backward(cache, d_out)
    return loss, grads, new_state


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def _batches(order, size):
    return [order[i:i + size] for i in range(0, len(order), size)]


def train(records, hyper=Hyperparams(), seed=0, params=PhysParams(), model=None, callback=None):
    """Fit a closure model on Monte Carlo trajectory records.

    Each epoch shuffles the trajectory order and groups trajectories into
    batches.  Within a batch the windows are visited in time order and the
    recurrent state is carried from one window to the next (reset for every
    new batch), with one Adam update per window.

    Returns ``(model, history)`` where ``history`` is the mean training loss
    per epoch.
    """
    if not records:
        raise ConfigError("training needs at least one trajectory")
    trajs = [prepare_trajectory(r, hyper.n_nodes) for r in records]
    lengths = {tr.length for tr in trajs}
    if len(lengths) != 1:
        raise ConfigError("all training trajectories must share one time grid")
    nt = lengths.pop()

    if model is None:
        model = ClosureModel(hyper.n_nodes, hyper.hidden, seed, hyper.init_scale, hyper.out_scale,
                             hyper.preserve_low_moments)
        model.fit_normalization(np.concatenate([tr.inputs for tr in trajs]))
    objective = QuadratureObjective(params, hyper.lam, hyper.printed_exponents)
    opt = Adam(hyper.learning_rate, hyper.beta1, hyper.beta2, hyper.eps)
    rng = np.random.default_rng(seed)
    starts = list(range(0, nt, hyper.window))
    history = []

    for epoch in range(hyper.epochs):
        order = rng.permutation(len(trajs))
        total, count = 0.0, 0
        for b_idx, members in enumerate(_batches(order, hyper.batch_size)):
            group = [trajs[i] for i in members]
            state = None
            for start in starts:
                batch = Batch.from_trajectories(group, start, min(start + hyper.window, nt))
                masks = dropout_masks(rng, len(group), model.hidden, hyper.dropout, hyper.recurrent_dropout)
                loss, grads, state = gradient(model, objective, batch, state, masks, hyper.sequence_loss)
                if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b_idx}, window start {start}")
                opt.step(model.params, grads)
                if not hyper.stateful:
                    state = None
                total += loss * len(group)
                count += len(group)
        history.append(total / count)
        if callback is not None:
            callback(epoch, history[-1])
        log.debug("epoch %d loss %.6e", epoch, history[-1])
    return model, history


def evaluate_loss(model, records, hyper=Hyperparams(), params=PhysParams()):
    """Mean full-trajectory loss without dropout (state carried through windows)."""
    trajs = [prepare_trajectory(r, model.n_nodes) for r in records]
    objective = QuadratureObjective(params, hyper.lam, hyper.printed_exponents)
    nt = trajs[0].length
    batch = Batch.from_trajectories(trajs, 0, nt)
    loss, _ = batch_loss(model, objective, batch, None, None, True)
    return loss
