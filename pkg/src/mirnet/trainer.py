"""Adam and the minibatch training loop."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import model as M
from .errors import EmptyDataError
from .seeding import derive_rng


@dataclass(frozen=True)
class AdamState:
    """Adam moments and hyperparameters.

    ``epsilon`` is added to the square root of the bias-corrected second
    moment. ``decay`` is time-based learning-rate decay,
    ``lr / (1 + decay * t)``; 0 disables it.
    """

    m: dict
    v: dict
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    decay: float = 0.0

    @classmethod
    def create(cls, params, **hyper):
        zeros = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        return cls(m=zeros, v={k: z.copy() for k, z in zeros.items()}, **hyper)


def adam_step(params, grads, state: AdamState):
    """One Adam update. Pure: returns ``(new_params, new_state)``."""
    if set(params) != set(grads):
        raise ValueError("gradient names do not match parameter names")
    t = state.t + 1
    lr = state.lr / (1.0 + state.decay * state.t)
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(theta):
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {np.shape(theta)}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = theta - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(state, m=new_m, v=new_v, t=t)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    lr_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def make_optimizer(self, params: M.ModelParams):
        return AdamState.create(
            params.trainables(), lr=self.lr, beta1=self.beta1, beta2=self.beta2,
            epsilon=self.epsilon, decay=self.lr_decay,
        )

    def to_dict(self):
        return asdict(self)


def epoch_order(n, cfg: TrainConfig, epoch):
    return derive_rng(cfg.seed, "shuffle", epoch).permutation(n)


def train_step(params: M.ModelParams, opt: AdamState, X, y):
    loss, grads, params = M.loss_and_grads(params, X, y, mode="train")
    new_trainables, opt = adam_step(params.trainables(), grads, opt)
    return params.with_trainables(new_trainables), opt, loss


def train_epoch(params: M.ModelParams, opt: AdamState, X, y, cfg: TrainConfig, epoch=0):
    """One pass over ``(X, y)`` in seeded shuffled minibatches.

    The final partial batch is kept. Returns ``(params, opt, mean_loss)``
    where ``mean_loss`` averages the per-batch mean losses.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(X) == 0:
        raise EmptyDataError("cannot train on an empty dataset")
    order = epoch_order(len(X), cfg, epoch)
    losses = []
    for start in range(0, len(X), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        params, opt, loss = train_step(params, opt, X[idx], y[idx])
        losses.append(loss)
    return params, opt, float(np.mean(losses))


def accuracy(params, X, y):
    if len(X) == 0:
        raise EmptyDataError("cannot score an empty dataset")
    return 100.0 * float(np.mean(M.predict(params, X) == np.asarray(y)))


def fit(params: M.ModelParams, X, y, cfg: TrainConfig = TrainConfig(), X_val=None, y_val=None, log=None):
    """Train for exactly ``cfg.epochs`` epochs and return the last-epoch model.

    ``history`` has one dict per epoch with ``epoch``, ``train_loss`` and
    ``val_accuracy`` (inference-mode batch norm; ``None`` without a
    validation set).
    """
    if len(X) == 0:
        raise EmptyDataError("cannot train on an empty dataset")
    opt = cfg.make_optimizer(params)
    history = []
    for epoch in range(cfg.epochs):
        params, opt, loss = train_epoch(params, opt, X, y, cfg, epoch)
        val_acc = None
        if X_val is not None and len(X_val):
            val_acc = accuracy(params, X_val, y_val)
        history.append({"epoch": epoch + 1, "train_loss": loss, "val_accuracy": val_acc})
        if log is not None:
            log(history[-1])
    return params, history
