"""Adam, early stopping and the mini-batch training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, InputError, TrainingError
from .model import ModelSpec, TrainedModel, build_network, forward, initialize, loss_and_gradients

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grad, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, mask=None):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    Coordinates outside ``mask`` keep their parameters and moments untouched.
    """
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    if mask is not None:
        new = np.where(mask, new, params)
        m = np.where(mask, m, state.m)
        v = np.where(mask, v, state.v)
    return new, AdamState(m, v, t)


class EarlyStopping:
    """Stop once the monitored loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int = 15):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record ``loss`` for ``epoch``; returns True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 500
    early_stopping_patience: int = 15
    restore_best: bool = True
    learning_rate: float | None = None  # None: use the spec's learning rate
    rng_seed: int = 0

    def __post_init__(self):
        if self.early_stopping_patience < 1:
            raise ConfigError("early_stopping_patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")


def _loss(model, x, y):
    pred = forward(model, x)
    d = pred - np.asarray(y, dtype=float).reshape(pred.shape)
    return float(np.mean(d * d))


def train(
    spec: ModelSpec,
    train_set,
    val_set,
    cfg: TrainConfig | None = None,
    init: TrainedModel | None = None,
    frozen_layers=(),
) -> TrainedModel:
    """Minimise MSE with mini-batch Adam and early stopping on ``val_set``.

    ``train_set`` and ``val_set`` are ``(inputs, targets)`` pairs.  Starting
    from ``init`` (else a fresh seeded initialisation), layers listed in
    ``frozen_layers`` are left bit-identical.
    """
    cfg = cfg or TrainConfig()
    x, y = (np.asarray(a, dtype=float) for a in train_set)
    xv, yv = (np.asarray(a, dtype=float) for a in val_set)
    if len(x) == 0 or len(xv) == 0:
        raise InputError("training and validation sets must be non-empty")
    if len(x) != len(y) or len(xv) != len(yv):
        raise InputError("inputs and targets differ in length")
    net = build_network(spec)
    frozen = frozenset(frozen_layers)
    model = init.copy() if init is not None else initialize(spec, cfg.rng_seed)
    if model.spec != spec:
        model = TrainedModel(spec, model.params, model.state, model.history, model.rng_seed)
    mask = ~net.layer_mask(frozen) if frozen else None
    lr = cfg.learning_rate if cfg.learning_rate is not None else spec.learning_rate
    rng = np.random.default_rng(cfg.rng_seed)
    adam = AdamState.zeros(net.n_params)
    stopper = EarlyStopping(cfg.early_stopping_patience)
    best = model.copy()
    start_epoch = len(model.history)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x))
        total, seen = 0.0, 0
        for i in range(0, len(x), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss, grad, new_state = loss_and_gradients(model, x[idx], y[idx], "train", rng, frozen)
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(f"non-finite training loss in epoch {epoch}", epoch=epoch)
            model.params, adam = adam_step(model.params, grad, adam, lr, mask=mask)
            model.state = new_state
            total += loss * len(idx)
            seen += len(idx)
        train_loss = total / seen
        val_loss = _loss(model, xv, yv)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss in epoch {epoch}", epoch=epoch)
        model.history.append({"epoch": start_epoch + epoch, "train_loss": train_loss, "val_loss": val_loss})
        improved = val_loss < stopper.best
        stop = stopper.update(epoch, val_loss)
        if improved:
            best = model.copy()
        if stop:
            log.debug("early stop at epoch %d (best %d)", epoch, stopper.best_epoch)
            break
    if cfg.restore_best:
        best.history = model.history
        return best
    return model
