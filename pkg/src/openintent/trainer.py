"""Supervised pre-training on known intents with Adam and early stopping on dev accuracy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DimensionError, DivergenceError, FreezeViolation, NumericError
from .rng import stream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    rng_seed: int = 0
    check_frozen: bool = False
    restore_best: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @classmethod
    def reference(cls, **overrides):
        """The reference-scale preset: a single 2e-5 rate for prefixes and encoder."""
        return cls(**{"learning_rate": 2e-5, **overrides})


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params, grads, state, lr):
    """One Adam update of every trainable parameter in ``params`` (name -> Parameter)."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        if not p.trainable:
            continue
        g = grads[name]
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match {name} {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.state = AdamState(beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params.values():
            if p.trainable:
                p.zero_grad()

    def step(self):
        grads = {name: p.grad for name, p in self.params.items() if p.trainable}
        optimizer_step(self.params, grads, self.state, self.lr)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_acc: float


@dataclass
class TrainResult:
    model: object
    history: list
    best_epoch: int
    best_dev_acc: float
    steps: int = 0

    def history_rows(self):
        return [(r.epoch, r.train_loss, r.dev_acc) for r in self.history]


def accuracy(model, data):
    if len(data) == 0:
        return 0.0
    return float((model.predict(data.ids, data.mask) == data.labels).mean())


def train(model, train_set, dev_set, plan, cfg):
    """Optimize exactly the parameters the tuning plan unfreezes.

    Unless ``cfg.restore_best`` is off, the parameter snapshot with the best
    dev accuracy (ties keep the earlier epoch) is restored into ``model``.
    """
    if len(train_set) == 0:
        raise DataError("empty training set")
    model.apply_plan(plan)
    params = model.parameters()
    opt = Adam(params, lr=cfg.learning_rate)
    rng = stream(cfg.rng_seed, "batches")
    trainable = [n for n, p in params.items() if p.trainable]
    frozen = {n: p.data.copy() for n, p in params.items() if not p.trainable} if cfg.check_frozen else {}

    eval_set = dev_set if len(dev_set) else train_set
    best_acc = accuracy(model, eval_set)
    best_epoch, best_state = 0, {n: params[n].data.copy() for n in trainable}
    history, stale, steps = [], 0, 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            opt.zero_grad()
            try:
                loss = model.loss(train_set.ids[idx], train_set.mask[idx], train_set.labels[idx])
            except NumericError as exc:
                raise DivergenceError(f"non-finite loss in epoch {epoch}: {exc}", epoch=epoch) from exc
            loss.backward()
            opt.step()
            steps += 1
            total += loss.item() * len(idx)
            for n, before in frozen.items():
                if not np.array_equal(params[n].data, before):
                    raise FreezeViolation(f"frozen parameter {n} changed in epoch {epoch}")
        dev_acc = accuracy(model, eval_set)
        history.append(EpochRecord(epoch, total / len(order), dev_acc))
        log.debug("epoch %d loss %.6f dev_acc %.4f", epoch, total / len(order), dev_acc)
        if dev_acc > best_acc:
            best_acc, best_epoch, stale = dev_acc, epoch, 0
            best_state = {n: params[n].data.copy() for n in trainable}
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    if cfg.restore_best:
        for n, value in best_state.items():
            params[n].data = value
    return TrainResult(model, history, best_epoch, best_acc, steps)
