"""Optimizers, the training loop and test-set evaluation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import ops
from .architecture import (
    NetworkParams,
    NetworkSpec,
    check_params,
    infer_shapes,
    init_params,
    network_backward,
    network_forward,
)
from .data import LabeledDataset, augment, batch_iterator
from .errors import ConfigError, DivergenceError, ShapeError

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 15
    epochs: int = 60
    seed: int = 0
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    augment: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        # zero is allowed as a no-op diagnostic run
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]

    @property
    def accuracies(self) -> list[float]:
        return [e.train_acc for e in self.epochs]

    def to_csv(self) -> str:
        rows = ["epoch,loss,train_acc"]
        rows += [f"{e.epoch},{e.loss:.8f},{e.train_acc:.6f}" for e in self.epochs]
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class EvalResult:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def percent(self) -> str:
        """Accuracy as a percentage with two decimals, e.g. ``99.60``."""
        return f"{100 * self.accuracy:.2f}"

    def __add__(self, other: "EvalResult") -> "EvalResult":
        return EvalResult(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


# -- optimizers ----------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    *,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for key, p in params.items():
        g = grads[key]
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        m, v = state.m[key], state.v[key]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return state


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
    for key, p in params.items():
        p -= (lr * grads[key]).astype(p.dtype, copy=False)


# -- training ------------------------------------------------------------------


def _check_resolution(spec: NetworkSpec, data: LabeledDataset) -> None:
    r = data.resolution
    if r is not None and r != spec.input_resolution:
        raise ShapeError(
            f"dataset resolution {r}x{r} does not match model input resolution "
            f"{spec.input_resolution}x{spec.input_resolution}"
        )


def train(
    spec: NetworkSpec,
    data: LabeledDataset,
    cfg: TrainConfig = TrainConfig(),
    *,
    on_epoch: Callable[[EpochRecord], bool | None] | None = None,
) -> tuple[NetworkParams, TrainHistory]:
    """Train from a seeded initialization; deterministic given (spec, data, cfg).

    ``on_epoch`` sees every finished epoch; returning True ends training there.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    infer_shapes(spec)
    _check_resolution(spec, data)
    if cfg.augment:
        data = augment(data)
    params = init_params(spec, seed=cfg.seed)
    trainable = params.trainable()
    state = AdamState()
    arrays = data.arrays()
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        losses = []
        for b, (x, y) in enumerate(batch_iterator(data, cfg.batch_size, cfg.seed, epoch, arrays=arrays)):
            logits, tape = network_forward(spec, params, x, "train")
            loss, dz = ops.sigmoid_bce(logits, y.reshape(-1, 1))
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            grads = network_backward(tape, dz.astype(logits.dtype, copy=False))
            if cfg.optimizer == "adam":
                adam_step(trainable, grads, state, cfg.learning_rate)
            else:
                sgd_step(trainable, grads, cfg.learning_rate)
            losses.append(loss)
        acc = _evaluate_arrays(spec, params, *arrays).accuracy
        rec = EpochRecord(epoch + 1, float(np.mean(losses)), acc, time.perf_counter() - t0)
        history.epochs.append(rec)
        log.info("epoch %d loss %.5f train_acc %.4f (%.1fs)", rec.epoch, rec.loss, rec.train_acc, rec.seconds)
        if on_epoch is not None and on_epoch(rec):
            break
    return params, history


# -- evaluation ----------------------------------------------------------------


def _evaluate_arrays(spec, params, x, y, batch_size: int = 64) -> EvalResult:
    total = EvalResult(0, 0, 0, 0)
    for start in range(0, len(y), batch_size):
        logits, _ = network_forward(spec, params, x[start:start + batch_size], "infer")
        pred = ops.sigmoid(logits[:, 0]) > 0.5
        truth = y[start:start + batch_size] == 1
        total = total + EvalResult(
            tp=int(np.sum(pred & truth)),
            tn=int(np.sum(~pred & ~truth)),
            fp=int(np.sum(pred & ~truth)),
            fn=int(np.sum(~pred & truth)),
        )
    return total


def evaluate(spec: NetworkSpec, params: NetworkParams, data: LabeledDataset, batch_size: int = 64) -> EvalResult:
    """Infer-phase accuracy and confusion counts; label 1 iff sigmoid(logit) > 0.5."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    _check_resolution(spec, data)
    check_params(spec, params)
    return _evaluate_arrays(spec, params, *data.arrays(), batch_size=batch_size)
