"""Minibatch Adam on mean-squared error with validation early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DivergenceError, InvalidParameterError, ShapeError
from ..nn import ops
from ..nn.model import Sequential, set_params, snapshot
from ..nn.optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidParameterError("batch_size must be >= 1")
        if self.max_epochs < 0 or self.patience < 1:
            raise InvalidParameterError("need max_epochs >= 0 and patience >= 1")


@dataclass
class TrainingReport:
    initial_train_loss: float
    initial_val_loss: float
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0  # 0 means the initial weights were kept
    n_rejected_steps: int = 0
    stopped_early: bool = False
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        """Everything except the wall time, which is not reproducible."""
        d = asdict(self)
        d.pop("wall_time")
        return d


def evaluate_loss(model: Sequential, X, Y, batch_size: int = 64) -> float:
    total = 0.0
    for s in range(0, X.shape[0], batch_size):
        pred = model.forward(X[s:s + batch_size])
        total += float(np.sum((pred - Y[s:s + batch_size]) ** 2))
    return total / Y.size


def predict_batches(model: Sequential, X, batch_size: int = 64):
    return np.concatenate([model.forward(X[s:s + batch_size])
                           for s in range(0, X.shape[0], batch_size)])


def train_model(model: Sequential, X_train, Y_train, X_val, Y_val,
                config: TrainConfig = TrainConfig()) -> TrainingReport:
    """Train in place; the weights of the best validation epoch are restored.

    Each epoch visits the training set in an order drawn from
    ``default_rng((seed, epoch))``. The reported train loss is the mean of the
    minibatch losses seen during the epoch, the validation loss a full pass
    after it. A non-finite loss aborts with :class:`DivergenceError`.
    """
    X_train = np.asarray(X_train, dtype=float)
    Y_train = np.asarray(Y_train, dtype=float)
    X_val = np.asarray(X_val, dtype=float)
    Y_val = np.asarray(Y_val, dtype=float)
    if X_train.shape[0] != Y_train.shape[0] or X_val.shape[0] != Y_val.shape[0]:
        raise ShapeError("features and targets disagree on the number of samples")
    if X_val.shape[0] == 0:
        raise ShapeError("early stopping needs a non-empty validation split")
    start = time.perf_counter()
    report = TrainingReport(evaluate_loss(model, X_train, Y_train),
                            evaluate_loss(model, X_val, Y_val))
    best_val, best = report.initial_val_loss, snapshot(model)
    state = AdamState(lr=config.lr)
    params = model.named_params()
    n = X_train.shape[0]
    bad = 0
    for epoch in range(1, config.max_epochs + 1):
        order = np.random.default_rng((config.seed, epoch)).permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            pred = model.forward(X_train[idx])
            loss, grad = ops.mse_loss(pred, Y_train[idx])
            if not np.isfinite(loss):
                report.wall_time = time.perf_counter() - start
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            model.backward(grad, need_input_grad=False)
            adam_step(params, model.named_grads(), state)
            total += loss * len(idx)
        val = evaluate_loss(model, X_val, Y_val)
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        report.train_loss.append(total / n)
        report.val_loss.append(val)
        log.info("epoch %d train %.6g val %.6g", epoch, total / n, val)
        if val < best_val:
            best_val, best, bad = val, snapshot(model), 0
            report.best_epoch = epoch
        else:
            bad += 1
            if bad >= config.patience:
                report.stopped_early = True
                break
    set_params(model, best)
    report.n_rejected_steps = state.n_rejected
    report.wall_time = time.perf_counter() - start
    return report
