"""Mini-batch Adam training with best-validation model selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, ModelParams, init_params, loss_and_gradients, predict_proba

log = logging.getLogger(__name__)

PRECISIONS = {"single": np.float32, "double": np.float64}


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training diverged (non-finite loss) in epoch {epoch}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    early_stop_patience: int = 10
    seed: int = 0
    precision: str = "single"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 0:
            raise ValueError("batch_size and max_epochs must be >= 1, patience >= 0")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    best_val_acc: float


@dataclass
class History:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_acc(self) -> float:
        return self.epochs[self.best_epoch - 1].val_acc if self.best_epoch > 0 else float("nan")


class Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        c = self.cfg
        self.t += 1
        lr = c.learning_rate * np.sqrt(1 - c.beta2 ** self.t) / (1 - c.beta1 ** self.t)
        for k in params:
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            params[k] -= (lr * m / (np.sqrt(v) + c.eps)).astype(params[k].dtype, copy=False)


def evaluate(params, config: ModelConfig, x, y, batch_size: int = 256):
    """Mean cross-entropy and accuracy of segment predictions."""
    probs = predict_proba(params, config, x, batch_size)
    p = np.clip(probs[np.arange(len(y)), y].astype(np.float64), 1e-300, None)
    return float(-np.mean(np.log(p))), float(np.mean(probs.argmax(axis=1) == y))


def train(
    config: ModelConfig,
    train_config: TrainConfig,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    init: ModelParams = None,
):
    """Fit the model; returns the parameters of the best validation epoch and the history.

    Shuffling and dropout draw from one generator seeded by ``train_config.seed``.
    """
    x_train = np.asarray(x_train)
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    dtype = train_config.dtype
    x_train = x_train.astype(dtype, copy=False)
    x_val = np.asarray(x_val).astype(dtype, copy=False)
    y_val = np.asarray(y_val, dtype=np.int64)

    params = init.astype(dtype) if init is not None else init_params(
        config, x_train.shape[2], train_config.seed, dtype
    )
    rng = np.random.default_rng([train_config.seed, 0x7EA1])
    opt = Adam(params, train_config)
    history = History()
    best = params.copy()
    best_acc = -1.0
    bs = train_config.batch_size
    n = len(x_train)

    for epoch in range(1, train_config.max_epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            try:
                loss, grads, probs = loss_and_gradients(
                    params, config, x_train[idx], y_train[idx], rng=rng, return_probs=True
                )
            except FloatingPointError:
                raise TrainingDiverged(epoch) from None
            opt.step(params, grads)
            loss_sum += loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == y_train[idx]))
        train_loss, train_acc = loss_sum / n, correct / n
        val_loss, val_acc = evaluate(params, config, x_val, y_val)
        if not np.isfinite(train_loss):
            raise TrainingDiverged(epoch)
        if val_acc > best_acc:
            best_acc = val_acc
            best = params.copy()
            history.best_epoch = epoch
        history.epochs.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc, best_acc))
        log.info("epoch %d loss %.4f val_loss %.4f val_acc %.4f", epoch, train_loss, val_loss, val_acc)
        if epoch - history.best_epoch > train_config.early_stop_patience:
            break
    return best, history
