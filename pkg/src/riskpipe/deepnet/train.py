"""Training loop with early stopping, random hyper-parameter search and checkpoints."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from ..core import read_container, write_container
from ..errors import ConfigError, DataError, NumericalError
from ..evaluate import auc_score
from .lrfind import LRFinderResult, lr_finder
from .model import LEARNABLE, NetConfig, NetParams, backward, forward, init_params, predict_logits, update_running_stats
from .optim import AdamWState, adamw_step, focal_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float | None = None  # None: pick with the range test
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    patience: int = 3
    max_epochs: int = 30
    gamma: float = 2.0
    alpha: float | None = None  # None: negative-class prevalence of the training part
    lr_min: float = 1e-7
    lr_max: float = 10.0
    lr_iters: int = 100

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience and max_epochs must be >= 1")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.weight_decay < 0 or self.gamma < 0:
            raise ConfigError("weight_decay and gamma must be non-negative")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")


class NetTrainer:
    """Parameters plus optimizer state; one ``step`` is one AdamW update."""

    def __init__(self, params: NetParams, cfg: TrainConfig, alpha: float, rng: np.random.Generator):
        self.params = params
        self.cfg = cfg
        self.alpha = alpha
        self.rng = rng
        self.opt = AdamWState()

    def state(self):
        return self.params.copy(), self.opt.copy(), self.rng.bit_generator.state

    def restore(self, state) -> None:
        params, opt, rng_state = state
        self.params, self.opt = params.copy(), opt.copy()
        self.rng.bit_generator.state = rng_state

    def loss_and_grads(self, X, y, masks=None):
        logits, st = forward(self.params, X, "train", rng=self.rng, masks=masks)
        loss, dl = focal_loss(logits, y, self.cfg.gamma, self.alpha)
        grads = backward(self.params, st, dl / len(y))
        return float(loss.mean()), grads, st

    def step(self, batch, lr: float) -> float:
        X, y = batch
        loss, grads, st = self.loss_and_grads(X, y)
        if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
            return float("nan")
        new = adamw_step(
            self.params.learnable(), grads, self.opt, lr, self.cfg.weight_decay, self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        )
        self.params.tensors.update(new)
        update_running_stats(self.params, st)
        return loss


def channel_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over examples, windows and time of [E, N, C, L]."""
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=(0, 1, 3))
    std = X.std(axis=(0, 1, 3))
    return mean, np.where(std > 1e-8, std, 1.0)


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, size):
        yield order[i : i + size]


def _cycled_batches(X, y, size, rng):
    while True:
        for idx in _batches(len(y), size, rng):
            yield X[idx], y[idx]


@dataclass
class TrainResult:
    params: NetParams
    history: list[dict]
    best_epoch: int
    best_val_auc: float
    lr: float
    lr_result: LRFinderResult | None = None


def train(
    X_train,
    y_train,
    X_val,
    y_val,
    net_cfg: NetConfig,
    train_cfg: TrainConfig | None = None,
    seed: int = 0,
) -> TrainResult:
    """Mini-batch training; keeps the weights of the best validation-AUC epoch.

    Stops once validation AUC has not improved for ``patience`` epochs or
    after ``max_epochs``.
    """
    cfg = train_cfg or TrainConfig()
    y_train = np.asarray(y_train).astype(np.int64)
    y_val = np.asarray(y_val).astype(np.int64)
    if len(np.unique(y_val)) < 2:
        raise DataError("validation part must contain both classes")
    if len(np.unique(y_train)) < 2:
        raise DataError("training part must contain both classes")
    X_train = np.asarray(X_train, dtype=np.float32)
    X_val = np.asarray(X_val, dtype=np.float32)

    rng = np.random.default_rng(seed)
    params = init_params(net_cfg, seed=int(rng.integers(2**31)))
    mean, std = channel_stats(X_train)
    params["input.mean"] = mean.astype(np.float32)
    params["input.std"] = std.astype(np.float32)
    alpha = cfg.alpha if cfg.alpha is not None else float(1.0 - y_train.mean())
    trainer = NetTrainer(params, cfg, alpha, rng)

    lr_result = None
    lr = cfg.lr
    if lr is None:
        lr_result = lr_finder(
            trainer, _cycled_batches(X_train, y_train, cfg.batch_size, np.random.default_rng(seed + 1)),
            cfg.lr_min, cfg.lr_max, cfg.lr_iters,
        )
        lr = lr_result.suggestion

    history = []
    best_auc, best_epoch, best_params = -np.inf, 0, params.copy()
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for idx in _batches(len(y_train), cfg.batch_size, rng):
            loss = trainer.step((X_train[idx], y_train[idx]), lr)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch} (lr={lr:.3g})")
            losses.append(loss)
        logits = predict_logits(trainer.params, X_val)
        val_loss = float(focal_loss(logits, y_val, cfg.gamma, alpha)[0].mean())
        val_auc = auc_score(logits, y_val)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val_loss, "val_auc": val_auc})
        log.info("epoch %d: train loss %.5f, val loss %.5f, val auc %.4f", epoch, np.mean(losses), val_loss, val_auc)
        if val_auc > best_auc:
            best_auc, best_epoch, best_params = val_auc, epoch, trainer.params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(best_params, history, best_epoch, float(best_auc), float(lr), lr_result)


# hyper-parameter search

TUNABLE = ("dropout", "weight_decay", "kernel_sizes", "feature_maps")


def sample_configs(space: dict, budget: int, seed: int = 0) -> list[dict]:
    """``budget`` draws; each key uniform over its list, independently."""
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    if not space or any(len(v) == 0 for v in space.values()):
        raise ConfigError("search space must be non-empty")
    unknown = set(space) - set(TUNABLE)
    if unknown:
        raise ConfigError(f"unknown search keys {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    keys = sorted(space)
    out = []
    for _ in range(budget):
        out.append({k: space[k][int(rng.integers(len(space[k])))] for k in keys})
    return out


def _config_key(c: dict) -> tuple:
    return tuple((k, tuple(v) if isinstance(v, (list, tuple)) else v) for k, v in sorted(c.items()))


def apply_choice(net_cfg: NetConfig, train_cfg: TrainConfig, choice: dict) -> tuple[NetConfig, TrainConfig]:
    net_keys = {k: (tuple(v) if k == "kernel_sizes" else v) for k, v in choice.items() if k != "weight_decay"}
    net = replace(net_cfg, **net_keys)
    tr = replace(train_cfg, weight_decay=choice["weight_decay"]) if "weight_decay" in choice else train_cfg
    return net, tr


def tune_net(
    space: dict,
    budget: int,
    folds: list[tuple],
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    seed: int = 0,
    objective: Callable | None = None,
    history: list | None = None,
) -> dict:
    """Random search; objective is the mean validation AUC over ``folds``.

    ``folds`` holds (X_train, y_train, X_val, y_val) tuples. Ties go to the
    lexicographically smaller configuration.
    """
    if objective is None:

        def objective(choice):
            net, tr = apply_choice(net_cfg, train_cfg, choice)
            return float(np.mean([train(*f, net, tr, seed=seed + i).best_val_auc for i, f in enumerate(folds)]))

    best, best_key = None, None
    seen = {}
    for choice in sample_configs(space, budget, seed):
        key = _config_key(choice)
        if key not in seen:
            seen[key] = float(objective(choice))
            log.info("net search %s: %.4f", choice, seen[key])
            if history is not None:
                history.append({"config": choice, "score": seen[key]})
        rank = (-round(seen[key], 12), key)
        if best_key is None or rank < best_key:
            best, best_key = choice, rank
    return best


# checkpoints


def save_checkpoint(params: NetParams, path: str | Path, train_cfg: TrainConfig | None = None, extra: dict | None = None) -> str:
    meta = {"kind": "net", "config": params.config.to_json()}
    if train_cfg is not None:
        meta["train_config"] = asdict(train_cfg)
    if extra:
        meta["extra"] = extra
    return write_container(path, {k: params[k] for k in sorted(params.tensors)}, meta)


def load_checkpoint(path: str | Path) -> tuple[NetParams, dict]:
    cols, meta = read_container(path)
    if meta.get("kind") != "net":
        raise DataError(f"{path}: not a network checkpoint")
    cfg = NetConfig.from_json(meta["config"])
    missing = set(LEARNABLE) - set(cols)
    if missing:
        raise DataError(f"{path}: missing tensors {sorted(missing)}")
    return NetParams(cfg, dict(cols)), meta
