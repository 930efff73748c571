"""AdamW with linear warmup/decay and the deterministic training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Batch, as_batch
from .errors import ConfigInvalid, InvalidStep, NonFiniteGradient
from .losses import LossConfig, dpl_loss
from .prototypes import PrototypeBank


@dataclass
class OptimConfig:
    base_lr: float = 1e-2
    weight_decay: float = 2e-2
    warmup_fraction: float = 0.10
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epochs: int = 20
    batch_size: int = 4
    seed: int = 0

    def validate(self) -> None:
        if not self.base_lr > 0:
            raise ConfigInvalid("base_lr must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigInvalid("warmup_fraction must be in [0, 1)")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigInvalid("betas must be in (0, 1)")
        if self.weight_decay < 0 or not self.eps_adam > 0:
            raise ConfigInvalid("weight_decay must be >= 0 and eps_adam > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigInvalid("epochs must be >= 0 and batch_size >= 1")


@dataclass
class OptimState:
    step: int
    first_moment: np.ndarray
    second_moment: np.ndarray

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "OptimState":
        return cls(0, np.zeros_like(params), np.zeros_like(params))


def warmup_steps(total_steps: int, config: OptimConfig) -> int:
    return math.ceil(config.warmup_fraction * total_steps)


def lr_at(step: int, total_steps: int, config: OptimConfig) -> float:
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise InvalidStep(f"step {step} outside [0, {total_steps}]")
    warm = warmup_steps(total_steps, config)
    if step < warm:
        return config.base_lr * step / warm
    return config.base_lr * (total_steps - step) / max(total_steps - warm, 1)


def adamw_update(params: np.ndarray, grads: np.ndarray, state: OptimState, lr: float, config: OptimConfig) -> None:
    """One in-place AdamW step on ``params`` and ``state``."""
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    state.first_moment *= b1
    state.first_moment += (1 - b1) * grads
    state.second_moment *= b2
    state.second_moment += (1 - b2) * grads * grads
    m_hat = state.first_moment / (1 - b1 ** state.step)
    v_hat = state.second_moment / (1 - b2 ** state.step)
    params -= lr * (m_hat / (np.sqrt(v_hat) + config.eps_adam) + config.weight_decay * params)


def adamw_step(bank: PrototypeBank, grads: np.ndarray, state: OptimState, lr: float, config: OptimConfig):
    """Functional AdamW step; returns a new ``(bank, state)`` pair."""
    if np.shape(grads) != bank.params.shape:
        raise ConfigInvalid(f"gradient shape {np.shape(grads)} does not match {bank.params.shape}")
    new_state = OptimState(state.step, state.first_moment.copy(), state.second_moment.copy())
    params = bank.params.copy()
    adamw_update(params, np.asarray(grads, dtype=np.float64), new_state, lr, config)
    return PrototypeBank(params), new_state


def shuffle_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


LossFn = Callable[[np.ndarray, Batch], tuple[float, np.ndarray]]
MetricFn = Callable[[np.ndarray, Batch], float]


def fit(
    params: np.ndarray,
    loss_fn: LossFn,
    train_batch: Batch,
    config: OptimConfig,
    metric_fn: MetricFn | None = None,
    eval_batches: dict[str, Batch] | None = None,
) -> tuple[np.ndarray, list[dict]]:
    """Generic minibatch AdamW loop over a flat parameter array.

    Returns the trained copy of ``params`` and one history row per epoch
    and split with keys ``epoch``, ``split``, ``loss``, ``metric``.
    """
    config.validate()
    params = np.array(params, dtype=np.float64)
    history: list[dict] = []
    n = train_batch.n
    if config.epochs == 0:
        return params, history
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = config.epochs * steps_per_epoch
    state = OptimState.zeros_like(params)
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_rng(config.seed, epoch).permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            mb = train_batch.take(order[start:start + config.batch_size])
            value, grads = loss_fn(params, mb)
            losses.append(value)
            adamw_update(params, grads, state, lr_at(step, total, config), config)
            step += 1
        row = {"epoch": epoch + 1, "split": "train", "loss": float(np.mean(losses))}
        row["metric"] = metric_fn(params, train_batch) if metric_fn else float("nan")
        history.append(row)
        for name, eb in (eval_batches or {}).items():
            history.append({
                "epoch": epoch + 1,
                "split": name,
                "loss": loss_fn(params, eb)[0],
                "metric": metric_fn(params, eb) if metric_fn else float("nan"),
            })
    return params, history


def bank_metric(task: str) -> MetricFn:
    from .metrics import f1_macro, top1_accuracy
    from .scoring import batch_cosines

    def metric(params: np.ndarray, batch: Batch) -> float:
        z = batch_cosines(PrototypeBank(params).normalized()[0], batch)
        if task == "multilabel":
            return f1_macro(z > 0, batch.labels).value
        return top1_accuracy(np.argmax(z, axis=1), batch.labels).value

    return metric


def train(
    bank: PrototypeBank,
    train_set,
    loss_config: LossConfig,
    optim_config: OptimConfig,
    task: str = "multiclass",
    eval_sets: dict | None = None,
) -> tuple[PrototypeBank, list[dict]]:
    """Fit a prototype bank to frozen features with the combined objective."""
    loss_config.validate()
    batch = as_batch(train_set)
    evals = {k: as_batch(v) for k, v in (eval_sets or {}).items()}

    def loss_fn(params: np.ndarray, mb: Batch):
        out = dpl_loss(PrototypeBank(params), mb, loss_config, task)
        return out.value, out.grads

    params, history = fit(bank.params, loss_fn, batch, optim_config, bank_metric(task), evals)
    return PrototypeBank(params), history
