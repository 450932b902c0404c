"""Experiment runner: train the spectral task under a chosen optimizer.

Each run is sequential and fully determined by (task seed, optimizer config,
run seed); independent (seed x config) runs can execute concurrently.  The
runner records per-epoch train/test relative L2 losses, the per-mode stable
ranks of the last full-batch gradient of the epoch, the optimizer's stored
moment scalars, and wall-clock time (kept out of the deterministic CSV).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .optim import (
    DenseAdamState,
    GaloreState,
    OptimizerConfig,
    RobustState,
    dense_adam_step,
    galore_step,
    moment_scalar_count,
    robust_step,
)
from .task import Dataset, LinearSpectralModel, SpectralTask, generate_task
from .tensor_ops import fro_norm, stable_rank

__all__ = ["NanLossError", "RunRecord", "run_experiment", "train_once"]

OPTIMIZERS = ("adam", "robust", "galore")


class NanLossError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class RunRecord:
    label: str
    optimizer: str
    seed: int
    train_losses: list[float] = field(default_factory=list)
    test_losses: list[float] = field(default_factory=list)
    grad_stable_ranks: list[list[float]] = field(default_factory=list)
    state_scalars: int = 0
    wall_clock: float = 0.0

    @property
    def final_test_loss(self) -> float:
        return self.test_losses[-1]

    @property
    def epochs(self) -> int:
        return len(self.train_losses)


def _make_state(kind: str):
    if kind == "adam":
        return DenseAdamState()
    if kind == "robust":
        return RobustState()
    if kind == "galore":
        return GaloreState()
    raise ValueError(f"unknown optimizer kind {kind!r}")


def _step_fn(kind: str):
    return {"adam": dense_adam_step, "robust": robust_step, "galore": galore_step}[kind]


def train_once(
    data: Dataset,
    optimizer: str,
    cfg: OptimizerConfig,
    epochs: int,
    seed: int,
    batch_size: int = 64,
    label: str | None = None,
    lr_step: tuple[float, float] | None = None,
) -> RunRecord:
    """Train one model initialization; returns the per-epoch record.

    `lr_step` = (epoch_fraction, factor) applies a single step decay to the
    learning rate partway through; schedules beyond constant and step decay
    are out of scope.
    """
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer kind {optimizer!r}")
    task = data.task
    model = LinearSpectralModel(task)
    train_cache = model.build_cache(data.x_train, data.y_train)
    test_cache = model.build_cache(data.x_test, data.y_test)
    rng = np.random.default_rng(seed)
    shape = task.weight_shape
    r = 0.01 * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    state = _make_state(optimizer)
    step = _step_fn(optimizer)
    record = RunRecord(label=label or optimizer, optimizer=optimizer, seed=seed)
    n_train = data.x_train.shape[0]
    batch_size = min(batch_size, n_train)
    start = time.perf_counter()
    for epoch in range(epochs):
        if lr_step is not None and epoch == int(lr_step[0] * epochs):
            cfg = replace(cfg, lr=cfg.lr * lr_step[1])
        order = rng.permutation(n_train)
        for lo in range(0, n_train, batch_size):
            idx = order[lo: lo + batch_size]
            loss, grad = model.cached_loss_and_grad(r, train_cache, idx)
            if not np.isfinite(loss):
                raise NanLossError(
                    f"non-finite loss at step {getattr(state, 't', '?')} "
                    f"(optimizer={optimizer}, seed={seed})"
                )
            r = step(r, grad, state, cfg)
        train_loss, full_grad = model.cached_loss_and_grad(r, train_cache)
        test_loss = model.cached_loss(r, test_cache)
        if not (np.isfinite(train_loss) and np.isfinite(test_loss)):
            raise NanLossError(f"non-finite epoch loss (optimizer={optimizer}, seed={seed})")
        record.train_losses.append(train_loss)
        record.test_losses.append(test_loss)
        if fro_norm(full_grad) > 0.0:
            ranks = [stable_rank(full_grad, k) for k in range(full_grad.ndim)]
        else:
            ranks = [float("nan")] * full_grad.ndim
        record.grad_stable_ranks.append(ranks)
    record.state_scalars = moment_scalar_count(state)
    record.wall_clock = time.perf_counter() - start
    return record


def run_experiment(
    task: SpectralTask,
    optimizer: str,
    cfg: OptimizerConfig,
    epochs: int,
    seeds: list[int],
    batch_size: int = 64,
    label: str | None = None,
    data: Dataset | None = None,
) -> list[RunRecord]:
    """One record per seed; the dataset is shared and fixed by the task seed."""
    if data is None:
        data = generate_task(task)
    return [
        train_once(data, optimizer, cfg, epochs, seed, batch_size=batch_size, label=label)
        for seed in seeds
    ]
