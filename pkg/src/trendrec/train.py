"""Training orchestration: epoch loop, fit with best-checkpoint retention,
and the metric log.

Runs are bit-reproducible under a fixed seed: one RNG seeded from the
config drives parameter init, epoch shuffling, and dropout in a fixed
single-threaded order. The persisted metric log contains only
deterministic columns; wall-clock timings are returned to the caller (and
printed by the CLI) but never written into reproducibility artifacts.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset, make_batches
from .errors import ConfigError, NonFiniteError, TrainingDivergedError
from .losses import LossConfig, adaptive_weight_loss
from .metrics import MetricReport, evaluate
from .model import ModelConfig, ModelParams, forward_batch, init_params
from .optim import Adam

LOG_COLUMNS = ("epoch", "loss", "p_at_10", "mrr_at_10", "p_at_20", "mrr_at_20")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 50
    batch_size: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ConfigError("Adam betas must lie strictly between 0 and 1")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")


@dataclass
class EpochStats:
    mean_loss: float
    samples_per_sec: float


@dataclass
class EpochRow:
    """One fit() log row; ``seconds`` is reported but kept out of the
    persisted log so same-seed runs produce identical files."""

    epoch: int
    loss: float
    p_at_10: float
    mrr_at_10: float
    p_at_20: float
    mrr_at_20: float
    seconds: float

    def log_cells(self) -> str:
        return (
            f"{self.epoch},{self.loss!r},{self.p_at_10!r},{self.mrr_at_10!r},"
            f"{self.p_at_20!r},{self.mrr_at_20!r}"
        )

    def display(self) -> str:
        return (
            f"epoch {self.epoch}: loss {self.loss:.6f} "
            f"P@10 {self.p_at_10:.4f} MRR@10 {self.mrr_at_10:.4f} "
            f"P@20 {self.p_at_20:.4f} MRR@20 {self.mrr_at_20:.4f} "
            f"({self.seconds:.2f}s)"
        )


@dataclass
class FitResult:
    best_params: ModelParams
    best_epoch: int
    best_mrr20: float
    rows: list[EpochRow] = field(default_factory=list)
    final_params: Optional[ModelParams] = None


def train_epoch(
    dataset: Dataset,
    params: ModelParams,
    optimizer: Adam,
    model_config: ModelConfig,
    loss_config: LossConfig,
    batch_size: int,
    rng: np.random.Generator,
) -> EpochStats:
    """One shuffled pass: forward, difficulty-weighted loss, backward, Adam.

    Aborts with batch diagnostics the moment the loss stops being finite.
    """
    start = time.perf_counter()
    total_loss = 0.0
    n_samples = 0
    for batch_index, batch in enumerate(
        make_batches(dataset, batch_size, shuffle=True, rng=rng, max_len=model_config.max_len)
    ):
        try:
            out = forward_batch(batch, params, model_config, train=True, rng=rng)
            loss = adaptive_weight_loss(
                out.scores, batch.labels, loss_config.gamma, loss_config.factor_in_grad
            )
        except NonFiniteError:
            raise TrainingDivergedError(batch_index, float("nan")) from None
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise TrainingDivergedError(batch_index, loss_value)
        params.zero_grads()
        loss.backward()
        optimizer.step()
        total_loss += loss_value * len(batch)
        n_samples += len(batch)
    elapsed = max(time.perf_counter() - start, 1e-9)
    return EpochStats(mean_loss=total_loss / n_samples, samples_per_sec=n_samples / elapsed)


def fit(
    train_dataset: Dataset,
    test_dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    loss_config: LossConfig,
    on_epoch: Optional[Callable[[EpochRow], None]] = None,
    eval_batch_size: int = 256,
) -> FitResult:
    """Train for the configured epochs, evaluating P@{10,20} / MRR@{10,20}
    on the test split each epoch and retaining the best-by-MRR@20 params."""
    if train_dataset.num_items != test_dataset.num_items:
        raise ConfigError("train and test splits disagree on catalog size")
    rng = np.random.default_rng(train_config.seed)
    params = init_params(model_config, rng)
    optimizer = Adam(
        params.tensors(),
        learning_rate=train_config.learning_rate,
        beta1=train_config.adam_beta1,
        beta2=train_config.adam_beta2,
        eps=train_config.adam_eps,
    )
    best_params = params.clone()
    best_epoch = 0
    best_mrr20 = -1.0
    rows: list[EpochRow] = []
    for epoch in range(1, train_config.epochs + 1):
        tick = time.perf_counter()
        stats = train_epoch(
            train_dataset, params, optimizer, model_config, loss_config,
            train_config.batch_size, rng,
        )
        report = evaluate(params, model_config, test_dataset, ks=(10, 20), batch_size=eval_batch_size)
        row = EpochRow(
            epoch=epoch,
            loss=stats.mean_loss,
            p_at_10=report.p_at[10],
            mrr_at_10=report.mrr_at[10],
            p_at_20=report.p_at[20],
            mrr_at_20=report.mrr_at[20],
            seconds=time.perf_counter() - tick,
        )
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if report.mrr_at[20] > best_mrr20:
            best_mrr20 = report.mrr_at[20]
            best_epoch = epoch
            best_params = params.clone()
    return FitResult(
        best_params=best_params,
        best_epoch=best_epoch,
        best_mrr20=best_mrr20,
        rows=rows,
        final_params=params,
    )


def write_metric_log(rows: Sequence[EpochRow], path) -> None:
    """Persist the deterministic log columns as CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for row in rows:
            fh.write(row.log_cells() + "\n")
