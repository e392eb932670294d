"""Top-K ranking metrics and the evaluation loop.

Ranks are 1-based: 1 + the number of items scored strictly higher, with
ties broken in favor of the smaller item ID so results are reproducible.
P@K is the fraction of samples ranked within K; MRR@K averages 1/rank,
counting zero beyond K. Both depend only on the ordering of scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Batch, Dataset, make_batches
from .errors import DataError
from .model import ModelConfig, ModelParams, forward_batch

Scorer = Callable[[Batch], np.ndarray]


@dataclass
class MetricReport:
    p_at: dict[int, float]
    mrr_at: dict[int, float]
    n_samples: int

    def csv_values(self, ks: Sequence[int] = (10, 20)) -> str:
        """Metric columns in training-log order: P@K, MRR@K per K."""
        cells = []
        for k in ks:
            cells.extend([f"{self.p_at[k]:.6f}", f"{self.mrr_at[k]:.6f}"])
        return ",".join(cells)


def rank_of_target(scores: np.ndarray, target: int) -> int:
    scores = np.asarray(scores)
    if not 0 <= target < scores.shape[-1]:
        raise DataError(f"target {target} outside catalog of {scores.shape[-1]}")
    s = scores[target]
    higher = int((scores > s).sum())
    ties_before = int((scores[:target] == s).sum())
    return 1 + higher + ties_before


def ranks_of_targets(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Vectorized ``rank_of_target`` over score rows."""
    scores = np.asarray(scores)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= scores.shape[1]):
        raise DataError(f"targets outside catalog of {scores.shape[1]}")
    picked = scores[np.arange(scores.shape[0]), targets][:, None]
    higher = (scores > picked).sum(axis=1)
    ties = (scores == picked) & (np.arange(scores.shape[1])[None, :] < targets[:, None])
    return (1 + higher + ties.sum(axis=1)).astype(np.int64)


def precision_at_k(ranks: Sequence[int], k: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise DataError("cannot compute metrics over zero ranks")
    return float(np.mean(ranks <= k))


def mrr_at_k(ranks: Sequence[int], k: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise DataError("cannot compute metrics over zero ranks")
    return float(np.mean(np.where(ranks <= k, 1.0 / ranks, 0.0)))


def report_from_ranks(ranks: Sequence[int], ks: Sequence[int] = (10, 20)) -> MetricReport:
    return MetricReport(
        p_at={k: precision_at_k(ranks, k) for k in ks},
        mrr_at={k: mrr_at_k(ranks, k) for k in ks},
        n_samples=len(ranks),
    )


def evaluate_scorer(
    scorer: Scorer,
    dataset: Dataset,
    ks: Sequence[int] = (10, 20),
    batch_size: int = 256,
    max_len: Optional[int] = None,
) -> MetricReport:
    """Rank every sample's true label under ``scorer`` and aggregate.

    Deterministic: batches are taken in dataset order without shuffling.
    """
    all_ranks: list[np.ndarray] = []
    for batch in make_batches(dataset, batch_size, shuffle=False, max_len=max_len):
        scores = scorer(batch)
        all_ranks.append(ranks_of_targets(scores, batch.labels))
    return report_from_ranks(np.concatenate(all_ranks), ks)


def model_scorer(params: ModelParams, config: ModelConfig) -> Scorer:
    """Eval-mode (dropout off) forward pass as a batch scorer."""

    def score(batch: Batch) -> np.ndarray:
        return forward_batch(batch, params, config, train=False).scores.data

    return score


def evaluate(
    params: ModelParams,
    config: ModelConfig,
    dataset: Dataset,
    ks: Sequence[int] = (10, 20),
    batch_size: int = 256,
) -> MetricReport:
    return evaluate_scorer(
        model_scorer(params, config), dataset, ks=ks, batch_size=batch_size, max_len=config.max_len
    )


def popularity_baseline(train_dataset: Dataset) -> Scorer:
    """Score every candidate by its training-split label frequency,
    independent of the session. A sanity yardstick, not a tuned model."""
    counts = np.zeros(train_dataset.num_items)
    for session in train_dataset:
        counts[session.label] += 1.0
    probs = counts / counts.sum()

    def score(batch: Batch) -> np.ndarray:
        return np.tile(probs, (len(batch), 1))

    return score
