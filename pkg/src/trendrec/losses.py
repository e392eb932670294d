"""Difficulty-weighted cross-entropy.

Each sample's negative log-likelihood is scaled by (2 - 2p)^gamma, where p
is the probability currently assigned to the true next item. Low-p (hard)
samples are weighted up relative to high-p (easy) ones, increasingly so for
larger gamma; gamma = 0 recovers plain mean cross-entropy exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DataError

P_FLOOR = 1e-12


@dataclass
class LossConfig:
    gamma: float = 2.0
    # let gradients flow through the (2-2p)^gamma factor itself; by default
    # the factor is a per-sample constant, as in focal-loss practice
    factor_in_grad: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.gamma < 0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")


def adaptive_weight_loss(
    scores: Tensor,
    targets: np.ndarray,
    gamma: float,
    factor_in_grad: bool = False,
) -> Tensor:
    """Mean over the batch of -(2 - 2p)^gamma * log(p).

    ``scores`` holds normalized rows; p is the entry at each row's target
    index, clamped to [1e-12, 1] before the log.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be nonnegative, got {gamma}")
    targets = np.asarray(targets, dtype=np.int64)
    if scores.ndim != 2 or targets.shape != (scores.shape[0],):
        raise DataError(
            f"scores {scores.shape} and targets {targets.shape} do not align"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= scores.shape[1]):
        raise DataError(
            f"target IDs span [{targets.min()}, {targets.max()}] outside catalog of {scores.shape[1]}"
        )
    p = ag.clamp(ag.select_rows(scores, targets), min_value=P_FLOOR, max_value=1.0)
    nll = -ag.log(p)
    if factor_in_grad:
        base = ag.clamp(2.0 - p * 2.0, min_value=P_FLOOR)
        weighted = ag.mul(ag.power(base, gamma), nll)
    else:
        factor = np.power(2.0 - 2.0 * p.data, gamma)
        weighted = ag.mul(nll, factor)
    return ag.tmean(weighted)
