"""Minibatch training loop with validation-driven early stopping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NumericError
from .optim import Adam
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    patience: int = 5
    seed: int = 0


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    val_scores: list = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = float("-inf")


def fit(params: dict[str, Tensor], batch_loss: Callable[[np.ndarray], Tensor], n_samples: int,
        config: TrainConfig, validate: Callable[[], float] | None = None) -> TrainHistory:
    """Minimise ``batch_loss(indices)`` with Adam over shuffled minibatches.

    After every epoch ``validate()`` is called (higher is better); the best
    parameters seen are restored at the end and training stops after
    ``patience`` epochs without improvement.
    """
    rng = np.random.default_rng(config.seed)
    opt = Adam(params, lr=config.lr)
    hist = TrainHistory()
    best_state = None
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n_samples)
        total = 0.0
        for start in range(0, n_samples, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            loss = batch_loss(idx)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"training diverged: non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += value * idx.size
        hist.losses.append(total / max(n_samples, 1))
        if validate is None:
            continue
        score = float(validate())
        hist.val_scores.append(score)
        logger.debug("epoch %d loss %.5f val %.4f", epoch, hist.losses[-1], score)
        if score > hist.best_score:
            hist.best_score, hist.best_epoch = score, epoch
            best_state = {k: p.data.copy() for k, p in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best_state is not None:
        for k, p in params.items():
            p.data = best_state[k]
    return hist
