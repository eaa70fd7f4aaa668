"""
Training-loop utilities shared by every trainer: minibatch sampling,
Adam updates over named parameters, and loss-history bookkeeping.
"""
import logging
import os
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from src.modeling.networks import Bound, Params, gradients_by_name
from src.numerics import AdamHyper, AdamState, Tape, Var, adam_step, backward

logger = logging.getLogger(__name__)


class LossHistory:
    """
    Accumulates one row of loss terms per step and logs every ``log_every`` rows.

    Args:
        name: Trainer name used in log records
        log_every: Logging period in rows (0 disables step logging)
    """

    def __init__(self, name: str, log_every: int = 100):
        self.name = name
        self.log_every = log_every
        self.rows: List[Dict[str, float]] = []

    def append(self, step: int, **terms: float) -> None:
        row = {"step": step, **{key: float(value) for key, value in terms.items()}}
        self.rows.append(row)
        if self.log_every and (step % self.log_every == 0):
            logger.info("train_step", extra={"record": {"trainer": self.name, **row}})

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def save_history(history: pd.DataFrame, path: str) -> None:
    """
    Write a loss history to CSV.

    Args:
        history: DataFrame returned by a trainer
        path: Output file path
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    history.to_csv(path, index=False)


def sample_batch(rng: np.random.Generator, size: int, batch: int) -> np.ndarray:
    """Indices of a minibatch drawn with replacement."""
    return rng.integers(0, size, size=batch)


def epoch_batches(rng: np.random.Generator, size: int, batch: int) -> Iterator[np.ndarray]:
    """Shuffled, non-overlapping minibatches covering one epoch."""
    order = rng.permutation(size)
    for start in range(0, size, batch):
        yield order[start : start + batch]


def steps_per_epoch(size: int, batch: int) -> int:
    return max(1, -(-size // batch))


class Trainable:
    """
    Named parameters plus their Adam state.

    ``update`` differentiates a loss recorded against ``bound`` leaves and
    applies one Adam step.
    """

    def __init__(self, params: Mapping[str, np.ndarray], hyper: AdamHyper):
        self.params: Params = {name: np.array(value) for name, value in params.items()}
        self.state = AdamState.create(self.params, hyper)

    def update(self, tape: Tape, loss: Var, bound: Bound, epoch: int = 0) -> None:
        grads = gradients_by_name(backward(tape, loss, list(bound.values())), bound)
        self.params, self.state = adam_step(self.params, grads, self.state, epoch)
