"""
Two-stream action classifier over pose sequences: a pose stream sees single
frames, a motion stream sees frame deltas, and the video-level prediction
averages their class log-probabilities.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.special import log_softmax, softmax

from src.exceptions import DatasetError, ShapeError
from src.features import frame_deltas
from src.models import Dataset, Split, one_hot_rows
from src.modeling.networks import Params, bind, freeze_params, init_mlp, mlp_forward, mlp_numpy
from src.modeling.train import LossHistory, Trainable, sample_batch
from src.numerics import AdamHyper, Tape, Var
from src.numerics import ops

logger = logging.getLogger(__name__)


class ClassifierConfig(BaseModel):
    """
    Settings for the evaluation classifier.

    Attributes:
        hidden: Hidden widths of both stream MLPs
        steps: Adam updates
        batch_size: Sequences per minibatch
        hyper: Adam settings
        log_every: Steps between log records
    """
    hidden: List[int] = [64]
    steps: int = Field(300, ge=1)
    batch_size: int = Field(32, ge=1)
    hyper: AdamHyper = AdamHyper(lr=0.003, beta1=0.9, beta2=0.999)
    log_every: int = Field(50, ge=0)


@dataclass(frozen=True, eq=False)
class ActionClassifier:
    """
    Pose and motion stream MLPs plus the input standardization they were trained with.

    Attributes:
        params: Stream weights, prefixes ``pose_`` and ``motion_``
        stats: Standardization arrays (means and scales of poses and deltas)
        class_count: Number of classes C
    """

    params: Params
    stats: Params
    class_count: int

    @classmethod
    def create(
        cls, rng: np.random.Generator, pose_width: int, class_count: int, hidden: List[int], stats: Optional[Params] = None
    ) -> "ActionClassifier":
        params = {
            **init_mlp(rng, [pose_width, *hidden, class_count], "pose_"),
            **init_mlp(rng, [pose_width, *hidden, class_count], "motion_"),
        }
        stats = stats or {
            "pose_mean": np.zeros(pose_width),
            "pose_scale": np.ones(pose_width),
            "motion_mean": np.zeros(pose_width),
            "motion_scale": np.ones(pose_width),
        }
        return cls(freeze_params(params), freeze_params(stats), class_count)

    def with_params(self, params: Params) -> "ActionClassifier":
        return ActionClassifier(freeze_params(params), self.stats, self.class_count)

    @property
    def pose_width(self) -> int:
        return int(self.stats["pose_mean"].shape[0])

    @property
    def dims(self) -> Dict[str, int]:
        return {"J": self.pose_width // 2, "C": self.class_count}

    def _check(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim != 3 or frames.shape[2] != self.pose_width:
            raise ShapeError(f"expected sequences (N, T, {self.pose_width}), got {frames.shape}")
        return frames

    def pose_log_probs(self, poses: np.ndarray) -> np.ndarray:
        """Pose-stream class log-probabilities for rows of poses."""
        x = (poses - self.stats["pose_mean"]) / self.stats["pose_scale"]
        return log_softmax(mlp_numpy(self.params, x, "pose_"), axis=-1)

    def motion_log_probs(self, deltas: np.ndarray) -> np.ndarray:
        x = (deltas - self.stats["motion_mean"]) / self.stats["motion_scale"]
        return log_softmax(mlp_numpy(self.params, x, "motion_"), axis=-1)

    def frame_distributions(self, frames: np.ndarray) -> np.ndarray:
        """
        Pose-stream class distribution of every frame.

        Args:
            frames: Sequences (N, T, 2J) or one sequence (T, 2J)

        Returns:
            np.ndarray: Distributions (N, T, C)
        """
        frames = self._check(frames)
        n, t, d = frames.shape
        return np.exp(self.pose_log_probs(frames.reshape(n * t, d))).reshape(n, t, self.class_count)

    def video_distributions(self, frames: np.ndarray) -> np.ndarray:
        """
        Fused class distribution per sequence: softmax of the two streams' averaged mean log-probabilities.

        Args:
            frames: Sequences (N, T, 2J), T >= 2

        Returns:
            np.ndarray: Distributions (N, C)
        """
        frames = self._check(frames)
        n, t, d = frames.shape
        pose = self.pose_log_probs(frames.reshape(n * t, d)).reshape(n, t, -1).mean(axis=1)
        deltas = frame_deltas(frames)
        motion = self.motion_log_probs(deltas.reshape(n * (t - 1), d)).reshape(n, t - 1, -1).mean(axis=1)
        return softmax(0.5 * (pose + motion), axis=-1)

    def predict(self, frames: np.ndarray) -> np.ndarray:
        return self.video_distributions(frames).argmax(axis=1)


def _stream_loss(bound: Dict[str, Var], x: np.ndarray, labels: np.ndarray, prefix: str, class_count: int) -> Var:
    tape = next(iter(bound.values())).tape
    logp = ops.log_softmax(mlp_forward(bound, tape.constant(x), prefix), axis=1)
    picked = ops.mul_const(logp, one_hot_rows(labels, class_count))
    return ops.scale(ops.sum_(picked), -1.0 / len(labels))


def classifier_loss(
    classifier: ActionClassifier, frames: np.ndarray, labels: np.ndarray
) -> Tuple[Tape, Var, Dict[str, Var], Dict[str, float]]:
    """Cross-entropy of the pose stream on every frame plus the motion stream on every delta."""
    n, t, d = frames.shape
    tape = Tape()
    bound = bind(tape, classifier.params)
    stats = classifier.stats
    poses = (frames.reshape(n * t, d) - stats["pose_mean"]) / stats["pose_scale"]
    deltas = (frame_deltas(frames).reshape(n * (t - 1), d) - stats["motion_mean"]) / stats["motion_scale"]
    pose_loss = _stream_loss(bound, poses, np.repeat(labels, t), "pose_", classifier.class_count)
    motion_loss = _stream_loss(bound, deltas, np.repeat(labels, t - 1), "motion_", classifier.class_count)
    loss = ops.add(pose_loss, motion_loss)
    return tape, loss, bound, {"pose_loss": float(pose_loss.value), "motion_loss": float(motion_loss.value)}


@dataclass
class ClassifierResult:
    classifier: ActionClassifier
    accuracy: float
    history: pd.DataFrame = field(repr=False)


def standardization(frames: np.ndarray) -> Params:
    """Means and scales of poses and deltas over a stack of sequences."""
    n, t, d = frames.shape
    poses = frames.reshape(n * t, d)
    deltas = frame_deltas(frames).reshape(n * (t - 1), d)
    return {
        "pose_mean": poses.mean(axis=0),
        "pose_scale": np.maximum(poses.std(axis=0), 1e-6),
        "motion_mean": deltas.mean(axis=0),
        "motion_scale": np.maximum(deltas.std(axis=0), 1e-6),
    }


def train_classifier(ds: Dataset, cfg: Optional[ClassifierConfig] = None, seed: int = 0) -> ClassifierResult:
    """
    Train both streams with cross-entropy on the train split and measure video accuracy on the test split.

    Args:
        ds: Dataset with train and test sequences of one length
        cfg: Training settings
        seed: Random seed

    Returns:
        ClassifierResult: Classifier, held-out accuracy and per-step history
    """
    cfg = cfg or ClassifierConfig()
    if ds.class_count < 2:
        raise DatasetError("a classifier needs at least two classes")
    train, test = ds.split(Split.TRAIN), ds.split(Split.TEST)
    if not train.sequences or not test.sequences:
        raise DatasetError("classifier training needs both a train and a test split")
    train.require_classes()
    frames, labels = train.stacked(), train.labels()
    if frames.shape[1] < 2:
        raise DatasetError("sequences need at least two frames")

    rng = np.random.default_rng(seed)
    classifier = ActionClassifier.create(rng, frames.shape[2], ds.class_count, cfg.hidden, standardization(frames))
    opt = Trainable(classifier.params, cfg.hyper)
    history = LossHistory("classifier", cfg.log_every)
    for step in range(cfg.steps):
        idx = sample_batch(rng, len(labels), cfg.batch_size)
        tape, loss, bound, terms = classifier_loss(classifier.with_params(opt.params), frames[idx], labels[idx])
        opt.update(tape, loss, bound)
        history.append(step, loss=float(loss.value), **terms)

    trained = classifier.with_params(opt.params)
    accuracy = float(np.mean(trained.predict(test.stacked()) == test.labels()))
    logger.info("classifier_trained", extra={"record": {"steps": cfg.steps, "accuracy": accuracy, "seed": seed}})
    return ClassifierResult(classifier=trained, accuracy=accuracy, history=history.to_frame())
