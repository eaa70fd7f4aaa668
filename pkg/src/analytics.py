"""
Inception-Score analysis of generated and real pose sequences.
"""
import logging
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel
from scipy.special import rel_entr

from src.exceptions import ScoreError
from src.modeling.classifier import ActionClassifier

logger = logging.getLogger(__name__)


class ScoreReport(BaseModel):
    """
    Frame- and video-level Inception Scores for a batch of sequences.

    Attributes:
        frame_is_mean: Mean frame score across splits
        frame_is_std: Its standard deviation
        video_is_mean: Mean video score across splits
        video_is_std: Its standard deviation
        per_timestep: Frame score of the frames at each time index
        samples: Number of sequences scored
    """
    frame_is_mean: float
    frame_is_std: float
    video_is_mean: float
    video_is_std: float
    per_timestep: List[float]
    samples: int


def _check_distributions(dists: np.ndarray) -> np.ndarray:
    dists = np.asarray(dists, dtype=np.float64)
    if dists.ndim != 2 or dists.shape[0] == 0:
        raise ScoreError(f"expected a non-empty (N, C) array of distributions, got shape {dists.shape}")
    if not np.all(np.isfinite(dists)) or np.any(dists < 0):
        raise ScoreError("distributions must be finite and non-negative")
    if not np.allclose(dists.sum(axis=1), 1.0, atol=1e-6):
        raise ScoreError("every distribution must sum to 1")
    return dists


def inception_score(dists: np.ndarray, splits: int = 10) -> Tuple[float, float]:
    """
    exp(mean KL(p(y|x) || p(y))) per split, with p(y) the split's marginal.

    Args:
        dists: Class distributions (N, C)
        splits: Number of contiguous splits (1 <= splits <= N)

    Returns:
        Tuple[float, float]: Mean and standard deviation across splits
    """
    dists = _check_distributions(dists)
    if not 1 <= splits <= dists.shape[0]:
        raise ScoreError(f"splits must lie in [1, {dists.shape[0]}], got {splits}")
    scores = []
    for part in np.array_split(dists, splits):
        marginal = part.mean(axis=0, keepdims=True)
        kl = rel_entr(part, marginal).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores)), float(np.std(scores))


def score_sequences(frames: np.ndarray, classifier: ActionClassifier, splits: int = 10) -> ScoreReport:
    """
    Frame scores from the pose stream and video scores from the fused streams.

    Args:
        frames: Sequences (N, T, 2J), T >= 2
        classifier: Trained action classifier
        splits: Requested split count (reduced to N when fewer sequences are given)

    Returns:
        ScoreReport: Scores and the per-timestep frame curve
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ScoreError(f"expected sequences (N, T, 2J), got shape {frames.shape}")
    count, length = frames.shape[:2]
    used = max(1, min(splits, count))
    per_frame = classifier.frame_distributions(frames)
    # time-major so every split mixes sequences at all time indices
    frame_mean, frame_std = inception_score(per_frame.transpose(1, 0, 2).reshape(count * length, -1), used)
    video_mean, video_std = inception_score(classifier.video_distributions(frames), used)
    per_timestep = [inception_score(per_frame[:, t], 1)[0] for t in range(length)]
    report = ScoreReport(
        frame_is_mean=frame_mean,
        frame_is_std=frame_std,
        video_is_mean=video_mean,
        video_is_std=video_std,
        per_timestep=per_timestep,
        samples=count,
    )
    logger.info("sequences_scored", extra={"record": report.model_dump(exclude={"per_timestep"})})
    return report


def compare_reports(reports: Dict[str, ScoreReport]) -> pd.DataFrame:
    """
    Side-by-side table of several reports (one row per named batch).

    Args:
        reports: Batch name -> report

    Returns:
        pd.DataFrame: Frame and video scores with their spreads
    """
    rows = [
        {
            "batch": name,
            "frame_is": report.frame_is_mean,
            "frame_is_std": report.frame_is_std,
            "video_is": report.video_is_mean,
            "video_is_std": report.video_is_std,
            "samples": report.samples,
        }
        for name, report in reports.items()
    ]
    return pd.DataFrame(rows)


def timestep_frame(report: ScoreReport) -> pd.DataFrame:
    """Per-timestep frame score as a two-column table."""
    return pd.DataFrame({"timestep": np.arange(len(report.per_timestep)), "frame_is": report.per_timestep})
