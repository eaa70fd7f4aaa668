"""
Feature engineering for pose sequences: class means, frame deltas and the
perturbations used to sanity-check the evaluation scores.
"""
from typing import Optional

import numpy as np
import pandas as pd

from src.exceptions import DatasetError, ShapeError
from src.models import Dataset


def class_mean_poses(poses: np.ndarray, labels: np.ndarray, class_count: int) -> np.ndarray:
    """
    Mean pose per class.

    Args:
        poses: Pose vectors (N, 2J)
        labels: Integer labels (N,)
        class_count: Number of classes C

    Returns:
        np.ndarray: Means (C, 2J)
    """
    poses = np.asarray(poses, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels, minlength=class_count)
    if len(counts) > class_count or np.any(counts[:class_count] == 0):
        raise DatasetError(f"every one of {class_count} classes needs at least one pose")
    sums = np.zeros((class_count, poses.shape[1]))
    np.add.at(sums, labels, poses)
    return sums / counts[:, None]


def nearest_mean_classify(poses: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Label of the closest class mean (Euclidean) for each row."""
    poses = np.atleast_2d(np.asarray(poses, dtype=np.float64))
    distances = np.linalg.norm(poses[:, None, :] - np.asarray(means)[None, :, :], axis=2)
    return distances.argmin(axis=1)


def frame_deltas(frames: np.ndarray) -> np.ndarray:
    """Frame-to-frame differences along the time axis (second to last)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 2 or frames.shape[-2] < 2:
        raise ShapeError("deltas need at least two frames")
    return np.diff(frames, axis=-2)


def mean_step(frames: np.ndarray) -> float:
    """Mean Euclidean distance between consecutive frames, over (T, D) or (N, T, D)."""
    return float(np.linalg.norm(frame_deltas(frames), axis=-1).mean())


def shuffle_frames(frames: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Randomly reorder frames in time, independently per sequence.

    Args:
        frames: (T, D) or (N, T, D)
        rng: Random generator

    Returns:
        np.ndarray: Shuffled copy
    """
    rng = rng or np.random.default_rng()
    frames = np.array(frames, dtype=np.float64)
    if frames.ndim == 2:
        return frames[rng.permutation(frames.shape[0])]
    # one permutation per sequence
    return np.stack([seq[rng.permutation(seq.shape[0])] for seq in frames])


def splice_classes(first: np.ndarray, second: np.ndarray, cut: Optional[int] = None) -> np.ndarray:
    """
    Chimeric sequence: frames before ``cut`` from ``first``, the rest from ``second``.

    Args:
        first: Frames (T, D)
        second: Frames (T, D)
        cut: Switch index (default T // 2)

    Returns:
        np.ndarray: Spliced frames (T, D)
    """
    first = np.asarray(first, dtype=np.float64)
    second = np.asarray(second, dtype=np.float64)
    if first.shape != second.shape:
        raise ShapeError(f"cannot splice {first.shape} with {second.shape}")
    cut = first.shape[0] // 2 if cut is None else cut
    if not 0 <= cut <= first.shape[0]:
        raise ShapeError(f"cut {cut} outside [0, {first.shape[0]}]")
    return np.concatenate([first[:cut], second[cut:]])


def chimeric_batch(frames: np.ndarray, labels: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Splice every sequence with a random sequence of another class at the midpoint.

    Args:
        frames: Batch (N, T, D)
        labels: Integer class per sequence (N,)
        rng: Random generator

    Returns:
        np.ndarray: Chimeric batch (N, T, D)
    """
    rng = rng or np.random.default_rng()
    frames = np.asarray(frames, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if frames.ndim != 3 or len(labels) != frames.shape[0]:
        raise ShapeError(f"expected (N, T, D) frames with N labels, got {frames.shape} and {labels.shape}")
    spliced = []
    for index, label in enumerate(labels):
        others = np.flatnonzero(labels != label)
        if others.size == 0:
            raise DatasetError("chimeric sequences need at least two classes")
        spliced.append(splice_classes(frames[index], frames[rng.choice(others)]))
    return np.stack(spliced)


def class_motion_summary(ds: Dataset) -> pd.DataFrame:
    """
    Per-class statistics: sequence count, mean step and pose spread.

    Args:
        ds: Dataset

    Returns:
        pd.DataFrame: One row per class, in vocabulary order
    """
    rows = []
    for name in ds.classes:
        members = [seq for seq in ds.sequences if seq.class_name == name]
        if not members:
            rows.append({"class_name": name, "sequences": 0, "mean_step": np.nan, "pose_spread": np.nan})
            continue
        frames = np.concatenate([seq.frames for seq in members])
        steps = [mean_step(seq.frames) for seq in members if seq.length > 1]
        rows.append(
            {
                "class_name": name,
                "sequences": len(members),
                "mean_step": float(np.mean(steps)) if steps else 0.0,
                "pose_spread": float(frames.std(axis=0).mean()),
            }
        )
    return pd.DataFrame(rows)
