"""
Tests for pose feature helpers.
"""
import numpy as np
import pytest

from src.exceptions import DatasetError, ShapeError
from src.features import (
    chimeric_batch,
    class_mean_poses,
    class_motion_summary,
    frame_deltas,
    mean_step,
    nearest_mean_classify,
    shuffle_frames,
    splice_classes,
)


def test_class_means():
    """Means are taken per label."""
    poses = np.array([[0.0, 0.0], [2.0, 2.0], [10.0, 0.0]])
    np.testing.assert_allclose(class_mean_poses(poses, np.array([0, 0, 1]), 2), [[1.0, 1.0], [10.0, 0.0]])


def test_class_means_require_every_class():
    """An empty class is an error."""
    with pytest.raises(DatasetError):
        class_mean_poses(np.zeros((2, 2)), np.array([0, 0]), 2)


def test_nearest_mean():
    """Rows go to the closest center."""
    means = np.array([[0.0, 0.0], [1.0, 1.0]])
    np.testing.assert_array_equal(nearest_mean_classify(np.array([[0.1, 0.0], [0.9, 1.2]]), means), [0, 1])


def test_mean_step_of_ramp():
    """A unit step per frame along x has mean step 1."""
    frames = np.stack([np.arange(5.0), np.zeros(5)], axis=1)
    assert mean_step(frames) == pytest.approx(1.0)


def test_deltas_need_two_frames():
    """One frame has no deltas."""
    with pytest.raises(ShapeError):
        frame_deltas(np.zeros((1, 4)))


def test_shuffle_keeps_frames():
    """Shuffling permutes frames per sequence."""
    frames = np.arange(24, dtype=float).reshape(2, 6, 2)
    shuffled = shuffle_frames(frames, np.random.default_rng(0))
    for original, result in zip(frames, shuffled):
        assert sorted(map(tuple, original)) == sorted(map(tuple, result))


def test_splice_switches_at_cut():
    """Frames before the cut come from the first sequence."""
    a, b = np.zeros((6, 2)), np.ones((6, 2))
    spliced = splice_classes(a, b, cut=2)
    np.testing.assert_array_equal(spliced[:2], 0.0)
    np.testing.assert_array_equal(spliced[2:], 1.0)


def test_chimeric_batch_mixes_classes():
    """Each spliced sequence keeps its own first half and takes a second half from another class."""
    frames = np.stack([np.full((4, 2), float(i)) for i in range(4)])
    labels = np.array([0, 0, 1, 1])
    mixed = chimeric_batch(frames, labels, np.random.default_rng(0))
    for index, label in enumerate(labels):
        np.testing.assert_array_equal(mixed[index, :2], float(index))
        donor = int(mixed[index, 2, 0])
        assert labels[donor] != label
        np.testing.assert_array_equal(mixed[index, 2:], float(donor))


def test_chimeric_batch_needs_two_classes():
    """A single-class batch has nothing to splice with."""
    with pytest.raises(DatasetError):
        chimeric_batch(np.zeros((2, 4, 2)), np.array([1, 1]))


def test_splice_rejects_shape_mismatch():
    """Both sequences must share a shape."""
    with pytest.raises(ShapeError):
        splice_classes(np.zeros((6, 2)), np.zeros((5, 2)))


def test_motion_summary(small_dataset):
    """One row per class with positive movement."""
    summary = class_motion_summary(small_dataset)
    assert list(summary["class_name"]) == small_dataset.classes
    assert (summary["sequences"] == 4).all()
    assert (summary["mean_step"] > 0).all()
