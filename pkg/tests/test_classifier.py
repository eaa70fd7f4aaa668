"""
Tests for the two-stream action classifier.
"""
import numpy as np
import pytest
from helpers import params_equal

from src.dataset import default_motion_classes, generate_dataset
from src.exceptions import DatasetError, ShapeError
from src.models import Dataset, PoseSequence, Split
from src.modeling.classifier import ActionClassifier, ClassifierConfig, standardization, train_classifier


def test_distributions_are_valid(small_dataset):
    """Frame and fused outputs sum to one."""
    clf = ActionClassifier.create(np.random.default_rng(0), 14, small_dataset.class_count, [8])
    frames = small_dataset.stacked()
    frame = clf.frame_distributions(frames)
    assert frame.shape == (len(small_dataset), frames.shape[1], small_dataset.class_count)
    np.testing.assert_allclose(frame.sum(axis=2), 1.0, atol=1e-9)
    np.testing.assert_allclose(clf.video_distributions(frames).sum(axis=1), 1.0, atol=1e-9)


def test_single_sequence_is_promoted():
    """A (T, 2J) input is treated as one sequence."""
    clf = ActionClassifier.create(np.random.default_rng(0), 4, 3, [5])
    assert clf.video_distributions(np.zeros((5, 4))).shape == (1, 3)


def test_rejects_wrong_width():
    """Pose width must match the trained width."""
    clf = ActionClassifier.create(np.random.default_rng(0), 4, 3, [5])
    with pytest.raises(ShapeError):
        clf.frame_distributions(np.zeros((2, 5, 6)))


def test_standardization_floors_scale():
    """Constant coordinates get a tiny positive scale instead of zero."""
    stats = standardization(np.zeros((3, 4, 2)))
    assert np.all(stats["pose_scale"] > 0)
    assert np.all(stats["motion_scale"] > 0)


def test_training_is_seeded():
    """Same seed, same model."""
    data = generate_dataset(list(default_motion_classes().values()), per_class=3, length=6, seed=2)
    cfg = ClassifierConfig(steps=3, hidden=[8], log_every=0)
    a = train_classifier(data, cfg, seed=7)
    b = train_classifier(data, cfg, seed=7)
    assert params_equal(a.classifier.params, b.classifier.params)
    assert params_equal(a.classifier.stats, b.classifier.stats)
    assert list(a.history.columns) == ["step", "loss", "pose_loss", "motion_loss"]


def test_rejects_single_class():
    """One class is degenerate."""
    data = Dataset(
        [PoseSequence(np.zeros((4, 2)), "a", split=Split.TRAIN), PoseSequence(np.ones((4, 2)), "a", split=Split.TEST)]
    )
    with pytest.raises(DatasetError):
        train_classifier(data)


def test_rejects_missing_split():
    """Both splits are required."""
    data = Dataset([PoseSequence(np.zeros((4, 2)), "a"), PoseSequence(np.ones((4, 2)), "b")])
    with pytest.raises(DatasetError):
        train_classifier(data)


@pytest.mark.slow
def test_held_out_accuracy():
    """Default settings separate the procedural classes."""
    data = generate_dataset(list(default_motion_classes().values()), per_class=40, length=16, seed=0)
    assert train_classifier(data, seed=0).accuracy >= 0.9
