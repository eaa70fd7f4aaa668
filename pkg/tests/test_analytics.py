"""
Tests for Inception-Score analysis.
"""
import numpy as np
import pytest

from src.analytics import compare_reports, inception_score, score_sequences, timestep_frame
from src.dataset import default_motion_classes, generate_dataset
from src.exceptions import ScoreError
from src.features import shuffle_frames
from src.models import Split
from src.modeling.classifier import ClassifierConfig, train_classifier

@pytest.fixture(name="quick_classifier", scope="module")
def quick_classifier_fixture():
    """Classifier trained briefly on a small procedural dataset."""
    data = generate_dataset(list(default_motion_classes().values()), per_class=6, length=8, seed=11)
    return train_classifier(data, ClassifierConfig(steps=20, hidden=[16], log_every=0), seed=0)

def brute_force_is(dists):
    """Direct double loop over samples and classes."""
    marginal = [sum(d[c] for d in dists) / len(dists) for c in range(len(dists[0]))]
    total = 0.0
    for d in dists:
        total += sum(p * np.log(p / marginal[c]) for c, p in enumerate(d) if p > 0)
    return float(np.exp(total / len(dists)))

def test_uniform_scores_one():
    """Uniform predictions carry no information."""
    mean, std = inception_score(np.full((12, 4), 0.25), splits=3)
    assert mean == pytest.approx(1.0, abs=1e-9)
    assert std == pytest.approx(0.0, abs=1e-9)

@pytest.mark.parametrize("classes", [2, 5])
def test_distinct_one_hots_score_class_count(classes):
    """Confident, fully diverse predictions reach C."""
    mean, _ = inception_score(np.eye(classes), splits=1)
    assert mean == pytest.approx(classes, abs=1e-9)

def test_matches_brute_force():
    """Vectorized score equals the summation oracle."""
    dists = [[0.9, 0.1], [0.6, 0.4]]
    assert inception_score(np.array(dists), splits=1)[0] == pytest.approx(brute_force_is(dists), abs=1e-9)

def test_random_distributions_match_brute_force():
    """Random lists agree with the oracle and respect 1 <= IS <= C."""
    rng = np.random.default_rng(0)
    dists = rng.dirichlet(np.ones(5), size=30)
    mean, _ = inception_score(dists, splits=1)
    assert mean == pytest.approx(brute_force_is(dists.tolist()), abs=1e-9)
    assert 1.0 - 1e-6 <= mean <= 5.0 + 1e-6

def test_permutation_invariance():
    """Reordering samples inside one split changes nothing."""
    dists = np.random.default_rng(1).dirichlet(np.ones(3), size=20)
    order = np.random.default_rng(2).permutation(20)
    assert inception_score(dists, 1)[0] == pytest.approx(inception_score(dists[order], 1)[0], abs=1e-12)

@pytest.mark.parametrize(
    "dists",
    [np.array([[0.5, 0.6]]), np.array([[-0.1, 1.1]]), np.array([[np.nan, 1.0]]), np.zeros((0, 3))],
)
def test_rejects_invalid_distributions(dists):
    """Rows must be finite, non-negative and sum to one."""
    with pytest.raises(ScoreError):
        inception_score(dists, splits=1)

def test_rejects_bad_split_count():
    """Splits cannot exceed the sample count."""
    with pytest.raises(ScoreError):
        inception_score(np.eye(2), splits=3)

def test_constant_sequences_score_one(quick_classifier):
    """Identical sequences give identical predictions and the minimum score."""
    frames = np.tile(np.linspace(-0.3, 0.3, 14), (10, 8, 1))
    report = score_sequences(frames, quick_classifier.classifier, splits=2)
    assert report.frame_is_mean == pytest.approx(1.0, abs=1e-9)
    assert report.video_is_mean == pytest.approx(1.0, abs=1e-9)

def test_report_shape(quick_classifier, small_dataset):
    """Per-timestep curve has T entries and every score stays within [1, C]."""
    frames = small_dataset.stacked()
    report = score_sequences(frames, quick_classifier.classifier)
    assert len(report.per_timestep) == frames.shape[1]
    for value in [report.frame_is_mean, report.video_is_mean, *report.per_timestep]:
        assert 1.0 - 1e-6 <= value <= small_dataset.class_count + 1e-6
    assert list(timestep_frame(report).columns) == ["timestep", "frame_is"]
    table = compare_reports({"real": report})
    assert table.loc[0, "batch"] == "real"

@pytest.mark.slow
def test_real_beats_perturbed_sequences():
    """Held-out real data matches training data and outscores shuffled and single-class batches by 10%."""
    data = generate_dataset(list(default_motion_classes().values()), per_class=40, length=16, seed=0)
    result = train_classifier(data, seed=0)
    assert result.accuracy >= 0.9
    clf = result.classifier
    test = data.split(Split.TEST)
    real = test.stacked()
    real_score = score_sequences(real, clf).video_is_mean
    self_score = score_sequences(data.split(Split.TRAIN).stacked(), clf).video_is_mean
    assert abs(real_score - self_score) <= 0.1 * self_score

    shuffled = shuffle_frames(real, np.random.default_rng(1))
    assert real_score >= 1.1 * score_sequences(shuffled, clf).video_is_mean

    # every sequence replaced by the same class: the batch loses its diversity
    labels = test.labels()
    mismatched = np.stack([real[np.flatnonzero(labels == 0)[i % np.sum(labels == 0)]] for i in range(len(real))])
    assert real_score >= 1.1 * score_sequences(mismatched, clf).video_is_mean
