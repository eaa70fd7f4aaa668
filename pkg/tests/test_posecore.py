"""
Tests for pose normalization, heat maps and stick-figure rendering.
"""
import numpy as np
import pytest

from src.exceptions import PoseError
from src.models import SkeletonSpec
from src.posecore import (
    RenderStyle,
    default_sigma,
    heatmap_encode,
    normalize_pose,
    render_stick_figure,
)


@pytest.fixture(name="raw_pose")
def raw_pose_fixture(skeleton):
    """An arbitrary un-normalized pose for the default skeleton."""
    rng = np.random.default_rng(5)
    pose = rng.normal(size=skeleton.pose_width)
    pose[0:2] = [5.0, 7.0]
    pose[2:4] = [5.0, 9.0]  # neck 2 units below the hip
    return pose


def test_normalize_centers_hip(skeleton, raw_pose):
    """The hip lands on the origin."""
    out = normalize_pose(raw_pose, skeleton)
    assert out[0] == 0.0 and out[1] == 0.0


def test_normalize_scales_reference_bone(skeleton, raw_pose):
    """A reference bone of length 2 halves every hip-relative coordinate."""
    out = normalize_pose(raw_pose, skeleton)
    relative = (raw_pose.reshape(-1, 2) - raw_pose[0:2]).ravel()
    np.testing.assert_allclose(out, relative / 2.0, atol=1e-12)
    assert np.hypot(out[2], out[3]) == pytest.approx(1.0)


def test_normalize_idempotent(skeleton, raw_pose):
    """Normalizing twice equals normalizing once."""
    once = normalize_pose(raw_pose, skeleton)
    np.testing.assert_allclose(normalize_pose(once, skeleton), once, atol=1e-12)


def test_normalize_invariant_to_similarity(skeleton, raw_pose):
    """Translating and uniformly scaling the input leaves the output unchanged."""
    moved = (raw_pose.reshape(-1, 2) * 3.7 + np.array([-2.0, 11.0])).ravel()
    np.testing.assert_allclose(normalize_pose(moved, skeleton), normalize_pose(raw_pose, skeleton), atol=1e-12)


def test_normalize_rejects_degenerate_bone(skeleton):
    """Zero-length reference bone is an error."""
    with pytest.raises(PoseError):
        normalize_pose(np.zeros(skeleton.pose_width), skeleton)


def test_skeleton_must_be_tree():
    """A bone list with a cycle or a missing joint is rejected."""
    with pytest.raises(ValueError):
        SkeletonSpec(joint_names=["a", "b", "c"], bones=[(0, 1)])
    with pytest.raises(ValueError):
        SkeletonSpec(joint_names=["a", "b", "c"], bones=[(1, 2), (2, 1)])


def test_heatmap_peak_and_falloff():
    """Value 1 on the joint, e^-1 at one sigma, e^-4 at two sigma."""
    w = h = 32
    sigma = 2.0
    # joint exactly on the center of pixel (row 10, col 12)
    x = (12.5 / w) * 2 - 1
    y = (10.5 / h) * 2 - 1
    maps = heatmap_encode(np.array([x, y]), sigma, w, h).maps[0]
    assert maps[10, 12] == pytest.approx(1.0)
    assert maps[10, 14] == pytest.approx(np.exp(-1.0))
    assert maps[10, 16] == pytest.approx(np.exp(-4.0))
    assert maps.max() == maps[10, 12]


def test_heatmap_range_and_argmax():
    """Values are in (0, 1] and each map peaks at the nearest pixel."""
    pose = np.array([0.13, -0.41, -0.77, 0.52])
    stack = heatmap_encode(pose, default_sigma(32), 32, 32)
    assert stack.maps.shape == (2, 32, 32)
    assert np.all(stack.maps > 0) and np.all(stack.maps <= 1)
    for j, (x, y) in enumerate(pose.reshape(-1, 2)):
        row, col = np.unravel_index(np.argmax(stack.maps[j]), (32, 32))
        assert col == int((x + 1) / 2 * 32)
        assert row == int((y + 1) / 2 * 32)


def test_default_sigma_scales_with_width():
    """1.5 pixels at 32, proportionally larger at 128."""
    assert default_sigma(32) == pytest.approx(1.5)
    assert default_sigma(128) == pytest.approx(6.0)


def test_render_center_disc():
    """Two joints on the image center draw a disc there with black corners."""
    spec = SkeletonSpec(joint_names=["hip", "tip"], bones=[(0, 1)])
    image = render_stick_figure(np.zeros(4), spec, 15, 15, RenderStyle(grayscale=True))
    assert image[7, 7] == pytest.approx(1.0)
    assert image[0, 0] == 0.0 and image[0, 14] == 0.0 and image[14, 0] == 0.0 and image[14, 14] == 0.0


def test_render_offscreen_pose_is_black(skeleton):
    """A pose far outside the frame renders nothing."""
    pose = np.full(skeleton.pose_width, 5.0)
    pose[1::2] = np.linspace(5.0, 6.0, skeleton.joint_count)
    image = render_stick_figure(pose, skeleton, 32, 32)
    assert image.shape == (32, 32, 3)
    assert not image.any()


def test_render_deterministic(skeleton, raw_pose):
    """Rendering the same pose twice gives identical pixels within [0, 1]."""
    pose = normalize_pose(raw_pose, skeleton, reference_length=0.4)
    style = RenderStyle(tint=(0.8, 0.6, 1.0))
    first = render_stick_figure(pose, skeleton, 32, 32, style)
    second = render_stick_figure(pose, skeleton, 32, 32, style)
    np.testing.assert_array_equal(first, second)
    assert first.min() >= 0.0 and first.max() <= 1.0
    assert first.any()
