"""
Pose normalization, Gaussian heat-map encoding and stick-figure rendering.

Pose coordinates live in [-1, 1] on both axes; x grows to the right and
y grows downward, matching image rows. Pixel centers sit at (i + 0.5).
"""
from typing import Optional, Tuple

import numpy as np
from matplotlib import colormaps
from pydantic import BaseModel, Field

from src.exceptions import PoseError, ShapeError
from src.models import HeatMapStack, SkeletonSpec

# heat-map sigma in pixels at the 32-pixel reference width
BASE_SIGMA = 1.5
BASE_WIDTH = 32


class RenderStyle(BaseModel):
    """
    Stick-figure drawing parameters.

    Attributes:
        bone_width: Line width in pixels
        joint_radius: Joint disc radius in pixels
        tint: RGB multiplier applied to every stroke
        grayscale: Return a single-channel image
    """
    bone_width: float = Field(1.5, ge=0)
    joint_radius: float = Field(1.5, ge=0)
    tint: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    grayscale: bool = False


def _joints(pose: np.ndarray, joint_count: Optional[int] = None) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.ndim != 1 or pose.size % 2:
        raise ShapeError(f"pose must be a flat vector of 2J coordinates, got shape {pose.shape}")
    if joint_count is not None and pose.size != 2 * joint_count:
        raise ShapeError(f"pose has {pose.size // 2} joints, skeleton has {joint_count}")
    return pose.reshape(-1, 2)


def normalize_pose(raw: np.ndarray, spec: SkeletonSpec, reference_length: float = 1.0) -> np.ndarray:
    """
    Center the hip at the origin and rescale so the reference bone has a fixed length.

    Args:
        raw: Pose vector of 2J coordinates
        spec: Skeleton description
        reference_length: Target length of the reference bone

    Returns:
        np.ndarray: Normalized pose vector
    """
    joints = _joints(raw, spec.joint_count)
    if not np.all(np.isfinite(joints)):
        raise PoseError("pose contains NaN or Inf")
    parent, child = spec.reference_bone
    length = float(np.linalg.norm(joints[child] - joints[parent]))
    if length == 0.0:
        raise PoseError("reference bone has zero length")
    centered = joints - joints[spec.hip_index]
    return (centered * (reference_length / length)).ravel()


def normalize_frames(frames: np.ndarray, spec: SkeletonSpec, reference_length: float = 1.0) -> np.ndarray:
    """Apply ``normalize_pose`` to each row of a (T, 2J) array."""
    return np.stack([normalize_pose(frame, spec, reference_length) for frame in np.asarray(frames)])


def to_pixels(joints: np.ndarray, w: int, h: int) -> np.ndarray:
    """Map (J, 2) normalized joints into continuous pixel coordinates."""
    return np.column_stack([(joints[:, 0] + 1.0) * 0.5 * w, (joints[:, 1] + 1.0) * 0.5 * h])


def default_sigma(w: int) -> float:
    """Heat-map sigma scaled proportionally to the image width."""
    return BASE_SIGMA * w / BASE_WIDTH


def _pixel_grid(w: int, h: int) -> Tuple[np.ndarray, np.ndarray]:
    cols = np.arange(w) + 0.5
    rows = np.arange(h) + 0.5
    return np.meshgrid(cols, rows)


def heatmap_encode(pose: np.ndarray, sigma: float, w: int, h: int) -> HeatMapStack:
    """
    One Gaussian map per joint: exp(-|p - l_j|^2 / sigma^2) at every pixel center.

    Args:
        pose: Pose vector of 2J coordinates
        sigma: Spread in pixels
        w: Image width
        h: Image height

    Returns:
        HeatMapStack: Maps of shape (J, h, w)
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if w < 1 or h < 1:
        raise ValueError("image size must be at least 1x1")
    centers = to_pixels(_joints(pose), w, h)
    grid_x, grid_y = _pixel_grid(w, h)
    dx = grid_x[None, :, :] - centers[:, 0, None, None]
    dy = grid_y[None, :, :] - centers[:, 1, None, None]
    maps = np.exp(-(dx * dx + dy * dy) / (sigma * sigma))
    return HeatMapStack(maps=maps, sigma=float(sigma))


def heatmap_batch(poses: np.ndarray, sigma: float, w: int, h: int) -> np.ndarray:
    """Heat maps for a batch of poses as (N, J, h, w)."""
    return np.stack([heatmap_encode(pose, sigma, w, h).maps for pose in poses])


def _segment_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def render_stick_figure(
    pose: np.ndarray,
    spec: SkeletonSpec,
    w: int,
    h: int,
    style: Optional[RenderStyle] = None,
) -> np.ndarray:
    """
    Rasterize a pose as anti-aliased bones and joint discs on black.

    Coverage falls off linearly over one pixel at each stroke edge.

    Args:
        pose: Pose vector of 2J coordinates
        spec: Skeleton description
        w: Image width
        h: Image height
        style: Stroke sizes and tint

    Returns:
        np.ndarray: (h, w, 3) RGB image in [0, 1], or (h, w) when grayscale
    """
    style = style or RenderStyle()
    joints = _joints(pose, spec.joint_count)
    if not np.all(np.isfinite(joints)):
        raise PoseError("pose contains NaN or Inf")
    points = to_pixels(joints, w, h)
    grid_x, grid_y = _pixel_grid(w, h)
    tint = np.asarray(style.tint, dtype=np.float64)
    palette = colormaps["tab10"]
    image = np.zeros((h, w, 3))

    for k, (parent, child) in enumerate(spec.bones):
        distance = _segment_distance(grid_x, grid_y, points[parent], points[child])
        coverage = np.clip(style.bone_width / 2.0 + 0.5 - distance, 0.0, 1.0)
        color = np.asarray(palette(k % palette.N)[:3]) * tint
        image = np.maximum(image, coverage[:, :, None] * color)

    for point in points:
        distance = np.hypot(grid_x - point[0], grid_y - point[1])
        coverage = np.clip(style.joint_radius + 0.5 - distance, 0.0, 1.0)
        image = np.maximum(image, coverage[:, :, None] * tint)

    if style.grayscale:
        return image.max(axis=2)
    return image
