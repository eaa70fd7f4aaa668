"""
Write pose sequences to disk as per-frame PNGs and an animated GIF.
"""
import logging
import os
from typing import List, Optional

import numpy as np
import PIL.Image
from pydantic import BaseModel

from src.exceptions import CheckpointError, ShapeError
from src.models import PoseSequence, SkeletonSpec
from src.modeling.skel2img import TransformerF, f_forward
from src.plots import export_frames_to_pdf
from src.posecore import RenderStyle, default_sigma, heatmap_encode, render_stick_figure

logger = logging.getLogger(__name__)


class RenderedFiles(BaseModel):
    """Paths written by one render call."""
    stick_frames: List[str]
    pixel_frames: List[str]
    animation: str
    contact_sheet: Optional[str] = None


def to_uint8(image: np.ndarray) -> np.ndarray:
    """[0, 1] floats to 8-bit RGB."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    return np.round(image * 255.0).astype(np.uint8)


def render_animation(
    seq: PoseSequence,
    skeleton: SkeletonSpec,
    out_dir: str,
    transformer: Optional[TransformerF] = None,
    pixels: bool = False,
    size: Optional[int] = None,
    reference: Optional[np.ndarray] = None,
    style: Optional[RenderStyle] = None,
    contact_sheet: bool = False,
) -> RenderedFiles:
    """
    Render every frame as a stick figure and, with ``pixels``, through the transformer.

    Args:
        seq: Sequence to draw
        skeleton: Skeleton matching the sequence's joint count
        out_dir: Output directory (created if missing)
        transformer: Skeleton-to-image network, required when ``pixels`` is set
        pixels: Also write transformer output frames
        size: Image side in pixels (defaults to the transformer's size, else 64)
        reference: Appearance reference (size, size, 3); defaults to the first frame's stick figure
        style: Stick-figure style
        contact_sheet: Also write every animation panel to one PDF page

    Returns:
        RenderedFiles: Written PNG paths, the GIF path and the PDF path if requested
    """
    if pixels and transformer is None:
        raise CheckpointError("pixel rendering needs a transformer checkpoint")
    if seq.joint_count != skeleton.joint_count:
        raise ShapeError(f"sequence has {seq.joint_count} joints, skeleton {skeleton.joint_count}")
    if pixels and size is not None and size != transformer.arch.size:
        raise ShapeError(f"transformer draws {transformer.arch.size}px images, {size} requested")
    size = size or (transformer.arch.size if transformer is not None else 64)
    os.makedirs(out_dir, exist_ok=True)

    stick = [render_stick_figure(frame, skeleton, size, size, style) for frame in seq.frames]
    stick_paths = []
    for t, image in enumerate(stick):
        path = os.path.join(out_dir, f"frame_{t:03d}.png")
        PIL.Image.fromarray(to_uint8(image), "RGB").save(path)
        stick_paths.append(path)

    pixel_paths = []
    panels = stick
    if pixels:
        ref = stick[0] if reference is None else np.asarray(reference, dtype=np.float64)
        sigma = default_sigma(size)
        generated = [f_forward(heatmap_encode(frame, sigma, size, size), ref, transformer) for frame in seq.frames]
        for t, image in enumerate(generated):
            path = os.path.join(out_dir, f"pixels_{t:03d}.png")
            PIL.Image.fromarray(to_uint8(image), "RGB").save(path)
            pixel_paths.append(path)
        # side by side in the animation
        panels = [np.concatenate([a, b], axis=1) for a, b in zip(stick, generated)]

    animation = os.path.join(out_dir, "animation.gif")
    images = [PIL.Image.fromarray(to_uint8(panel), "RGB") for panel in panels]
    images[0].save(
        animation,
        save_all=True,
        append_images=images[1:],
        duration=int(round(1000.0 / seq.fps)),
        loop=0,
    )
    sheet = None
    if contact_sheet:
        sheet = os.path.join(out_dir, "frames.pdf")
        export_frames_to_pdf(panels, sheet, title=f"{seq.class_name}, {seq.length} frames")
    logger.info(
        "animation_rendered",
        extra={"record": {"out_dir": out_dir, "frames": seq.length, "pixels": pixels, "size": size, "contact_sheet": sheet}},
    )
    return RenderedFiles(stick_frames=stick_paths, pixel_frames=pixel_paths, animation=animation, contact_sheet=sheet)
