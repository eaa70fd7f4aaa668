"""
Dataset management: procedural motion classes, sequence files, fps
subsampling, external pose ingestion and skeleton-to-image training pairs.
"""
import json
import logging
import os
from enum import Enum
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.exceptions import DatasetError, DatasetFormatError, PoseError, ShapeError
from src.models import Dataset, PoseSequence, SkeletonSpec, Split, default_skeleton
from src.modeling.skel2img import S2iPair
from src.posecore import RenderStyle, normalize_frames, render_stick_figure

logger = logging.getLogger(__name__)

# Rest pose in skeleton units (hip at the origin, hip-to-neck length 1, y down).
DEFAULT_REST_POSE: Dict[str, Tuple[float, float]] = {
    "hip": (0.0, 0.0),
    "neck": (0.0, -1.0),
    "head": (0.0, -1.45),
    "left_hand": (-0.45, -0.15),
    "right_hand": (0.45, -0.15),
    "left_foot": (-0.25, 1.1),
    "right_foot": (0.25, 1.1),
}


class MotionKind(str, Enum):
    SINE = "sine"
    RAMP = "ramp"
    HOLD = "hold"


class JointMotion(BaseModel):
    """
    One trajectory primitive added to a joint coordinate.

    ``sine``: amplitude * sin(2 pi frequency t + phase), t in seconds.
    ``ramp``: amplitude * min(1, progress / ramp_end), progress in [0, 1] over the sequence.
    ``hold``: constant amplitude.

    Jitter fields give the half-width of a uniform draw added per sequence.
    """
    joint: str
    axis: Literal["x", "y"]
    kind: MotionKind
    amplitude: float
    frequency: float = Field(0.0, ge=0)
    phase: float = 0.0
    ramp_end: float = Field(1.0, gt=0, le=1)
    amplitude_jitter: float = Field(0.0, ge=0)
    frequency_jitter: float = Field(0.0, ge=0)
    phase_jitter: float = Field(0.0, ge=0)

    def trajectory(self, rng: np.random.Generator, length: int, fps: float) -> np.ndarray:
        amplitude = self.amplitude + rng.uniform(-self.amplitude_jitter, self.amplitude_jitter)
        frequency = self.frequency + rng.uniform(-self.frequency_jitter, self.frequency_jitter)
        phase = self.phase + rng.uniform(-self.phase_jitter, self.phase_jitter)
        if self.kind == MotionKind.SINE:
            seconds = np.arange(length) / fps
            return amplitude * np.sin(2 * np.pi * frequency * seconds + phase)
        if self.kind == MotionKind.RAMP:
            progress = np.arange(length) / max(length - 1, 1)
            return amplitude * np.minimum(1.0, progress / self.ramp_end)
        return np.full(length, amplitude)


class MotionClassSpec(BaseModel):
    """A named motion class: primitives summed on top of the rest pose."""

    name: str
    motions: List[JointMotion] = []


def _march() -> MotionClassSpec:
    swing = {"kind": MotionKind.SINE, "frequency": 1.0, "amplitude_jitter": 0.05, "frequency_jitter": 0.1, "phase_jitter": 0.3}
    return MotionClassSpec(
        name="march",
        motions=[
            JointMotion(joint="left_foot", axis="y", amplitude=0.25, phase=0.0, **swing),
            JointMotion(joint="right_foot", axis="y", amplitude=0.25, phase=np.pi, **swing),
            JointMotion(joint="left_hand", axis="x", amplitude=0.25, phase=np.pi, **swing),
            JointMotion(joint="right_hand", axis="x", amplitude=0.25, phase=0.0, **swing),
            JointMotion(joint="left_hand", axis="x", kind=MotionKind.HOLD, amplitude=0.3, amplitude_jitter=0.05),
            JointMotion(joint="right_hand", axis="x", kind=MotionKind.HOLD, amplitude=-0.3, amplitude_jitter=0.05),
        ],
    )


def _wave() -> MotionClassSpec:
    return MotionClassSpec(
        name="wave",
        motions=[
            JointMotion(joint="right_hand", axis="y", kind=MotionKind.HOLD, amplitude=-1.3, amplitude_jitter=0.1),
            JointMotion(
                joint="right_hand",
                axis="x",
                kind=MotionKind.SINE,
                amplitude=0.3,
                frequency=1.5,
                amplitude_jitter=0.05,
                frequency_jitter=0.2,
                phase_jitter=0.3,
            ),
        ],
    )


def _crouch(name: str, ramp_end: float, arms_out: float) -> MotionClassSpec:
    ramp = {"kind": MotionKind.RAMP, "ramp_end": ramp_end, "amplitude_jitter": 0.05}
    motions = [
        JointMotion(joint="left_foot", axis="y", amplitude=-0.5, **ramp),
        JointMotion(joint="right_foot", axis="y", amplitude=-0.5, **ramp),
        JointMotion(joint="left_hand", axis="y", amplitude=-0.3, **ramp),
        JointMotion(joint="right_hand", axis="y", amplitude=-0.3, **ramp),
    ]
    if arms_out:
        motions += [
            JointMotion(joint="left_hand", axis="x", kind=MotionKind.HOLD, amplitude=-arms_out, amplitude_jitter=0.05),
            JointMotion(joint="right_hand", axis="x", kind=MotionKind.HOLD, amplitude=arms_out, amplitude_jitter=0.05),
        ]
    return MotionClassSpec(name=name, motions=motions)


def _sway() -> MotionClassSpec:
    sway = {"kind": MotionKind.SINE, "frequency": 1.0, "amplitude_jitter": 0.05, "frequency_jitter": 0.1, "phase_jitter": 0.3}
    return MotionClassSpec(
        name="sway",
        motions=[
            JointMotion(joint="neck", axis="x", amplitude=0.3, **sway),
            JointMotion(joint="head", axis="x", amplitude=0.45, **sway),
            JointMotion(joint="left_hand", axis="x", amplitude=0.3, **sway),
            JointMotion(joint="right_hand", axis="x", amplitude=0.3, **sway),
            JointMotion(joint="left_foot", axis="x", kind=MotionKind.HOLD, amplitude=-0.4, amplitude_jitter=0.05),
            JointMotion(joint="right_foot", axis="x", kind=MotionKind.HOLD, amplitude=0.4, amplitude_jitter=0.05),
        ],
    )


def default_motion_classes() -> Dict[str, MotionClassSpec]:
    """
    The five built-in classes: periodic (march, wave, sway), transient (crouch) and static (crouch-hold).

    Returns:
        Dict[str, MotionClassSpec]: Class name -> spec, in vocabulary order
    """
    specs = [_march(), _wave(), _crouch("crouch", 1.0, 0.0), _crouch("crouch-hold", 0.4, 0.4), _sway()]
    return {spec.name: spec for spec in specs}


def rest_pose(skeleton: SkeletonSpec, rest: Optional[Dict[str, Tuple[float, float]]] = None) -> np.ndarray:
    """Rest pose for the skeleton's joints as a (J, 2) array."""
    rest = rest or DEFAULT_REST_POSE
    missing = [name for name in skeleton.joint_names if name not in rest]
    if missing:
        raise DatasetError(f"no rest position for joints {missing}")
    return np.array([rest[name] for name in skeleton.joint_names], dtype=np.float64)


def generate_sequence(
    spec: MotionClassSpec,
    skeleton: SkeletonSpec,
    rng: np.random.Generator,
    length: int,
    fps: float = 16.0,
    reference_length: float = 0.4,
    rest: Optional[Dict[str, Tuple[float, float]]] = None,
) -> np.ndarray:
    """Normalized frames (T, 2J) for one draw of a motion class."""
    frames = np.repeat(rest_pose(skeleton, rest)[None], length, axis=0)
    for motion in spec.motions:
        joint = skeleton.joint_index(motion.joint)
        frames[:, joint, 0 if motion.axis == "x" else 1] += motion.trajectory(rng, length, fps)
    normalized = normalize_frames(frames.reshape(length, -1), skeleton, reference_length)
    if np.any(np.abs(normalized) > 1.0):
        raise PoseError(f"class '{spec.name}' leaves the [-1, 1] box after normalization")
    return normalized


def generate_dataset(
    specs: Sequence[MotionClassSpec],
    per_class: int,
    length: int,
    seed: int = 0,
    skeleton: Optional[SkeletonSpec] = None,
    fps: float = 16.0,
    test_fraction: float = 0.2,
    reference_length: float = 0.4,
) -> Dataset:
    """
    Draw a labelled dataset with train and test splits.

    Args:
        specs: Motion classes, in vocabulary order
        per_class: Sequences per class (at least 2 so both splits are populated)
        length: Frames per sequence
        seed: Random seed
        skeleton: Skeleton (default seven-joint figure)
        fps: Frame rate stored on every sequence
        test_fraction: Share of each class tagged as test
        reference_length: Normalized hip-to-neck length

    Returns:
        Dataset: Sequences grouped by class, train sequences first within each class
    """
    if per_class < 2:
        raise DatasetError("per_class must be at least 2 so both splits get every class")
    if length < 1:
        raise DatasetError("sequence length must be positive")
    if not specs:
        raise DatasetError("at least one motion class is required")
    skeleton = skeleton or default_skeleton()
    test_count = min(per_class - 1, max(1, int(round(per_class * test_fraction))))
    rng = np.random.default_rng(seed)
    sequences = []
    for spec in specs:
        for k in range(per_class):
            frames = generate_sequence(spec, skeleton, rng, length, fps, reference_length)
            split = Split.TEST if k >= per_class - test_count else Split.TRAIN
            sequences.append(PoseSequence(frames, spec.name, fps, split))
    logger.info(
        "dataset_generated",
        extra={"record": {"classes": len(specs), "per_class": per_class, "length": length, "seed": seed}},
    )
    return Dataset(sequences, [spec.name for spec in specs])


def subsample_fps(seq: PoseSequence, target_fps: float) -> PoseSequence:
    """
    Keep the frames nearest to a stride of fps / target_fps.

    Args:
        seq: Source sequence
        target_fps: Desired frame rate, not above the source rate

    Returns:
        PoseSequence: Subsampled sequence tagged with ``target_fps``
    """
    if target_fps <= 0:
        raise DatasetError("target fps must be positive")
    if target_fps > seq.fps + 1e-9:
        raise DatasetError(f"cannot subsample {seq.fps} fps up to {target_fps} fps")
    ratio = seq.fps / target_fps
    count = int(np.floor((seq.length - 1) / ratio + 1e-9)) + 1
    indices = np.floor(np.arange(count) * ratio + 0.5).astype(int)
    return PoseSequence(seq.frames[indices], seq.class_name, target_fps, seq.split)


class SequenceRecord(BaseModel):
    """One line of a sequence file."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", allow_inf_nan=False)

    class_name: str = Field(alias="class", min_length=1)
    fps: float = Field(gt=0)
    frames: List[List[float]]
    split: Split = Split.TRAIN


def save_sequences(ds: Dataset, path: str) -> None:
    """
    Write one JSON object per sequence.

    Args:
        ds: Dataset to write
        path: Output file path
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for seq in ds.sequences:
            record = {
                "class": seq.class_name,
                "fps": seq.fps,
                "frames": seq.frames.tolist(),
                "split": seq.split.value,
            }
            handle.write(json.dumps(record, allow_nan=False) + "\n")


def _parse_line(text: str, line: int) -> PoseSequence:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"invalid JSON ({exc.msg})", line=line) from exc
    try:
        record = SequenceRecord.model_validate(raw)
    except ValidationError as exc:
        error = exc.errors()[0]
        field = str(error["loc"][0]) if error["loc"] else None
        raise DatasetFormatError(error["msg"], line=line, field=field) from exc
    if not record.frames:
        raise DatasetFormatError("sequence has no frames", line=line, field="frames")
    width = len(record.frames[0])
    for index, frame in enumerate(record.frames):
        if len(frame) != width:
            raise DatasetFormatError(
                f"frame {index} has {len(frame)} values, frame 0 has {width}", line=line, field="frames"
            )
    try:
        return PoseSequence(np.array(record.frames, dtype=np.float64), record.class_name, record.fps, record.split)
    except ShapeError as exc:
        raise DatasetFormatError(str(exc), line=line, field="frames") from exc


def load_sequences(path: str) -> Dataset:
    """
    Read a sequence file written by ``save_sequences`` or an external pose estimator.

    Args:
        path: Input file path

    Returns:
        Dataset: Sequences in file order, vocabulary in first-appearance order
    """
    try:
        with open(path, "rb") as handle:
            lines = handle.readlines()
    except OSError as exc:
        raise DatasetError(f"cannot read sequence file {path}: {exc.strerror}") from exc
    sequences = []
    for number, raw in enumerate(lines, start=1):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DatasetFormatError("invalid UTF-8", line=number) from exc
        if text.strip():
            sequences.append(_parse_line(text, number))
    if not sequences:
        raise DatasetFormatError("file contains no sequences")
    widths = {seq.frames.shape[1] for seq in sequences}
    if len(widths) != 1:
        raise DatasetFormatError(f"sequences disagree on pose width: {sorted(widths)}")
    return Dataset(sequences)


def ingest_sequences(
    path: str,
    skeleton: Optional[SkeletonSpec] = None,
    target_fps: float = 16.0,
    reference_length: float = 0.4,
) -> Dataset:
    """
    Load externally estimated poses, subsample them to ``target_fps`` and normalize every frame.

    Args:
        path: Sequence file with raw (pixel or world) coordinates
        skeleton: Skeleton the poses follow
        target_fps: Output frame rate
        reference_length: Normalized hip-to-neck length

    Returns:
        Dataset: Normalized, subsampled sequences
    """
    skeleton = skeleton or default_skeleton()
    raw = load_sequences(path)
    sequences = []
    for seq in raw.sequences:
        if seq.joint_count != skeleton.joint_count:
            raise DatasetError(f"sequence has {seq.joint_count} joints, skeleton has {skeleton.joint_count}")
        sampled = subsample_fps(seq, target_fps)
        frames = normalize_frames(sampled.frames, skeleton, reference_length)
        sequences.append(PoseSequence(frames, seq.class_name, target_fps, seq.split))
    logger.info("sequences_ingested", extra={"record": {"path": path, "count": len(sequences), "fps": target_fps}})
    return Dataset(sequences, list(raw.classes))


def dataset_to_dataframe(ds: Dataset) -> pd.DataFrame:
    """
    One row per sequence: class, split, length, fps and mean frame-to-frame step.

    Args:
        ds: Dataset

    Returns:
        pd.DataFrame: Summary table
    """
    rows = [
        {
            "class_name": seq.class_name,
            "split": seq.split.value,
            "length": seq.length,
            "fps": seq.fps,
            "mean_step": float(np.linalg.norm(np.diff(seq.frames, axis=0), axis=1).mean()) if seq.length > 1 else 0.0,
        }
        for seq in ds.sequences
    ]
    return pd.DataFrame(rows, columns=["class_name", "split", "length", "fps", "mean_step"])


def export_dataframe_to_csv(df: pd.DataFrame, output_path: str, include_headers: bool = True) -> None:
    """
    Export a DataFrame to CSV.

    Args:
        df: DataFrame to export
        output_path: Path to save CSV file
        include_headers: Whether to include column headers
    """
    directory = os.path.dirname(output_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df.to_csv(output_path, index=False, header=include_headers)


def make_s2i_pairs(
    ds: Dataset,
    skeleton: SkeletonSpec,
    size: int,
    count: int,
    seed: int = 0,
    style: Optional[RenderStyle] = None,
) -> List[S2iPair]:
    """
    Synthetic skeleton-to-image triples with a random tint per sequence.

    The reference image is the tinted first frame; the truth is the tinted target frame.

    Args:
        ds: Source sequences
        skeleton: Skeleton used for rendering
        size: Image width and height
        count: Number of triples
        seed: Random seed
        style: Base stroke style

    Returns:
        List[S2iPair]: Training triples
    """
    if not ds.sequences:
        raise DatasetError("cannot build image pairs from an empty dataset")
    style = style or RenderStyle()
    rng = np.random.default_rng(seed)
    tints = rng.uniform(0.4, 1.0, size=(len(ds.sequences), 3))
    pairs = []
    for _ in range(count):
        index = int(rng.integers(len(ds.sequences)))
        seq = ds.sequences[index]
        target = seq.frames[int(rng.integers(seq.length))]
        tinted = style.model_copy(update={"tint": tuple(float(t) for t in tints[index])})
        reference = render_stick_figure(seq.frames[0], skeleton, size, size, tinted)
        truth = render_stick_figure(target, skeleton, size, size, tinted)
        pairs.append(S2iPair(pose=target.copy(), reference=reference, truth=truth))
    return pairs
