"""
Core domain models: skeletons, poses, sequences, datasets and constraints.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, model_validator

from src.exceptions import ConstraintError, DatasetError, ShapeError


def frozen(array: np.ndarray) -> np.ndarray:
    """Return a read-only float64 copy."""
    result = np.array(array, dtype=np.float64)
    result.setflags(write=False)
    return result


class Split(str, Enum):
    """Dataset split tag."""
    TRAIN = "train"
    TEST = "test"


class SkeletonSpec(BaseModel):
    """
    Joint names and bone topology of a 2-D stick figure.

    Attributes:
        joint_names: One name per joint, J >= 2
        bones: (parent, child) joint index pairs forming a tree rooted at the hip
        hip_index: Root joint, placed at the origin by normalization
        reference_bone: Joint pair whose length fixes the scale
    """
    joint_names: List[str]
    bones: List[Tuple[int, int]]
    hip_index: int = 0
    reference_bone: Tuple[int, int] = (0, 1)

    @model_validator(mode="after")
    def check_tree(self) -> "SkeletonSpec":
        count = len(self.joint_names)
        if count < 2:
            raise ValueError("a skeleton needs at least two joints")
        indices = [self.hip_index, *self.reference_bone, *(j for bone in self.bones for j in bone)]
        if any(not 0 <= j < count for j in indices):
            raise ValueError("joint index out of range")
        if len(self.bones) != count - 1:
            raise ValueError("bones must form a tree over all joints")
        children = [child for _, child in self.bones]
        if self.hip_index in children or len(set(children)) != len(children):
            raise ValueError("every non-hip joint needs exactly one parent")
        reached = {self.hip_index}
        pending = list(self.bones)
        while pending:
            grown = [bone for bone in pending if bone[0] in reached]
            if not grown:
                raise ValueError("bones are not connected to the hip")
            for bone in grown:
                reached.add(bone[1])
                pending.remove(bone)
        return self

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def pose_width(self) -> int:
        return 2 * self.joint_count

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)


def default_skeleton() -> SkeletonSpec:
    """Seven-joint figure: hip, neck, head, two hands, two feet; scale set by hip->neck."""
    return SkeletonSpec(
        joint_names=["hip", "neck", "head", "left_hand", "right_hand", "left_foot", "right_foot"],
        bones=[(0, 1), (1, 2), (1, 3), (1, 4), (0, 5), (0, 6)],
        hip_index=0,
        reference_bone=(0, 1),
    )


@dataclass(frozen=True)
class ClassId:
    """Index into a class vocabulary of size ``count``."""

    index: int
    count: int

    def __post_init__(self) -> None:
        if not 0 <= self.index < self.count:
            raise ValueError(f"class index {self.index} outside vocabulary of {self.count}")

    def one_hot(self) -> np.ndarray:
        vector = np.zeros(self.count)
        vector[self.index] = 1.0
        return vector


def one_hot_rows(labels: Sequence[int], count: int) -> np.ndarray:
    """Stack one-hot rows for integer labels."""
    return np.eye(count)[np.asarray(labels, dtype=int)]


@dataclass(eq=False)
class PoseSequence:
    """
    T frames of 2J normalized coordinates, laid out (x1, y1, ..., xJ, yJ).

    Attributes:
        frames: Array of shape (T, 2J), read-only
        class_name: Motion class label
        fps: Frame rate
        split: Dataset split tag
    """

    frames: np.ndarray
    class_name: str
    fps: float = 16.0
    split: Split = Split.TRAIN

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 2 or frames.shape[1] % 2:
            raise ShapeError(f"frames must have shape (T>=1, 2J), got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ShapeError("frames contain NaN or Inf")
        self.frames = frozen(frames)
        self.fps = float(self.fps)
        self.split = Split(self.split)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def joint_count(self) -> int:
        return self.frames.shape[1] // 2

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoseSequence):
            return NotImplemented
        return (
            self.class_name == other.class_name
            and self.fps == other.fps
            and self.split == other.split
            and np.array_equal(self.frames, other.frames)
        )


@dataclass(eq=False)
class HeatMapStack:
    """J Gaussian joint maps of shape (J, h, w) with their sigma."""

    maps: np.ndarray
    sigma: float

    @property
    def joint_count(self) -> int:
        return self.maps.shape[0]

    @property
    def size(self) -> Tuple[int, int]:
        return self.maps.shape[1], self.maps.shape[2]


@dataclass(eq=False)
class Dataset:
    """Pose sequences with a class vocabulary (first-appearance order)."""

    sequences: List[PoseSequence]
    classes: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        for seq in self.sequences:
            if seq.class_name not in self.classes:
                self.classes.append(seq.class_name)

    def __len__(self) -> int:
        return len(self.sequences)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.classes == other.classes and len(self) == len(other) and all(
            a == b for a, b in zip(self.sequences, other.sequences)
        )

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def class_id(self, name: str) -> ClassId:
        if name not in self.classes:
            raise DatasetError(f"unknown class '{name}'")
        return ClassId(self.classes.index(name), self.class_count)

    def split(self, split: Split) -> "Dataset":
        """Sub-dataset of one split, keeping the full vocabulary."""
        return Dataset([s for s in self.sequences if s.split == split], list(self.classes))

    def labels(self) -> np.ndarray:
        return np.array([self.classes.index(s.class_name) for s in self.sequences], dtype=int)

    def stacked(self) -> np.ndarray:
        """Frames of all sequences as (N, T, 2J); lengths must agree."""
        lengths = {s.length for s in self.sequences}
        if len(lengths) != 1:
            raise DatasetError(f"sequences have mixed lengths {sorted(lengths)}")
        return np.stack([s.frames for s in self.sequences])

    def labeled_frames(self) -> Tuple[np.ndarray, np.ndarray]:
        """Every frame of every sequence as (poses, labels)."""
        if not self.sequences:
            raise DatasetError("dataset is empty")
        poses = np.concatenate([s.frames for s in self.sequences])
        labels = np.concatenate(
            [np.full(s.length, self.classes.index(s.class_name)) for s in self.sequences]
        )
        return poses, labels

    def require_classes(self, minimum: int = 1) -> None:
        """Raise if any vocabulary class has fewer than ``minimum`` sequences."""
        counts: Dict[str, int] = {name: 0 for name in self.classes}
        for seq in self.sequences:
            counts[seq.class_name] += 1
        missing = [name for name, count in counts.items() if count < minimum]
        if missing:
            raise DatasetError(f"classes without enough sequences: {missing}")


@dataclass(eq=False)
class ConstraintSet:
    """
    Pinned frames for completion: unique sorted indices with their poses.

    Attributes:
        indices: Sorted frame indices
        poses: Array of shape (len(indices), 2J)
        class_id: Class the completed sequence is conditioned on
    """

    indices: Tuple[int, ...]
    poses: np.ndarray
    class_id: ClassId

    def __post_init__(self) -> None:
        indices = tuple(int(i) for i in self.indices)
        poses = np.asarray(self.poses, dtype=np.float64)
        if not indices:
            raise ConstraintError("at least one pinned frame is required")
        if len(set(indices)) != len(indices):
            raise ConstraintError(f"duplicate pinned frames in {indices}")
        if poses.ndim != 2 or poses.shape[0] != len(indices):
            raise ConstraintError("one pose row is required per pinned frame")
        order = np.argsort(indices)
        self.indices = tuple(indices[i] for i in order)
        self.poses = frozen(poses[order])

    @classmethod
    def from_frames(
        cls, frames: np.ndarray, indices: Sequence[int], class_id: ClassId
    ) -> "ConstraintSet":
        """Pin ``frames[i]`` for every i in ``indices``."""
        frames = np.asarray(frames, dtype=np.float64)
        return cls(tuple(indices), frames[list(indices)], class_id)

    def check_range(self, length: int, pose_width: Optional[int] = None) -> None:
        if self.indices[0] < 0 or self.indices[-1] >= length:
            raise ConstraintError(f"pinned frames {self.indices} outside [0, {length})")
        if pose_width is not None and self.poses.shape[1] != pose_width:
            raise ConstraintError(f"pinned poses have width {self.poses.shape[1]}, expected {pose_width}")
