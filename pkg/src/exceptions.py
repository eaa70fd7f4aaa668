"""
Exception hierarchy shared by every poseforge module.

Each error also derives from the closest builtin so callers that only
know about ``ValueError`` and friends keep working.
"""
from typing import Optional


class PoseForgeError(Exception):
    """Base class for all poseforge errors."""


class ShapeError(PoseForgeError, ValueError):
    """Array shapes or dimensions do not agree."""


class NonFiniteError(PoseForgeError, FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""


class TapeError(PoseForgeError, ValueError):
    """A node does not belong to the tape it is used with."""


class SecondOrderError(PoseForgeError, NotImplementedError):
    """An op on a differentiated path has no graph-building adjoint."""


class InfeasibleStartError(PoseForgeError, ValueError):
    """An optimizer start point lies outside its bounds."""


class PoseError(PoseForgeError, ValueError):
    """A pose cannot be normalized or encoded."""


class ConstraintError(PoseForgeError, ValueError):
    """Pinned frames are out of range, duplicated or empty."""


class DatasetError(PoseForgeError, ValueError):
    """A dataset violates a structural requirement (splits, classes, lengths)."""


class DatasetFormatError(DatasetError):
    """
    A sequence file is malformed.

    Attributes:
        line: 1-based line number of the offending record (None for whole-file errors)
        field: Name of the offending field, if known
    """

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")
        self.line = line
        self.field = field


class ConfigError(PoseForgeError, ValueError):
    """Run configuration is missing or inconsistent."""


class CheckpointError(PoseForgeError, ValueError):
    """A checkpoint is missing, corrupt or does not match the run."""


class ScoreError(PoseForgeError, ValueError):
    """Inputs to a score are not valid class distributions."""


__all__ = [
    "PoseForgeError",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "SecondOrderError",
    "InfeasibleStartError",
    "PoseError",
    "ConstraintError",
    "DatasetError",
    "DatasetFormatError",
    "ConfigError",
    "CheckpointError",
    "ScoreError",
]
