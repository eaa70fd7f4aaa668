"""
Configuration management for poseforge runs.
"""
import copy
import json
import os
from typing import Any, Dict, List, Literal, Mapping, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.dataset import MotionClassSpec, default_motion_classes
from src.exceptions import ConfigError
from src.models import SkeletonSpec, default_skeleton
from src.modeling.classifier import ClassifierConfig
from src.modeling.inverter import InversionConfig
from src.modeling.pose_gan import WganTrainConfig
from src.modeling.seq_gan import SeqTrainConfig
from src.modeling.skel2img import S2iTrainConfig


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables and ``.env``.

    Attributes:
        PROJECT_NAME: Name of the application
        SEED: Seed used when neither the command line nor the run config sets one
        LOG_LEVEL: Root log level
        LOG_FORMAT: ``json`` for line-delimited records, ``text`` for plain lines
        OUTPUT_DIR: Directory that relative run paths resolve against
    """
    model_config = SettingsConfigDict(env_file=".env", env_prefix="POSEFORGE_", case_sensitive=True, extra="ignore")

    PROJECT_NAME: str = "poseforge"
    SEED: Optional[int] = None
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: Literal["json", "text"] = "json"
    OUTPUT_DIR: str = "runs"


class Dims(BaseModel):
    """
    Sizes shared across stages.

    Attributes:
        J: Joints per pose
        m: Pose latent size
        n: Sequence noise size
        T: Frames per sequence
        C: Number of classes
        w: Image width
        h: Image height
    """
    J: int = Field(7, ge=2)
    m: int = Field(8, ge=1)
    n: int = Field(64, ge=1)
    T: int = Field(16, ge=2)
    C: int = Field(5, ge=1)
    w: int = Field(32, ge=4)
    h: int = Field(32, ge=4)


class DataConfig(BaseModel):
    """
    Where sequences come from and how many are drawn.

    Attributes:
        classes: Motion class names, in vocabulary order
        per_class: Procedural sequences per class
        fps: Frame rate of the sequences
        test_fraction: Share of each class held out
        reference_length: Target length of the reference bone after normalization
        s2i_pairs: Skeleton-to-image training triples
        source: Optional sequence file ingested instead of the procedural generator
    """
    classes: List[str] = Field(default_factory=lambda: list(default_motion_classes()))
    per_class: int = Field(40, ge=2)
    fps: float = Field(16.0, gt=0)
    test_fraction: float = Field(0.2, gt=0, lt=1)
    reference_length: float = Field(0.4, gt=0)
    s2i_pairs: int = Field(500, ge=1)
    source: Optional[str] = None


class RunPaths(BaseModel):
    """Artifact file names; relative names resolve against the output directory."""
    output_dir: Optional[str] = None
    dataset: str = "dataset.jsonl"
    pose_gan: str = "pose_gan.pfg"
    seq_gan: str = "seq_gan.pfg"
    s2i: str = "s2i.pfg"
    classifier: str = "classifier.pfg"

    def resolve(self, name: str) -> str:
        value = getattr(self, name)
        if os.path.isabs(value):
            return value
        return os.path.join(self.output_dir or settings.OUTPUT_DIR, value)


class RunConfig(BaseModel):
    """
    Everything a run needs: skeleton, dims, every stage's settings, seed and paths.

    Dimensions are checked against each other and against the stage settings
    so an inconsistent run is rejected before any compute starts.
    """
    skeleton: SkeletonSpec = Field(default_factory=default_skeleton)
    dims: Dims = Dims()
    data: DataConfig = DataConfig()
    pose_gan: WganTrainConfig = WganTrainConfig()
    seq_gan: SeqTrainConfig = SeqTrainConfig()
    s2i: S2iTrainConfig = S2iTrainConfig()
    inversion: InversionConfig = InversionConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    seed: Optional[int] = None
    paths: RunPaths = RunPaths()

    @model_validator(mode="after")
    def check_dims(self) -> "RunConfig":
        d = self.dims
        problems = []
        if d.J != self.skeleton.joint_count:
            problems.append(f"J={d.J} but the skeleton has {self.skeleton.joint_count} joints")
        if d.m != self.pose_gan.latent_dim:
            problems.append(f"m={d.m} but pose_gan.latent_dim={self.pose_gan.latent_dim}")
        if d.n != self.seq_gan.noise_dim:
            problems.append(f"n={d.n} but seq_gan.noise_dim={self.seq_gan.noise_dim}")
        if d.C != len(self.data.classes):
            problems.append(f"C={d.C} but {len(self.data.classes)} classes are listed")
        if d.w != d.h:
            problems.append(f"images must be square, got {d.w}x{d.h}")
        if d.w != self.s2i.arch.size:
            problems.append(f"w={d.w} but s2i.arch.size={self.s2i.arch.size}")
        if self.data.source is None:
            known = default_motion_classes()
            unknown = [name for name in self.data.classes if name not in known]
            if unknown:
                problems.append(f"no procedural motion for classes {unknown}")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def motion_specs(self) -> List[MotionClassSpec]:
        known = default_motion_classes()
        return [known[name] for name in self.data.classes]

    def resolved_seed(self, flag: Optional[int] = None) -> int:
        """Command-line seed, else the config seed, else ``POSEFORGE_SEED``, else 0."""
        for value in (flag, self.seed, settings.SEED):
            if value is not None:
                return int(value)
        return 0


def _set_dotted(tree: Dict[str, Any], key: str, value: Any) -> None:
    node = tree
    parts = key.split(".")
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"cannot override '{key}': '{part}' is not a section")
        node = child
    node[parts[-1]] = value


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Read a JSON run config, apply dotted-key overrides and validate the result.

    Args:
        path: JSON file (defaults only when None)
        overrides: Values such as ``{"dims.T": 50, "seed": 3}`` applied after the file

    Returns:
        RunConfig: Validated configuration
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                raw = json.load(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    # Make a copy
    raw = copy.deepcopy(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(raw, key, value)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        details = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors())
        raise ConfigError(f"invalid run config: {details}") from exc


# Create global settings object
settings = Settings()

# Export settings
__all__ = ["settings", "Settings", "Dims", "DataConfig", "RunPaths", "RunConfig", "load_run_config"]
