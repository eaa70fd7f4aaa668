"""
Binary checkpoints for trained models.

Layout (all integers little-endian):
    b"PFG1" | u16 version | u16 kind length | kind (ascii)
    | u32 header length | header (canonical JSON: dims and meta)
    | u32 array count | per array: u16 name length, name, u8 ndim, u32 per axis, float64 data
    | u32 CRC-32 of every preceding byte
"""
import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from src.exceptions import CheckpointError
from src.modeling.classifier import ActionClassifier
from src.modeling.networks import Params, freeze_params, mlp_layers, prefixed, unprefixed
from src.modeling.pose_gan import PoseCritic, SinglePoseGenerator
from src.modeling.seq_gan import SequenceDiscriminator, SequenceGenerator
from src.modeling.skel2img import S2iArchitecture, TransformerF

logger = logging.getLogger(__name__)

MAGIC = b"PFG1"
VERSION = 1


class CheckpointKind(str, Enum):
    POSE_GAN = "pose_gan"
    SEQ_GAN = "seq_gan"
    S2I = "s2i"
    CLASSIFIER = "classifier"


@dataclass(eq=False)
class Checkpoint:
    """
    A model kind, its dimension header and its named parameter arrays.

    Attributes:
        kind: Model kind tag
        dims: Named dimensions (J, m, n, C, ...) checked against the run on load
        arrays: Parameter arrays in payload order
        meta: Extra JSON-serializable settings needed to rebuild the model
    """

    kind: str
    dims: Dict[str, int]
    arrays: Params
    meta: Dict[str, Any] = field(default_factory=dict)


def _header_bytes(ckpt: Checkpoint) -> bytes:
    header = {"dims": {k: int(v) for k, v in ckpt.dims.items()}, "meta": ckpt.meta}
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """Serialize a checkpoint to bytes."""
    kind = ckpt.kind.encode("ascii")
    header = _header_bytes(ckpt)
    parts = [MAGIC, struct.pack("<HH", VERSION, len(kind)), kind, struct.pack("<I", len(header)), header]
    parts.append(struct.pack("<I", len(ckpt.arrays)))
    for name, value in ckpt.arrays.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(value, dtype="<f8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str) -> Tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Parse checkpoint bytes, validating magic, version and checksum.

    Args:
        data: Encoded checkpoint

    Returns:
        Checkpoint: Decoded kind, dims, meta and arrays
    """
    if len(data) < len(MAGIC) + 4 or data[:4] != MAGIC:
        raise CheckpointError("not a poseforge checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch")

    reader = _Reader(body)
    reader.take(len(MAGIC))
    version, kind_len = reader.unpack("<HH")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kind = reader.take(kind_len).decode("ascii")
    (header_len,) = reader.unpack("<I")
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"checkpoint header is not valid JSON: {exc}") from exc

    (count,) = reader.unpack("<I")
    arrays: Params = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if reader.pos != len(body):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(kind=kind, dims=header.get("dims", {}), arrays=arrays, meta=header.get("meta", {}))


def check_dims(ckpt: Checkpoint, expected: Optional[Mapping[str, int]]) -> None:
    """Raise if any dimension named in both the checkpoint and ``expected`` disagrees."""
    if not expected:
        return
    clashes = {k: (ckpt.dims[k], v) for k, v in expected.items() if k in ckpt.dims and ckpt.dims[k] != v}
    if clashes:
        detail = ", ".join(f"{k}: checkpoint {a} vs run {b}" for k, (a, b) in sorted(clashes.items()))
        raise CheckpointError(f"{ckpt.kind} checkpoint does not match the run ({detail})")


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    """Write a checkpoint file, creating parent directories."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(encode_checkpoint(ckpt))
    logger.info("checkpoint_saved", extra={"record": {"path": path, "kind": ckpt.kind, "arrays": len(ckpt.arrays)}})


def load_checkpoint(path: str, kind: str, expected_dims: Optional[Mapping[str, int]] = None) -> Checkpoint:
    """
    Read a checkpoint of a given kind and check its dims against the run.

    Args:
        path: Checkpoint file
        kind: Required kind tag
        expected_dims: Dimensions the run requires

    Returns:
        Checkpoint: Decoded checkpoint
    """
    kind = CheckpointKind(kind).value
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    ckpt = decode_checkpoint(data)
    if ckpt.kind != kind:
        raise CheckpointError(f"{path} holds a {ckpt.kind} checkpoint, expected {kind}")
    check_dims(ckpt, expected_dims)
    return ckpt


def _require(ckpt: Checkpoint, kind: CheckpointKind) -> None:
    if ckpt.kind != kind.value:
        raise CheckpointError(f"expected a {kind.value} checkpoint, got {ckpt.kind}")


def _hidden_widths(params: Mapping[str, np.ndarray], prefix: str) -> List[int]:
    return [int(params[f"{prefix}w{i}"].shape[1]) for i in range(mlp_layers(params, prefix) - 1)]


def pack_pose_gan(generator: SinglePoseGenerator, critic: Optional[PoseCritic] = None) -> Checkpoint:
    arrays = prefixed(generator.params, "g.")
    if critic is not None:
        arrays.update(prefixed(critic.params, "d."))
    return Checkpoint(CheckpointKind.POSE_GAN.value, dict(generator.dims), arrays, {"has_critic": critic is not None})


def unpack_pose_gan(ckpt: Checkpoint) -> Tuple[SinglePoseGenerator, Optional[PoseCritic]]:
    """Rebuild G0 and, when stored, its critic."""
    _require(ckpt, CheckpointKind.POSE_GAN)
    d = ckpt.dims
    generator = SinglePoseGenerator(freeze_params(unprefixed(ckpt.arrays, "g.")), d["m"], d["C"], d["J"])
    critic = None
    if ckpt.meta.get("has_critic"):
        critic = PoseCritic(freeze_params(unprefixed(ckpt.arrays, "d.")), d["C"], d["J"])
    return generator, critic


def pack_seq_gan(generator: SequenceGenerator, discriminator: SequenceDiscriminator) -> Checkpoint:
    dims = {**generator.dims, "J": discriminator.joint_count, "H_disc": discriminator.hidden}
    arrays = {**prefixed(generator.params, "gen."), **prefixed(discriminator.params, "disc.")}
    return Checkpoint(CheckpointKind.SEQ_GAN.value, dims, arrays)


def unpack_seq_gan(ckpt: Checkpoint) -> Tuple[SequenceGenerator, SequenceDiscriminator]:
    _require(ckpt, CheckpointKind.SEQ_GAN)
    d = ckpt.dims
    generator = SequenceGenerator(freeze_params(unprefixed(ckpt.arrays, "gen.")), d["n"], d["m"], d["C"], d["H"])
    discriminator = SequenceDiscriminator(freeze_params(unprefixed(ckpt.arrays, "disc.")), d["J"], d["C"], d["H_disc"])
    return generator, discriminator


def pack_transformer(transformer: TransformerF) -> Checkpoint:
    meta = {"arch": transformer.arch.model_dump()}
    return Checkpoint(CheckpointKind.S2I.value, dict(transformer.dims), dict(transformer.params), meta)


def unpack_transformer(ckpt: Checkpoint) -> TransformerF:
    _require(ckpt, CheckpointKind.S2I)
    arch = S2iArchitecture.model_validate(ckpt.meta["arch"])
    return TransformerF(freeze_params(ckpt.arrays), arch, ckpt.dims["J"])


def pack_classifier(classifier: ActionClassifier) -> Checkpoint:
    arrays = {**prefixed(classifier.params, "net."), **prefixed(classifier.stats, "stats.")}
    meta = {"hidden": _hidden_widths(classifier.params, "pose_")}
    return Checkpoint(CheckpointKind.CLASSIFIER.value, dict(classifier.dims), arrays, meta)


def unpack_classifier(ckpt: Checkpoint) -> ActionClassifier:
    _require(ckpt, CheckpointKind.CLASSIFIER)
    params = freeze_params(unprefixed(ckpt.arrays, "net."))
    return ActionClassifier(params, freeze_params(unprefixed(ckpt.arrays, "stats.")), ckpt.dims["C"])
