"""
Tests for checkpoint persistence.
"""
import numpy as np
import pytest
from helpers import params_equal

from src.exceptions import CheckpointError
from src.modeling.classifier import ActionClassifier
from src.modeling.pose_gan import PoseCritic, SinglePoseGenerator
from src.modeling.skel2img import S2iArchitecture, TransformerF
from src.services.checkpoint import (
    Checkpoint,
    CheckpointKind,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    pack_classifier,
    pack_pose_gan,
    pack_seq_gan,
    pack_transformer,
    save_checkpoint,
    unpack_classifier,
    unpack_pose_gan,
    unpack_seq_gan,
    unpack_transformer,
)


@pytest.fixture(name="pose_gan")
def pose_gan_fixture():
    """A tiny G0 with its critic."""
    rng = np.random.default_rng(4)
    return SinglePoseGenerator.create(rng, 3, 2, 2, [5]), PoseCritic.create(rng, 2, 2, [5])


def test_bytes_are_stable(pose_gan):
    """save -> load -> save reproduces the same bytes."""
    data = encode_checkpoint(pack_pose_gan(*pose_gan))
    generator, critic = unpack_pose_gan(decode_checkpoint(data))
    assert encode_checkpoint(pack_pose_gan(generator, critic)) == data


def test_file_round_trip(tmp_path, pose_gan):
    """Parameters survive a trip through disk."""
    path = str(tmp_path / "ckpt" / "g0.pfg")
    save_checkpoint(path, pack_pose_gan(*pose_gan))
    generator, critic = unpack_pose_gan(load_checkpoint(path, CheckpointKind.POSE_GAN, {"J": 2, "C": 2}))
    assert params_equal(generator.params, pose_gan[0].params)
    assert params_equal(critic.params, pose_gan[1].params)
    assert generator.dims == pose_gan[0].dims


def test_generator_only(pose_gan):
    """The critic is optional."""
    generator, critic = unpack_pose_gan(decode_checkpoint(encode_checkpoint(pack_pose_gan(pose_gan[0]))))
    assert critic is None
    assert params_equal(generator.params, pose_gan[0].params)


def test_seq_gan_round_trip(tiny_models):
    """Generator and discriminator keep their sizes."""
    data = encode_checkpoint(pack_seq_gan(tiny_models.generator, tiny_models.discriminator))
    generator, discriminator = unpack_seq_gan(decode_checkpoint(data))
    assert generator.dims == tiny_models.generator.dims
    assert discriminator.dims == tiny_models.discriminator.dims
    assert params_equal(discriminator.params, tiny_models.discriminator.params)


def test_transformer_round_trip():
    """Architecture settings travel in the header."""
    arch = S2iArchitecture(size=8, kernel=3, encoder_channels=[2, 2, 3, 3], decoder_channels=[3, 2])
    f = TransformerF.create(np.random.default_rng(0), 2, arch)
    restored = unpack_transformer(decode_checkpoint(encode_checkpoint(pack_transformer(f))))
    assert restored.arch == arch
    assert params_equal(restored.params, f.params)


def test_classifier_round_trip():
    """Weights and standardization are both stored."""
    clf = ActionClassifier.create(np.random.default_rng(0), 4, 3, [5])
    restored = unpack_classifier(decode_checkpoint(encode_checkpoint(pack_classifier(clf))))
    assert params_equal(restored.params, clf.params)
    assert params_equal(restored.stats, clf.stats)
    assert restored.class_count == 3


def test_scalar_and_empty_arrays():
    """Zero-dimensional and empty arrays are encoded."""
    ckpt = Checkpoint("pose_gan", {"J": 1}, {"a": np.array(2.5), "b": np.zeros((0, 3))})
    restored = decode_checkpoint(encode_checkpoint(ckpt))
    assert restored.arrays["a"].shape == () and restored.arrays["a"] == 2.5
    assert restored.arrays["b"].shape == (0, 3)


def test_corruption_is_detected(pose_gan):
    """A flipped byte fails the checksum."""
    data = bytearray(encode_checkpoint(pack_pose_gan(*pose_gan)))
    data[40] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        decode_checkpoint(bytes(data))


def test_bad_magic():
    """Foreign files are rejected."""
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"PNG\x00" + b"\x00" * 16)


def test_dims_mismatch(tmp_path, pose_gan):
    """Header dims must agree with the run."""
    path = str(tmp_path / "g0.pfg")
    save_checkpoint(path, pack_pose_gan(*pose_gan))
    with pytest.raises(CheckpointError, match="J: checkpoint 2 vs run 7"):
        load_checkpoint(path, CheckpointKind.POSE_GAN, {"J": 7})


def test_wrong_kind(tmp_path, pose_gan):
    """A pose GAN file is not a transformer."""
    path = str(tmp_path / "g0.pfg")
    save_checkpoint(path, pack_pose_gan(*pose_gan))
    with pytest.raises(CheckpointError):
        load_checkpoint(path, CheckpointKind.S2I)


def test_missing_file(tmp_path):
    """Missing files raise a checkpoint error."""
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "nope.pfg"), CheckpointKind.SEQ_GAN)
