"""
Tests for the latent-shift sequence generator and the bidirectional discriminator.
"""
import numpy as np
import pytest
from helpers import params_equal, zeros_like_params

from src.exceptions import DatasetError, ShapeError
from src.models import ClassId, Dataset, PoseSequence, one_hot_rows
from src.modeling.pose_gan import SinglePoseGenerator, WganTrainConfig, g0_forward, train_single_pose
from src.modeling.seq_gan import (
    SeqTrainConfig,
    SequenceDiscriminator,
    SequenceGenerator,
    discriminator_probabilities,
    dps_forward,
    generate_batch,
    gps_forward,
    integrate_shifts,
    sequence_generator_loss,
    train_sequence,
)
from src.numerics import backward


def test_integrate_shifts_accumulates():
    """Shifts add up along the path."""
    path = integrate_shifts(np.array([0.5]), np.array([[0.2], [-0.3]]))
    np.testing.assert_allclose(path[:, 0], [0.5, 0.7, 0.4])


def test_integrate_shifts_clamps():
    """Points are clamped into [-1, 1] after each accumulation."""
    path = integrate_shifts(np.array([0.9]), np.array([[0.2], [-0.5]]))
    np.testing.assert_allclose(path[:, 0], [0.9, 1.0, 0.5])


def test_integrate_zero_shifts_constant():
    """All-zero shifts keep the start latent."""
    z0 = np.array([0.1, -0.4, 0.8])
    path = integrate_shifts(z0, np.zeros((5, 3)))
    np.testing.assert_array_equal(path, np.tile(z0, (6, 1)))


def test_integrate_shifts_stays_in_range():
    """Large random shifts never leave the unit box."""
    rng = np.random.default_rng(0)
    path = integrate_shifts(rng.uniform(-1, 1, size=4), rng.normal(scale=3.0, size=(30, 4)))
    assert np.all(np.abs(path) <= 1.0)


def test_gps_forward_shape(tiny_models):
    """T frames of 2J coordinates, deterministic."""
    z = np.linspace(-1, 1, 4)
    z0 = np.array([0.2, -0.1, 0.5])
    first = gps_forward(z, z0, ClassId(1, 2), tiny_models.generator, tiny_models.g0, length=6)
    second = gps_forward(z, z0, ClassId(1, 2), tiny_models.generator, tiny_models.g0, length=6)
    assert first.shape == (6, 4)
    np.testing.assert_array_equal(first, second)


def test_zero_shift_generator_repeats_first_pose(tiny_models):
    """A generator whose head is zero decodes G0(z0|c) at every frame."""
    gen = tiny_models.generator
    still = gen.with_params(zeros_like_params(gen.params, keep=[k for k in gen.params if not k.startswith("head_")]))
    z0 = np.array([0.3, 0.0, -0.7])
    frames = gps_forward(np.ones(4), z0, ClassId(0, 2), still, tiny_models.g0, length=6)
    expected = g0_forward(tiny_models.g0, z0, ClassId(0, 2))
    np.testing.assert_allclose(frames, np.tile(expected, (6, 1)))


def test_gps_forward_rejects_mismatched_g0(tiny_models):
    """Generator and G0 must share m."""
    other = SinglePoseGenerator.create(np.random.default_rng(0), 5, 2, 2, [4])
    with pytest.raises(ShapeError):
        gps_forward(np.zeros(4), np.zeros(3), ClassId(0, 2), tiny_models.generator, other, length=6)


def test_dps_forward_is_probability(tiny_models):
    """Output lies strictly inside (0, 1)."""
    frames = np.random.default_rng(2).uniform(-1, 1, size=(6, 4))
    p = dps_forward(frames, ClassId(0, 2), tiny_models.discriminator)
    assert 0.0 < p < 1.0


def test_dps_zero_head_gives_half(tiny_models):
    """A zero head maps every sequence to sigmoid(0)."""
    disc = tiny_models.discriminator
    flat = disc.with_params(zeros_like_params(disc.params, keep=[k for k in disc.params if not k.startswith("head_")]))
    frames = np.random.default_rng(3).uniform(-1, 1, size=(6, 4))
    assert dps_forward(frames, ClassId(1, 2), flat) == pytest.approx(0.5)


def test_dps_time_reversal_changes_output(tiny_models):
    """Reversing a sequence flips the deltas the discriminator sees."""
    frames = np.random.default_rng(4).uniform(-1, 1, size=(6, 4))
    forward = dps_forward(frames, ClassId(0, 2), tiny_models.discriminator)
    reversed_ = dps_forward(frames[::-1], ClassId(0, 2), tiny_models.discriminator)
    assert forward != pytest.approx(reversed_, abs=1e-12)


def test_dps_rejects_single_frame(tiny_models):
    """One frame has no deltas."""
    with pytest.raises(ShapeError):
        dps_forward(np.zeros((1, 4)), ClassId(0, 2), tiny_models.discriminator)


def test_generator_loss_gradient_matches_finite_differences(tiny_models):
    """Shift-head gradients agree with central differences."""
    rng = np.random.default_rng(6)
    cfg = SeqTrainConfig(l2_shift_weight=0.1)
    z = rng.normal(size=(2, 4))
    z0 = rng.uniform(-0.5, 0.5, size=(2, 3))
    onehot = one_hot_rows([0, 1], 2)
    gen = tiny_models.generator
    args = (tiny_models.discriminator, tiny_models.g0, z, z0, onehot, 6, cfg)
    record = sequence_generator_loss(gen, *args)
    grad = backward(record.tape, record.loss, [record.bound["head_w"]])[record.bound["head_w"]]

    def loss_at(w):
        params = dict(gen.params)
        params["head_w"] = w
        return float(sequence_generator_loss(gen.with_params(params), *args).loss.value)

    base = gen.params["head_w"]
    numeric = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        step = np.zeros_like(base)
        step[idx] = 1e-6
        numeric[idx] = (loss_at(base + step) - loss_at(base - step)) / 2e-6
    assert np.max(np.abs(grad - numeric)) / np.max(np.abs(numeric)) < 1e-4


def test_shift_penalty_term(tiny_models):
    """The regularizer term is reported alongside the adversarial loss."""
    rng = np.random.default_rng(7)
    cfg = SeqTrainConfig(l2_shift_weight=0.5)
    record = sequence_generator_loss(
        tiny_models.generator,
        tiny_models.discriminator,
        tiny_models.g0,
        rng.normal(size=(3, 4)),
        rng.uniform(-1, 1, size=(3, 3)),
        one_hot_rows([0, 1, 0], 2),
        6,
        cfg,
    )
    terms = record.terms
    assert terms["shift_l2"] >= 0.0
    assert terms["gen_loss"] == pytest.approx(terms["gen_adversarial"] + 0.5 * terms["shift_l2"])


def sequence_stack(skeleton_joints, class_count, seed=0):
    """Random G0 sized for a dataset."""
    return SinglePoseGenerator.create(np.random.default_rng(seed), 3, class_count, skeleton_joints, [8])


def test_train_sequence_keeps_g0_and_is_deterministic(small_dataset):
    """G0 is untouched; the same seed reproduces both networks."""
    g0 = sequence_stack(7, small_dataset.class_count)
    before = {k: v.copy() for k, v in g0.params.items()}
    cfg = SeqTrainConfig(noise_dim=3, hidden=4, batch_size=4, steps=2, log_every=0)
    first = train_sequence(small_dataset, g0, cfg, seed=9)
    second = train_sequence(small_dataset, g0, cfg, seed=9)
    assert params_equal(g0.params, before)
    assert params_equal(first.generator.params, second.generator.params)
    assert params_equal(first.discriminator.params, second.discriminator.params)
    assert len(first.history) == 2
    assert {"disc_loss", "gen_loss", "shift_l2"} <= set(first.history.columns)


def test_train_sequence_rejects_mixed_lengths():
    """All sequences must share one length."""
    data = Dataset([PoseSequence(np.zeros((4, 2)), "a"), PoseSequence(np.zeros((5, 2)), "a")])
    g0 = sequence_stack(1, 1)
    with pytest.raises(DatasetError):
        train_sequence(data, g0, SeqTrainConfig(steps=1))


def test_train_sequence_rejects_missing_class():
    """A vocabulary class without sequences is refused."""
    data = Dataset([PoseSequence(np.zeros((4, 2)), "a")], ["a", "b"])
    g0 = sequence_stack(1, 2)
    with pytest.raises(DatasetError):
        train_sequence(data, g0, SeqTrainConfig(steps=1))


def oscillations(count, length=16, seed=0):
    """One-joint sinusoids with random phase and amplitude, y fixed at zero."""
    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    phase = rng.uniform(0, 2 * np.pi, size=(count, 1))
    amp = rng.uniform(0.4, 0.8, size=(count, 1))
    x = amp * np.sin(2 * np.pi * t[None, :] + phase)
    return np.stack([x, np.zeros_like(x)], axis=2)


@pytest.mark.slow
def test_toy_oscillation_training_is_balanced_and_smooth():
    """Trained discriminator is not degenerate and generated motion stays smooth."""
    train = oscillations(256, seed=0)
    held_out = oscillations(64, seed=1)
    data = Dataset([PoseSequence(seq, "osc") for seq in train])
    poses = train.reshape(-1, 2)
    g0 = train_single_pose(poses, np.zeros(len(poses), dtype=int), 1, WganTrainConfig(latent_dim=2, steps=2000, log_every=0)).generator
    result = train_sequence(data, g0, SeqTrainConfig(steps=3000, log_every=0), seed=0)

    rng = np.random.default_rng(2)
    fakes, path = generate_batch(rng, result.generator, g0, np.zeros(64, dtype=int), 16)
    onehot = np.ones((64, 1))
    real_p = discriminator_probabilities(held_out, onehot, result.discriminator)
    fake_p = discriminator_probabilities(fakes, onehot, result.discriminator)
    accuracy = 0.5 * (np.mean(real_p > 0.5) + np.mean(fake_p < 0.5))
    assert 0.4 <= accuracy <= 0.75

    fake_step = np.linalg.norm(np.diff(fakes, axis=1), axis=2).mean()
    real_step = np.linalg.norm(np.diff(train, axis=1), axis=2).mean()
    assert fake_step <= 3.0 * real_step
    assert np.all(np.abs(path) <= 1.0)
