"""
Pose-sequence GAN: an LSTM emits latent shifts that are integrated into a
latent path and decoded frame by frame through a frozen single-pose
generator; a bidirectional LSTM judges frame deltas conditioned on the
frame and class.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from src.exceptions import DatasetError, ShapeError
from src.models import ClassId, Dataset, one_hot_rows
from src.modeling.networks import (
    Bound,
    Params,
    bind,
    freeze_params,
    glorot,
    init_lstm,
    lstm_run,
    lstm_step,
)
from src.modeling.pose_gan import LossRecord, SinglePoseGenerator
from src.modeling.train import LossHistory, Trainable, sample_batch, steps_per_epoch
from src.numerics import AdamHyper, Tape, Var
from src.numerics import ops

logger = logging.getLogger(__name__)


class SeqTrainConfig(BaseModel):
    """
    Settings for the sequence stage.

    Attributes:
        noise_dim: Size n of the sequence noise z
        hidden: LSTM width of generator and discriminator
        l2_shift_weight: Weight of the mean squared shift penalty
        latent_clamp: Range every latent path point is clamped into
        batch_size: Minibatch size
        steps: Generator updates
        hyper: Adam settings shared by both networks
        log_every: Steps between log records
    """
    noise_dim: int = Field(64, ge=1)
    hidden: int = Field(64, ge=1)
    l2_shift_weight: float = Field(0.1, ge=0)
    latent_clamp: Tuple[float, float] = (-1.0, 1.0)
    batch_size: int = Field(16, ge=1)
    steps: int = Field(3000, ge=1)
    hyper: AdamHyper = AdamHyper(lr=5e-5, beta1=0.5, beta2=0.9, decay_factor=0.5, decay_epoch=30)
    log_every: int = Field(100, ge=0)

    @model_validator(mode="after")
    def check_clamp(self) -> "SeqTrainConfig":
        if self.latent_clamp[0] >= self.latent_clamp[1]:
            raise ValueError("latent_clamp must be an increasing pair")
        return self


@dataclass(frozen=True, eq=False)
class SequenceGenerator:
    """
    LSTM whose initial state encodes (z0 ⊕ class) and whose per-step input is the noise z.
    A linear head maps each hidden state to an m-dim latent shift.
    """

    params: Params
    noise_dim: int
    latent_dim: int
    class_count: int
    hidden: int

    @classmethod
    def create(
        cls, rng: np.random.Generator, noise_dim: int, latent_dim: int, class_count: int, hidden: int = 64
    ) -> "SequenceGenerator":
        params: Params = {
            "init_w": glorot(rng, latent_dim + class_count, hidden),
            "init_b": np.zeros(hidden),
            **init_lstm(rng, noise_dim, hidden, "cell_"),
            "head_w": glorot(rng, hidden, latent_dim) * 0.1,
            "head_b": np.zeros(latent_dim),
        }
        return cls(freeze_params(params), noise_dim, latent_dim, class_count, hidden)

    def with_params(self, params: Params) -> "SequenceGenerator":
        return SequenceGenerator(freeze_params(params), self.noise_dim, self.latent_dim, self.class_count, self.hidden)

    @property
    def dims(self) -> Dict[str, int]:
        return {"n": self.noise_dim, "m": self.latent_dim, "C": self.class_count, "H": self.hidden}

    def shifts(self, bound: Bound, z: Var, z0: Var, c: Var, count: int) -> List[Var]:
        """``count`` latent shifts of shape (N, m)."""
        if z.shape[1] != self.noise_dim or z0.shape[1] != self.latent_dim or c.shape[1] != self.class_count:
            raise ShapeError("sequence generator inputs do not match its dimensions")
        h = ops.tanh(ops.add(ops.matmul(ops.concat([z0, c], axis=1), bound["init_w"]), bound["init_b"]))
        cell = z.tape.constant(np.zeros(h.shape))
        result = []
        for _ in range(count):
            h, cell = lstm_step(bound, "cell_", z, h, cell)
            result.append(ops.add(ops.matmul(h, bound["head_w"]), bound["head_b"]))
        return result


@dataclass(frozen=True, eq=False)
class SequenceDiscriminator:
    """Forward and backward LSTMs over (delta ⊕ frame ⊕ class); head on both final states."""

    params: Params
    joint_count: int
    class_count: int
    hidden: int

    @classmethod
    def create(cls, rng: np.random.Generator, joint_count: int, class_count: int, hidden: int = 64) -> "SequenceDiscriminator":
        width = 4 * joint_count + class_count
        params: Params = {
            **init_lstm(rng, width, hidden, "fwd_"),
            **init_lstm(rng, width, hidden, "bwd_"),
            "head_w": glorot(rng, 2 * hidden, 1),
            "head_b": np.zeros(1),
        }
        return cls(freeze_params(params), joint_count, class_count, hidden)

    def with_params(self, params: Params) -> "SequenceDiscriminator":
        return SequenceDiscriminator(freeze_params(params), self.joint_count, self.class_count, self.hidden)

    @property
    def dims(self) -> Dict[str, int]:
        return {"J": self.joint_count, "C": self.class_count, "H": self.hidden}

    def logits(self, bound: Bound, frames: List[Var], c: Var) -> Var:
        """Realness logits (N, 1) for frame lists of length T >= 2."""
        if len(frames) < 2:
            raise ShapeError("the sequence discriminator needs at least two frames")
        if frames[0].shape[1] != 2 * self.joint_count or c.shape[1] != self.class_count:
            raise ShapeError("discriminator inputs do not match its dimensions")
        steps = [
            ops.concat([ops.sub(frames[t + 1], frames[t]), frames[t], c], axis=1) for t in range(len(frames) - 1)
        ]
        tape = c.tape
        zeros = tape.constant(np.zeros((c.shape[0], self.hidden)))
        forward = lstm_run(bound, "fwd_", steps, zeros, zeros)
        backward_state = lstm_run(bound, "bwd_", steps[::-1], zeros, zeros)
        both = ops.concat([forward, backward_state], axis=1)
        return ops.add(ops.matmul(both, bound["head_w"]), bound["head_b"])


def integrate_shift_vars(z0: Var, shifts: List[Var], clamp: Tuple[float, float] = (-1.0, 1.0)) -> List[Var]:
    """Latent path z_0, ..., z_{T-1} with z_{t+1} = clamp(z_t + s_t) on the tape."""
    path = [z0]
    for shift in shifts:
        path.append(ops.clip(ops.add(path[-1], shift), *clamp))
    return path


def integrate_shifts(z0: np.ndarray, shifts: np.ndarray, clamp: Tuple[float, float] = (-1.0, 1.0)) -> np.ndarray:
    """
    Accumulate latent shifts into a clamped latent path.

    Args:
        z0: Start latent (m,)
        shifts: Shifts (T-1, m)

    Returns:
        np.ndarray: Path (T, m)
    """
    z0 = np.asarray(z0, dtype=np.float64).reshape(1, -1)
    shifts = np.asarray(shifts, dtype=np.float64).reshape(-1, z0.shape[1])
    tape = Tape()
    path = integrate_shift_vars(tape.constant(z0), [tape.constant(s[None, :]) for s in shifts], clamp)
    return np.concatenate([p.value for p in path])


@dataclass
class DecodedBatch:
    """Tape handles produced while decoding a batch of sequences."""

    frames: List[Var]
    shifts: List[Var]
    path: List[Var]


def decode_sequences(
    generator: SequenceGenerator,
    gen_bound: Bound,
    g0: SinglePoseGenerator,
    g0_bound: Bound,
    z: Var,
    z0: Var,
    c: Var,
    length: int,
    clamp: Tuple[float, float] = (-1.0, 1.0),
) -> DecodedBatch:
    """Generate shifts, integrate the latent path and decode each point through G0."""
    if length < 2:
        raise ShapeError("generated sequences need at least two frames")
    if g0.latent_dim != generator.latent_dim or g0.class_count != generator.class_count:
        raise ShapeError("sequence generator and pose generator disagree on m or C")
    shifts = generator.shifts(gen_bound, z, z0, c, length - 1)
    path = integrate_shift_vars(z0, shifts, clamp)
    frames = [g0.forward(g0_bound, point, c) for point in path]
    return DecodedBatch(frames=frames, shifts=shifts, path=path)


def gps_forward(
    z: np.ndarray,
    z0: np.ndarray,
    class_id: ClassId,
    generator: SequenceGenerator,
    g0: SinglePoseGenerator,
    length: int = 16,
) -> np.ndarray:
    """
    Generate one pose sequence.

    Args:
        z: Noise (n,)
        z0: Start latent (m,)
        class_id: Conditioning class
        generator: Sequence generator
        g0: Single-pose generator
        length: Number of frames T

    Returns:
        np.ndarray: Frames (T, 2J)
    """
    tape = Tape()
    decoded = decode_sequences(
        generator,
        bind(tape, generator.params, trainable=False),
        g0,
        bind(tape, g0.params, trainable=False),
        tape.constant(np.asarray(z, dtype=np.float64).reshape(1, -1)),
        tape.constant(np.asarray(z0, dtype=np.float64).reshape(1, -1)),
        tape.constant(class_id.one_hot()[None, :]),
        length,
    )
    return np.concatenate([frame.value for frame in decoded.frames])


def generate_batch(
    rng: np.random.Generator,
    generator: SequenceGenerator,
    g0: SinglePoseGenerator,
    labels: np.ndarray,
    length: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample sequences from the priors: z Gaussian, z0 uniform.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Frames (N, T, 2J) and latent paths (N, T, m)
    """
    count = len(labels)
    tape = Tape()
    decoded = decode_sequences(
        generator,
        bind(tape, generator.params, trainable=False),
        g0,
        bind(tape, g0.params, trainable=False),
        tape.constant(rng.normal(size=(count, generator.noise_dim))),
        tape.constant(rng.uniform(-1.0, 1.0, size=(count, generator.latent_dim))),
        tape.constant(one_hot_rows(labels, generator.class_count)),
        length,
    )
    frames = np.stack([f.value for f in decoded.frames], axis=1)
    path = np.stack([p.value for p in decoded.path], axis=1)
    return frames, path


def dps_forward(frames: np.ndarray, class_id: ClassId, discriminator: SequenceDiscriminator) -> float:
    """
    Probability that a sequence is real.

    Args:
        frames: Frames (T, 2J), T >= 2
        class_id: Conditioning class
        discriminator: Sequence discriminator

    Returns:
        float: Value in (0, 1)
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise ShapeError("the sequence discriminator needs at least two frames")
    return float(discriminator_probabilities(frames[None], one_hot_rows([class_id.index], class_id.count), discriminator)[0])


def discriminator_probabilities(frames: np.ndarray, onehot: np.ndarray, discriminator: SequenceDiscriminator) -> np.ndarray:
    """Realness probabilities for a batch of sequences (N, T, 2J)."""
    tape = Tape()
    bound = bind(tape, discriminator.params, trainable=False)
    frame_vars = [tape.constant(frames[:, t]) for t in range(frames.shape[1])]
    logits = discriminator.logits(bound, frame_vars, tape.constant(onehot))
    return ops.sigmoid(logits).value[:, 0]


def discriminator_loss(
    discriminator: SequenceDiscriminator, real: np.ndarray, fake: np.ndarray, real_onehot: np.ndarray, fake_onehot: np.ndarray
) -> LossRecord:
    """-[mean log D(real) + mean log(1 - D(fake))], recorded against discriminator parameters."""
    tape = Tape()
    bound = bind(tape, discriminator.params)
    real_logits = discriminator.logits(bound, [tape.constant(real[:, t]) for t in range(real.shape[1])], tape.constant(real_onehot))
    fake_logits = discriminator.logits(bound, [tape.constant(fake[:, t]) for t in range(fake.shape[1])], tape.constant(fake_onehot))
    real_term = ops.mean(ops.log_sigmoid(real_logits))
    fake_term = ops.mean(ops.log_sigmoid(ops.scale(fake_logits, -1.0)))
    loss = ops.scale(ops.add(real_term, fake_term), -1.0)
    accuracy = 0.5 * (np.mean(real_logits.value > 0) + np.mean(fake_logits.value < 0))
    return LossRecord(tape, loss, bound, {"disc_loss": float(loss.value), "disc_accuracy": float(accuracy)})


def sequence_generator_loss(
    generator: SequenceGenerator,
    discriminator: SequenceDiscriminator,
    g0: SinglePoseGenerator,
    z: np.ndarray,
    z0: np.ndarray,
    onehot: np.ndarray,
    length: int,
    cfg: SeqTrainConfig,
) -> LossRecord:
    """Non-saturating -mean log D(G(z)) plus the weighted mean squared shift."""
    tape = Tape()
    bound = bind(tape, generator.params)
    c = tape.constant(onehot)
    decoded = decode_sequences(
        generator,
        bound,
        g0,
        bind(tape, g0.params, trainable=False),
        tape.constant(z),
        tape.constant(z0),
        c,
        length,
        cfg.latent_clamp,
    )
    logits = discriminator.logits(bind(tape, discriminator.params, trainable=False), decoded.frames, c)
    adversarial = ops.scale(ops.mean(ops.log_sigmoid(logits)), -1.0)
    shift_sq = [ops.mean(ops.sum_(ops.square(s), axis=1)) for s in decoded.shifts]
    regularizer = shift_sq[0]
    for term in shift_sq[1:]:
        regularizer = ops.add(regularizer, term)
    regularizer = ops.scale(regularizer, 1.0 / len(shift_sq))
    loss = ops.add(adversarial, ops.scale(regularizer, cfg.l2_shift_weight))
    terms = {
        "gen_loss": float(loss.value),
        "gen_adversarial": float(adversarial.value),
        "shift_l2": float(regularizer.value),
    }
    return LossRecord(tape, loss, bound, terms)


@dataclass
class SeqGanResult:
    generator: SequenceGenerator
    discriminator: SequenceDiscriminator
    history: pd.DataFrame = field(repr=False)


def train_sequence(
    dataset: Dataset,
    g0: SinglePoseGenerator,
    cfg: Optional[SeqTrainConfig] = None,
    seed: int = 0,
) -> SeqGanResult:
    """
    Adversarial training of the sequence generator against the bidirectional discriminator.

    G0 is only read; its parameters are never updated here.

    Args:
        dataset: Real sequences, all of the same length
        g0: Trained single-pose generator
        cfg: Training settings
        seed: Seed for initialization, batches and noise

    Returns:
        SeqGanResult: Trained generator and discriminator plus one history row per step
    """
    cfg = cfg or SeqTrainConfig()
    if not dataset.sequences:
        raise DatasetError("training needs at least one sequence")
    real = dataset.stacked()
    if real.shape[1] < 2:
        raise DatasetError("sequences need at least two frames")
    dataset.require_classes()
    if dataset.class_count != g0.class_count or real.shape[2] != 2 * g0.joint_count:
        raise ShapeError("dataset and pose generator disagree on classes or joints")
    labels = dataset.labels()
    length = real.shape[1]

    rng = np.random.default_rng(seed)
    generator = SequenceGenerator.create(rng, cfg.noise_dim, g0.latent_dim, g0.class_count, cfg.hidden)
    discriminator = SequenceDiscriminator.create(rng, g0.joint_count, g0.class_count, cfg.hidden)
    g_opt = Trainable(generator.params, cfg.hyper)
    d_opt = Trainable(discriminator.params, cfg.hyper)
    per_epoch = steps_per_epoch(len(labels), cfg.batch_size)
    history = LossHistory("seq_gan", cfg.log_every)

    for step in range(cfg.steps):
        epoch = step // per_epoch
        idx = sample_batch(rng, len(labels), cfg.batch_size)
        fake_labels = rng.integers(0, g0.class_count, size=cfg.batch_size)
        fake, _ = generate_batch(rng, generator.with_params(g_opt.params), g0, fake_labels, length)
        d_record = discriminator_loss(
            discriminator.with_params(d_opt.params),
            real[idx],
            fake,
            one_hot_rows(labels[idx], g0.class_count),
            one_hot_rows(fake_labels, g0.class_count),
        )
        d_opt.update(d_record.tape, d_record.loss, d_record.bound, epoch)

        gen_labels = rng.integers(0, g0.class_count, size=cfg.batch_size)
        g_record = sequence_generator_loss(
            generator.with_params(g_opt.params),
            discriminator.with_params(d_opt.params),
            g0,
            rng.normal(size=(cfg.batch_size, cfg.noise_dim)),
            rng.uniform(-1.0, 1.0, size=(cfg.batch_size, g0.latent_dim)),
            one_hot_rows(gen_labels, g0.class_count),
            length,
            cfg,
        )
        g_opt.update(g_record.tape, g_record.loss, g_record.bound, epoch)
        history.append(step, **d_record.terms, **g_record.terms)

    logger.info("seq_gan_trained", extra={"record": {"steps": cfg.steps, "seed": seed}})
    return SeqGanResult(
        generator=generator.with_params(g_opt.params),
        discriminator=discriminator.with_params(d_opt.params),
        history=history.to_frame(),
    )
