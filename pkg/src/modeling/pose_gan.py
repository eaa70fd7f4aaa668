"""
Conditional single-pose generator and critic trained with the improved
Wasserstein objective (gradient penalty on real/fake interpolates).
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from src.exceptions import DatasetError, ShapeError
from src.models import ClassId, one_hot_rows
from src.modeling.networks import Bound, Params, bind, freeze_params, init_mlp, mlp_forward
from src.modeling.train import LossHistory, Trainable, sample_batch, steps_per_epoch
from src.numerics import AdamHyper, Tape, Var, gradient_node
from src.numerics import ops

logger = logging.getLogger(__name__)


class WganTrainConfig(BaseModel):
    """
    Settings for the single-pose adversarial stage.

    Attributes:
        latent_dim: Size m of the pose latent z0
        hidden: Hidden widths of both MLPs
        gp_weight: Gradient-penalty weight
        critic_iters: Critic updates per generator update
        batch_size: Minibatch size
        steps: Generator updates
        hyper: Adam settings shared by both networks
        log_every: Steps between log records
    """
    latent_dim: int = Field(8, ge=1)
    hidden: List[int] = [128, 128]
    gp_weight: float = Field(10.0, ge=0)
    critic_iters: int = Field(5, ge=1)
    batch_size: int = Field(64, ge=1)
    steps: int = Field(2000, ge=1)
    hyper: AdamHyper = AdamHyper(lr=0.001, beta1=0.5, beta2=0.9, decay_factor=0.5, decay_epoch=30)
    log_every: int = Field(100, ge=0)


@dataclass(frozen=True, eq=False)
class SinglePoseGenerator:
    """MLP from (z0 ⊕ one-hot class) to a pose vector, tanh output."""

    params: Params
    latent_dim: int
    class_count: int
    joint_count: int

    @classmethod
    def create(
        cls, rng: np.random.Generator, latent_dim: int, class_count: int, joint_count: int, hidden: List[int]
    ) -> "SinglePoseGenerator":
        widths = [latent_dim + class_count, *hidden, 2 * joint_count]
        return cls(freeze_params(init_mlp(rng, widths, "g")), latent_dim, class_count, joint_count)

    def with_params(self, params: Params) -> "SinglePoseGenerator":
        return SinglePoseGenerator(freeze_params(params), self.latent_dim, self.class_count, self.joint_count)

    @property
    def dims(self) -> Dict[str, int]:
        return {"m": self.latent_dim, "C": self.class_count, "J": self.joint_count}

    def forward(self, bound: Bound, z0: Var, c: Var) -> Var:
        if z0.shape[1] != self.latent_dim or c.shape[1] != self.class_count:
            raise ShapeError(
                f"generator expects z0 width {self.latent_dim} and {self.class_count} classes, "
                f"got {z0.shape[1]} and {c.shape[1]}"
            )
        return mlp_forward(bound, ops.concat([z0, c], axis=1), "g", output="tanh")

    def sample(self, z0: np.ndarray, onehot: np.ndarray) -> np.ndarray:
        """Poses for a batch of latents and one-hot rows, shape (N, 2J)."""
        tape = Tape()
        bound = bind(tape, self.params, trainable=False)
        return self.forward(bound, tape.constant(np.atleast_2d(z0)), tape.constant(np.atleast_2d(onehot))).value


@dataclass(frozen=True, eq=False)
class PoseCritic:
    """MLP from (pose ⊕ one-hot class) to an unbounded realness score."""

    params: Params
    class_count: int
    joint_count: int

    @classmethod
    def create(cls, rng: np.random.Generator, class_count: int, joint_count: int, hidden: List[int]) -> "PoseCritic":
        widths = [2 * joint_count + class_count, *hidden, 1]
        return cls(freeze_params(init_mlp(rng, widths, "d")), class_count, joint_count)

    def with_params(self, params: Params) -> "PoseCritic":
        return PoseCritic(freeze_params(params), self.class_count, self.joint_count)

    @property
    def dims(self) -> Dict[str, int]:
        return {"C": self.class_count, "J": self.joint_count}

    def score(self, bound: Bound, x: Var, c: Var) -> Var:
        if x.shape[1] != 2 * self.joint_count or c.shape[1] != self.class_count:
            raise ShapeError("critic input width does not match its pose or class size")
        return mlp_forward(bound, ops.concat([x, c], axis=1), "d")


class LossRecord(NamedTuple):
    """A recorded loss with the tape and the trainable handles it was built against."""

    tape: Tape
    loss: Var
    bound: Bound
    terms: Dict[str, float]


def g0_forward(generator: SinglePoseGenerator, z0: np.ndarray, class_id: ClassId) -> np.ndarray:
    """
    Decode one latent into a pose vector.

    Args:
        generator: Single-pose generator
        z0: Latent of length m
        class_id: Conditioning class

    Returns:
        np.ndarray: Pose vector of length 2J, coordinates in [-1, 1]
    """
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.shape != (generator.latent_dim,):
        raise ShapeError(f"z0 must have length {generator.latent_dim}, got shape {z0.shape}")
    if class_id.count != generator.class_count:
        raise ShapeError(f"class vocabulary of {class_id.count} does not match {generator.class_count}")
    return generator.sample(z0[None, :], class_id.one_hot()[None, :])[0]


def gradient_penalty(tape: Tape, score_fn: Callable[[Var], Var], x_hat: Var, weight: float) -> Var:
    """
    weight * mean over rows of (|d score / d x_hat| - 1)^2, differentiable in the critic parameters.

    Args:
        tape: Tape holding the critic parameters
        score_fn: Maps an (N, 2J) batch to (N, 1) scores
        x_hat: Interpolated poses, a leaf on ``tape``
        weight: Penalty weight

    Returns:
        Var: Scalar penalty node
    """
    total = ops.sum_(score_fn(x_hat))
    grad = gradient_node(tape, total, x_hat)
    norms = ops.l2_norm(grad, axis=1)
    return ops.scale(ops.mean(ops.square(ops.add_const(norms, -1.0))), weight)


def critic_loss(
    critic: PoseCritic,
    real: np.ndarray,
    fake: np.ndarray,
    onehot: np.ndarray,
    gp_weight: float = 10.0,
    rng: Optional[np.random.Generator] = None,
    epsilon: Optional[np.ndarray] = None,
) -> LossRecord:
    """
    mean D(fake) - mean D(real) + gradient penalty on random interpolates.

    Args:
        critic: Critic to evaluate
        real: Real poses (N, 2J)
        fake: Generated poses (N, 2J)
        onehot: Class rows (N, C)
        gp_weight: Penalty weight
        rng: Draws the per-sample interpolation weights
        epsilon: Explicit interpolation weights (N,), overrides ``rng``

    Returns:
        LossRecord: Loss recorded against trainable critic parameters
    """
    real = np.atleast_2d(real)
    fake = np.atleast_2d(fake)
    if real.shape[0] == 0:
        raise ShapeError("critic loss needs a nonempty batch")
    if real.shape != fake.shape or onehot.shape[0] != real.shape[0]:
        raise ShapeError("real, fake and class batches must have the same size")
    if epsilon is None:
        epsilon = (rng or np.random.default_rng()).uniform(0.0, 1.0, size=real.shape[0])
    epsilon = np.asarray(epsilon, dtype=np.float64).reshape(-1, 1)

    tape = Tape()
    bound = bind(tape, critic.params)
    c = tape.constant(onehot)
    real_score = ops.mean(critic.score(bound, tape.constant(real), c))
    fake_score = ops.mean(critic.score(bound, tape.constant(fake), c))
    x_hat = tape.leaf(epsilon * real + (1.0 - epsilon) * fake)
    penalty = gradient_penalty(tape, lambda x: critic.score(bound, x, c), x_hat, gp_weight)
    wasserstein = ops.sub(fake_score, real_score)
    loss = ops.add(wasserstein, penalty)
    terms = {
        "critic_loss": float(loss.value),
        "wasserstein": float(-wasserstein.value),
        "gradient_penalty": float(penalty.value),
    }
    return LossRecord(tape, loss, bound, terms)


def generator_loss(
    generator: SinglePoseGenerator, critic: PoseCritic, z0: np.ndarray, onehot: np.ndarray
) -> LossRecord:
    """
    -mean D(G(z0|c)|c), recorded against trainable generator parameters.

    Args:
        generator: Generator to train
        critic: Critic, held constant
        z0: Latents (N, m)
        onehot: Class rows (N, C)

    Returns:
        LossRecord: Loss and generator handles
    """
    tape = Tape()
    bound = bind(tape, generator.params)
    fixed = bind(tape, critic.params, trainable=False)
    c = tape.constant(np.atleast_2d(onehot))
    fake = generator.forward(bound, tape.constant(np.atleast_2d(z0)), c)
    loss = ops.scale(ops.mean(critic.score(fixed, fake, c)), -1.0)
    return LossRecord(tape, loss, bound, {"generator_loss": float(loss.value)})


@dataclass
class PoseGanResult:
    generator: SinglePoseGenerator
    critic: PoseCritic
    history: pd.DataFrame = field(repr=False)


def train_single_pose(
    poses: np.ndarray,
    labels: np.ndarray,
    class_count: int,
    cfg: Optional[WganTrainConfig] = None,
    seed: int = 0,
) -> PoseGanResult:
    """
    Alternate ``critic_iters`` critic updates with one generator update.

    Args:
        poses: Real poses (N, 2J)
        labels: Class index per pose (N,)
        class_count: Vocabulary size C
        cfg: Training settings
        seed: Seed for initialization, batches and noise

    Returns:
        PoseGanResult: Trained generator and critic plus one history row per generator step
    """
    cfg = cfg or WganTrainConfig()
    poses = np.asarray(poses, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if poses.ndim != 2 or poses.shape[0] == 0:
        raise DatasetError("training needs a nonempty (N, 2J) pose array")
    if labels.shape != (poses.shape[0],):
        raise ShapeError("one label is required per pose")
    counts = np.bincount(labels, minlength=class_count)
    if np.any(counts[:class_count] == 0):
        raise DatasetError(f"classes without samples: {np.flatnonzero(counts == 0).tolist()}")

    rng = np.random.default_rng(seed)
    joint_count = poses.shape[1] // 2
    generator = SinglePoseGenerator.create(rng, cfg.latent_dim, class_count, joint_count, cfg.hidden)
    critic = PoseCritic.create(rng, class_count, joint_count, cfg.hidden)
    g_opt = Trainable(generator.params, cfg.hyper)
    d_opt = Trainable(critic.params, cfg.hyper)
    per_epoch = steps_per_epoch(poses.shape[0], cfg.batch_size)
    history = LossHistory("pose_gan", cfg.log_every)

    for step in range(cfg.steps):
        epoch = step // per_epoch
        for _ in range(cfg.critic_iters):
            idx = sample_batch(rng, poses.shape[0], cfg.batch_size)
            onehot = one_hot_rows(labels[idx], class_count)
            z0 = rng.uniform(-1.0, 1.0, size=(cfg.batch_size, cfg.latent_dim))
            fake = generator.with_params(g_opt.params).sample(z0, onehot)
            record = critic_loss(critic.with_params(d_opt.params), poses[idx], fake, onehot, cfg.gp_weight, rng)
            d_opt.update(record.tape, record.loss, record.bound, epoch)

        fake_labels = rng.integers(0, class_count, size=cfg.batch_size)
        z0 = rng.uniform(-1.0, 1.0, size=(cfg.batch_size, cfg.latent_dim))
        g_record = generator_loss(
            generator.with_params(g_opt.params),
            critic.with_params(d_opt.params),
            z0,
            one_hot_rows(fake_labels, class_count),
        )
        g_opt.update(g_record.tape, g_record.loss, g_record.bound, epoch)
        history.append(step, **record.terms, **g_record.terms)

    logger.info("pose_gan_trained", extra={"record": {"steps": cfg.steps, "seed": seed}})
    return PoseGanResult(
        generator=generator.with_params(g_opt.params),
        critic=critic.with_params(d_opt.params),
        history=history.to_frame(),
    )
