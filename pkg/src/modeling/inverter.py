"""
Prediction and completion as constrained generation.

A latent (z0, z) is searched so that the generated sequence matches the
pinned frames (L1) while staying plausible to the sequence discriminator.
The best result is then blended so pinned frames hold exactly and the
generated temporal gradients are kept everywhere else.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.linalg import solve_banded

from src.exceptions import ConstraintError, ShapeError
from src.models import ClassId, ConstraintSet, PoseSequence
from src.modeling.networks import bind
from src.modeling.pose_gan import SinglePoseGenerator
from src.modeling.seq_gan import SequenceDiscriminator, SequenceGenerator, decode_sequences, gps_forward
from src.numerics import BoundBox, LbfgsbConfig, OptimizerStatus, Tape, Var, backward, lbfgsb_minimize
from src.numerics import ops

logger = logging.getLogger(__name__)


class InversionConfig(BaseModel):
    """
    Settings for latent inversion.

    Attributes:
        alpha: Weight of the discriminator (perceptual) term
        pool_size: Prior samples compared to pick the start point
        restarts: Bounded minimizations run from the start point
        restart_jitter: Gaussian jitter applied to the start of restarts after the first
        z0_bound: Box half-width for the pose latent
        z_bound: Box half-width for the sequence noise
        prob_floor: Discriminator outputs are clamped to [floor, 1 - floor] before the log
        lbfgsb: Optimizer settings
    """
    alpha: float = Field(0.1, ge=0)
    pool_size: int = Field(64, ge=1)
    restarts: int = Field(3, ge=1)
    restart_jitter: float = Field(0.25, ge=0)
    z0_bound: float = Field(1.0, gt=0)
    z_bound: float = Field(3.0, gt=0)
    prob_floor: float = Field(1e-6, gt=0, lt=0.5)
    lbfgsb: LbfgsbConfig = LbfgsbConfig()

    @property
    def logit_limit(self) -> float:
        return float(np.log((1.0 - self.prob_floor) / self.prob_floor))


@dataclass(frozen=True, eq=False)
class InversionModels:
    """The frozen generator stack and discriminator used for inversion, plus the sequence length."""

    g0: SinglePoseGenerator
    generator: SequenceGenerator
    discriminator: SequenceDiscriminator
    length: int

    def __post_init__(self) -> None:
        if self.length < 2:
            raise ShapeError("inversion needs sequences of at least two frames")
        if (self.g0.latent_dim, self.g0.class_count) != (self.generator.latent_dim, self.generator.class_count):
            raise ShapeError("pose and sequence generators disagree on m or C")
        if (self.discriminator.joint_count, self.discriminator.class_count) != (self.g0.joint_count, self.g0.class_count):
            raise ShapeError("discriminator disagrees with the generators on J or C")

    @property
    def latent_dim(self) -> int:
        return self.g0.latent_dim

    @property
    def noise_dim(self) -> int:
        return self.generator.noise_dim

    @property
    def pose_width(self) -> int:
        return 2 * self.g0.joint_count

    @property
    def class_count(self) -> int:
        return self.g0.class_count


@dataclass(frozen=True, eq=False)
class LatentState:
    """Optimization variable: pose latent z0 (m,) and sequence noise z (n,)."""

    z0: np.ndarray
    z: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.z0), np.ravel(self.z)]).astype(np.float64)

    @classmethod
    def from_vector(cls, vector: np.ndarray, latent_dim: int) -> "LatentState":
        vector = np.asarray(vector, dtype=np.float64).ravel()
        return cls(z0=vector[:latent_dim].copy(), z=vector[latent_dim:].copy())


@dataclass
class RestartOutcome:
    index: int
    start_objective: float
    objective: float
    contextual: float
    status: OptimizerStatus
    iterations: int


@dataclass
class CompletionResult:
    """
    Completed sequence with the data needed to judge the inversion.

    Attributes:
        sequence: Blended output; pinned frames equal the constraints exactly
        generated: Raw generator output at the best latent, before blending
        latent: Best latent found
        objective: Objective at the best latent
        initial_objective: Objective at the chosen pool sample
        restarts: One outcome per minimization
        converged: False when no restart converged or improved on its start
    """

    sequence: PoseSequence
    generated: np.ndarray
    latent: LatentState
    objective: float
    initial_objective: float
    restarts: List[RestartOutcome] = field(default_factory=list)
    converged: bool = True


def latent_bounds(models: InversionModels, cfg: InversionConfig) -> BoundBox:
    lower = np.concatenate([np.full(models.latent_dim, -cfg.z0_bound), np.full(models.noise_dim, -cfg.z_bound)])
    return BoundBox(lower, -lower)


def generate_frames(state: LatentState, class_id: ClassId, models: InversionModels) -> np.ndarray:
    """G(z) for one latent, shape (T, 2J)."""
    return gps_forward(state.z, state.z0, class_id, models.generator, models.g0, models.length)


def contextual_l1(frames: np.ndarray, constraints: ConstraintSet) -> float:
    """Sum of absolute differences over pinned frames and every coordinate."""
    frames = np.asarray(frames, dtype=np.float64)
    constraints.check_range(frames.shape[0], frames.shape[1])
    return float(np.abs(frames[list(constraints.indices)] - constraints.poses).sum())


def contextual_loss(state: LatentState, constraints: ConstraintSet, models: InversionModels) -> float:
    return contextual_l1(generate_frames(state, constraints.class_id, models), constraints)


def perceptual_loss(
    state: LatentState, class_id: ClassId, models: InversionModels, cfg: Optional[InversionConfig] = None
) -> float:
    """-log D(G(z)) for the sequence discriminator, clamped."""
    cfg = cfg or InversionConfig()
    value, _ = _record_objective(state.to_vector(), None, class_id, models, cfg, alpha=1.0, with_gradient=False)
    return value


def _record_objective(
    vector: np.ndarray,
    constraints: Optional[ConstraintSet],
    class_id: ClassId,
    models: InversionModels,
    cfg: InversionConfig,
    alpha: float,
    with_gradient: bool = True,
) -> Tuple[float, Optional[np.ndarray]]:
    """Record contextual + alpha * perceptual on one tape, differentiated w.r.t. the latent vector."""
    tape = Tape()
    m, n = models.latent_dim, models.noise_dim
    x = tape.leaf(np.asarray(vector, dtype=np.float64).ravel())
    z0 = ops.reshape(ops.slice_(x, (slice(0, m),)), (1, m))
    z = ops.reshape(ops.slice_(x, (slice(m, m + n),)), (1, n))
    c = tape.constant(class_id.one_hot()[None, :])
    decoded = decode_sequences(
        models.generator,
        bind(tape, models.generator.params, trainable=False),
        models.g0,
        bind(tape, models.g0.params, trainable=False),
        z,
        z0,
        c,
        models.length,
    )
    terms: List[Var] = []
    if constraints is not None:
        for index, pose in zip(constraints.indices, constraints.poses):
            diff = ops.sub(decoded.frames[index], tape.constant(pose[None, :]))
            terms.append(ops.sum_(ops.abs_(diff)))
    if alpha > 0:
        logits = models.discriminator.logits(
            bind(tape, models.discriminator.params, trainable=False), decoded.frames, c
        )
        clipped = ops.clip(logits, -cfg.logit_limit, cfg.logit_limit)
        terms.append(ops.scale(ops.sum_(ops.log_sigmoid(clipped)), -alpha))
    if not terms:
        return 0.0, np.zeros_like(x.value)
    total = terms[0]
    for term in terms[1:]:
        total = ops.add(total, term)
    if not with_gradient:
        return float(total.value), None
    return float(total.value), backward(tape, total, [x])[x]


def objective(
    state: LatentState, constraints: ConstraintSet, models: InversionModels, cfg: Optional[InversionConfig] = None
) -> float:
    """Contextual loss plus alpha times the perceptual loss."""
    cfg = cfg or InversionConfig()
    constraints.check_range(models.length, models.pose_width)
    value, _ = _record_objective(state.to_vector(), constraints, constraints.class_id, models, cfg, cfg.alpha, False)
    return value


def objective_and_gradient(
    vector: np.ndarray, constraints: ConstraintSet, models: InversionModels, cfg: InversionConfig
) -> Tuple[float, np.ndarray]:
    """Objective value and its analytic gradient w.r.t. the flattened latent."""
    return _record_objective(vector, constraints, constraints.class_id, models, cfg, cfg.alpha)


def sample_pool(rng: np.random.Generator, models: InversionModels, cfg: InversionConfig) -> List[LatentState]:
    """Draw candidates from the priors: z0 uniform, z Gaussian clipped to the optimizer box."""
    return [
        LatentState(
            z0=rng.uniform(-cfg.z0_bound, cfg.z0_bound, size=models.latent_dim),
            z=np.clip(rng.normal(size=models.noise_dim), -cfg.z_bound, cfg.z_bound),
        )
        for _ in range(cfg.pool_size)
    ]


def initialize(
    constraints: ConstraintSet,
    models: InversionModels,
    cfg: Optional[InversionConfig] = None,
    seed: int = 0,
    pool: Optional[Sequence[LatentState]] = None,
) -> LatentState:
    """
    Pick the pool sample with the lowest objective.

    Args:
        constraints: Pinned frames
        models: Generator stack and discriminator
        cfg: Inversion settings
        seed: Seed for the pool draw
        pool: Explicit candidates; drawn from the priors when omitted

    Returns:
        LatentState: Best candidate, first on ties
    """
    cfg = cfg or InversionConfig()
    constraints.check_range(models.length, models.pose_width)
    candidates = list(pool) if pool is not None else sample_pool(np.random.default_rng(seed), models, cfg)
    if not candidates:
        raise ValueError("the sample pool is empty")
    values = [objective(state, constraints, models, cfg) for state in candidates]
    best = int(np.argmin(values))
    logger.debug("inversion_initialized", extra={"record": {"pool": len(candidates), "objective": float(values[best])}})
    return candidates[best]


def complete(
    constraints: ConstraintSet,
    models: InversionModels,
    cfg: Optional[InversionConfig] = None,
    seed: int = 0,
    pool: Optional[Sequence[LatentState]] = None,
    class_name: Optional[str] = None,
) -> CompletionResult:
    """
    Fill in a sequence around pinned frames.

    Args:
        constraints: Pinned frames and class
        models: Generator stack and discriminator
        cfg: Inversion settings
        seed: Seed for the pool and restart jitter
        pool: Explicit start candidates
        class_name: Class label stored on the output sequence

    Returns:
        CompletionResult: Blended sequence and optimization record
    """
    cfg = cfg or InversionConfig()
    constraints.check_range(models.length, models.pose_width)
    rng = np.random.default_rng(seed)
    start = initialize(constraints, models, cfg, seed, pool)
    start_value = objective(start, constraints, models, cfg)
    bounds = latent_bounds(models, cfg)

    def evaluate(vector: np.ndarray) -> Tuple[float, np.ndarray]:
        return objective_and_gradient(vector, constraints, models, cfg)

    best_x, best_f = start.to_vector(), start_value
    outcomes: List[RestartOutcome] = []
    for index in range(cfg.restarts):
        x0 = start.to_vector()
        if index > 0:
            x0 = bounds.project(x0 + rng.normal(scale=cfg.restart_jitter, size=x0.shape))
        result = lbfgsb_minimize(evaluate, x0, bounds, cfg.lbfgsb)
        latent = LatentState.from_vector(result.x, models.latent_dim)
        outcome = RestartOutcome(
            index=index,
            start_objective=result.f0,
            objective=result.f,
            contextual=contextual_loss(latent, constraints, models),
            status=result.status,
            iterations=result.iterations,
        )
        outcomes.append(outcome)
        logger.info(
            "inversion_restart",
            extra={
                "record": {
                    "restart": index,
                    "start_objective": outcome.start_objective,
                    "objective": outcome.objective,
                    "contextual": outcome.contextual,
                    "status": outcome.status.value,
                    "iterations": outcome.iterations,
                }
            },
        )
        if result.f < best_f:
            best_x, best_f = result.x, result.f

    converged = any(o.status != OptimizerStatus.ABNORMAL or o.objective < o.start_objective for o in outcomes)
    if not converged:
        logger.warning("inversion_not_converged", extra={"record": {"objective": best_f, "restarts": cfg.restarts}})

    latent = LatentState.from_vector(best_x, models.latent_dim)
    generated = generate_frames(latent, constraints.class_id, models)
    blended = poisson_blend(generated, constraints)
    name = class_name if class_name is not None else f"class_{constraints.class_id.index}"
    return CompletionResult(
        sequence=PoseSequence(blended, name),
        generated=generated,
        latent=latent,
        objective=float(best_f),
        initial_objective=float(start_value),
        restarts=outcomes,
        converged=converged,
    )


def poisson_blend(generated: np.ndarray, constraints: ConstraintSet) -> np.ndarray:
    """
    Pin constrained frames and keep the temporal gradients of ``generated`` elsewhere.

    Each coordinate is solved independently: the correction y = x - G has
    zero second difference on free frames and equals I - G on pinned ones,
    which is a tridiagonal system over the free frames.

    Args:
        generated: Generator output (T, 2J)
        constraints: Pinned frames

    Returns:
        np.ndarray: Blended frames (T, 2J); pinned rows equal the constraints exactly
    """
    generated = np.asarray(generated, dtype=np.float64)
    length, width = generated.shape
    constraints.check_range(length, width)
    pinned = np.zeros(length, dtype=bool)
    pinned[list(constraints.indices)] = True
    correction = np.zeros_like(generated)
    correction[list(constraints.indices)] = constraints.poses - generated[list(constraints.indices)]

    free = np.flatnonzero(~pinned)
    if free.size:
        degree = np.where((free == 0) | (free == length - 1), 1.0, 2.0)
        banded = np.zeros((3, free.size))
        banded[1] = degree
        adjacent = np.diff(free) == 1
        banded[0, 1:] = np.where(adjacent, -1.0, 0.0)
        banded[2, :-1] = np.where(adjacent, -1.0, 0.0)
        rhs = np.zeros((free.size, width))
        for k, t in enumerate(free):
            for neighbor in (t - 1, t + 1):
                if 0 <= neighbor < length and pinned[neighbor]:
                    rhs[k] += correction[neighbor]
        correction[free] = solve_banded((1, 1), banded, rhs)

    blended = generated + correction
    blended[list(constraints.indices)] = constraints.poses
    return blended


def predict(
    prefix: np.ndarray,
    class_id: ClassId,
    models: InversionModels,
    cfg: Optional[InversionConfig] = None,
    seed: int = 0,
    class_name: Optional[str] = None,
) -> CompletionResult:
    """
    Continue a sequence from its first frames.

    Args:
        prefix: First t frames (t, 2J), 1 <= t < T
        class_id: Conditioning class
        models: Generator stack and discriminator
        cfg: Inversion settings
        seed: Seed for the pool and restarts
        class_name: Class label stored on the output sequence

    Returns:
        CompletionResult: Completed sequence whose first t frames equal the prefix
    """
    prefix = np.atleast_2d(np.asarray(prefix, dtype=np.float64))
    count = prefix.shape[0]
    if count >= models.length:
        raise ConstraintError(f"prefix of {count} frames leaves nothing to predict for T={models.length}")
    constraints = ConstraintSet.from_frames(prefix, range(count), class_id)
    return complete(constraints, models, cfg, seed, class_name=class_name)
