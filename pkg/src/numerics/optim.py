"""
Optimizers: functional Adam for training and bound-constrained L-BFGS-B
for latent inversion.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.optimize import minimize

from src.exceptions import InfeasibleStartError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]
ObjectiveFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]

# Stand-in value for points where the objective blows up; never accepted by the line search.
_REJECT_VALUE = 1e30


class AdamHyper(BaseModel):
    """
    Adam hyper-parameters.

    Attributes:
        lr: Base learning rate
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator guard
        decay_factor: Multiplier applied to lr at every decay boundary
        decay_epoch: Epochs between decays (0 disables decay)
    """

    lr: float = Field(0.001, gt=0)
    beta1: float = Field(0.5, ge=0, lt=1)
    beta2: float = Field(0.9, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    decay_factor: float = Field(1.0, gt=0, le=1)
    decay_epoch: int = Field(0, ge=0)

    def lr_at(self, epoch: int) -> float:
        """Learning rate after ``epoch // decay_epoch`` decays."""
        if self.decay_epoch <= 0:
            return self.lr
        return self.lr * self.decay_factor ** (epoch // self.decay_epoch)


@dataclass
class AdamState:
    """Per-parameter moment estimates and the shared step counter."""

    hyper: AdamHyper
    first_moment: Params
    second_moment: Params
    step_count: int = 0

    @classmethod
    def create(cls, params: Mapping[str, np.ndarray], hyper: AdamHyper) -> "AdamState":
        """
        Zero-initialized state matching ``params``.

        Args:
            params: Parameter arrays by name
            hyper: Hyper-parameters

        Returns:
            AdamState: Fresh state with step_count 0
        """
        return cls(
            hyper=hyper,
            first_moment={name: np.zeros_like(value) for name, value in params.items()},
            second_moment={name: np.zeros_like(value) for name, value in params.items()},
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    epoch: int = 0,
) -> Tuple[Params, AdamState]:
    """
    One bias-corrected Adam update.

    Args:
        params: Current parameters
        grads: Gradients, same names and shapes
        state: Optimizer state
        epoch: Epoch index, used for the step-wise learning-rate decay

    Returns:
        Tuple[Params, AdamState]: New parameters and new state (inputs are not modified)
    """
    if set(params) != set(grads) or set(params) != set(state.first_moment):
        raise ShapeError("params, grads and optimizer state name different tensors")
    hyper = state.hyper
    step = state.step_count + 1
    lr = hyper.lr_at(epoch)
    new_params: Params = {}
    first: Params = {}
    second: Params = {}
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != value.shape or state.first_moment[name].shape != value.shape:
            raise ShapeError(f"shape mismatch for '{name}': param {value.shape}, grad {grad.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for '{name}'")
        m = hyper.beta1 * state.first_moment[name] + (1.0 - hyper.beta1) * grad
        v = hyper.beta2 * state.second_moment[name] + (1.0 - hyper.beta2) * grad * grad
        m_hat = m / (1.0 - hyper.beta1**step)
        v_hat = v / (1.0 - hyper.beta2**step)
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
        first[name] = m
        second[name] = v
    return new_params, AdamState(hyper=hyper, first_moment=first, second_moment=second, step_count=step)


@dataclass(frozen=True)
class BoundBox:
    """Per-coordinate box constraints; infinities allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.asarray(self.lower, dtype=np.float64).ravel()
        upper = np.asarray(self.upper, dtype=np.float64).ravel()
        if lower.shape != upper.shape:
            raise ShapeError("lower and upper bounds differ in length")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def uniform(cls, size: int, lo: float, hi: float) -> "BoundBox":
        return cls(np.full(size, lo), np.full(size, hi))

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return x.shape == self.lower.shape and bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def as_scipy(self) -> List[Tuple[Optional[float], Optional[float]]]:
        return [
            (None if np.isinf(lo) else float(lo), None if np.isinf(hi) else float(hi))
            for lo, hi in zip(self.lower, self.upper)
        ]


class LbfgsbConfig(BaseModel):
    """L-BFGS-B settings: correction-pair memory, iteration cap and tolerances."""

    memory: int = Field(10, ge=1)
    max_iters: int = Field(200, ge=1)
    grad_tol: float = Field(1e-5, gt=0)
    ftol: float = Field(1e-15, ge=0)


class OptimizerStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    ABNORMAL = "abnormal"


@dataclass
class LbfgsbResult:
    """Outcome of one bounded minimization."""

    x: np.ndarray
    f: float
    f0: float
    status: OptimizerStatus
    iterations: int
    evaluations: int
    message: str
    history: List[float] = field(default_factory=list)


def lbfgsb_minimize(
    objective: ObjectiveFn,
    x0: np.ndarray,
    bounds: BoundBox,
    config: Optional[LbfgsbConfig] = None,
) -> LbfgsbResult:
    """
    Minimize a smooth objective inside a box.

    Args:
        objective: Returns (value, gradient) at a point
        x0: Feasible start point
        bounds: Box constraints
        config: Memory, iteration cap and tolerances

    Returns:
        LbfgsbResult: Best point found, never worse than ``x0``
    """
    config = config or LbfgsbConfig()
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if not bounds.contains(x0):
        raise InfeasibleStartError("start point lies outside the bounds")
    f0, g0 = objective(x0.copy())
    if not np.isfinite(f0) or not np.all(np.isfinite(g0)):
        raise NonFiniteError("objective is not finite at the start point")

    seen: Dict[bytes, float] = {x0.tobytes(): float(f0)}
    history: List[float] = [float(f0)]

    def evaluate(x: np.ndarray) -> Tuple[float, np.ndarray]:
        point = bounds.project(x)
        try:
            value, grad = objective(point)
        except (NonFiniteError, FloatingPointError):
            value, grad = np.nan, None
        if not np.isfinite(value) or grad is None or not np.all(np.isfinite(grad)):
            logger.warning("objective not finite during line search", extra={"record": {"x_norm": float(np.linalg.norm(point))}})
            return _REJECT_VALUE, np.zeros_like(point)
        seen[point.tobytes()] = float(value)
        return float(value), np.asarray(grad, dtype=np.float64)

    def accepted(xk: np.ndarray) -> None:
        value = seen.get(bounds.project(xk).tobytes())
        if value is None:
            value, _ = evaluate(xk)
        history.append(value)

    result = minimize(
        evaluate,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds.as_scipy(),
        callback=accepted,
        options={
            "maxcor": config.memory,
            "maxiter": config.max_iters,
            "gtol": config.grad_tol,
            "ftol": config.ftol,
        },
    )
    if result.status == 0:
        status = OptimizerStatus.CONVERGED
    elif result.status == 1:
        status = OptimizerStatus.MAX_ITERS
    else:
        status = OptimizerStatus.ABNORMAL

    x_best = bounds.project(np.asarray(result.x, dtype=np.float64))
    f_best = float(result.fun)
    if not f_best <= f0:
        x_best, f_best = x0, float(f0)
    return LbfgsbResult(
        x=x_best,
        f=f_best,
        f0=float(f0),
        status=status,
        iterations=int(result.nit),
        evaluations=int(result.nfev),
        message=str(result.message),
        history=history,
    )
