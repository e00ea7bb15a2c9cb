"""
Parameter updates and gradient checking
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from policy.engine import PolicyParams

logger = logging.getLogger(__name__)


class NonFiniteGradientError(ArithmeticError):
    """Gradient holds NaN or infinite entries"""

    def __init__(self, count: int, first_index: Tuple[int, ...], shape: Tuple[int, ...]):
        self.count = count
        self.first_index = first_index
        self.shape = shape
        super().__init__(
            f"Gradient of shape {shape} has {count} non-finite entries (first at {first_index})"
        )


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    max_grad_norm: float = 5.0
    beta: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"Learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"Momentum must lie in [0, 1), got {self.momentum}")
        if self.max_grad_norm <= 0:
            raise ValueError(f"Gradient-norm cap must be positive, got {self.max_grad_norm}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")


@dataclass
class MomentumState:
    velocity: Optional[np.ndarray] = None


def clip_by_norm(grad: np.ndarray, max_norm: float) -> Tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


def apply_update(
    params: PolicyParams,
    grad: np.ndarray,
    cfg: OptimConfig,
    state: Optional[MomentumState] = None,
) -> PolicyParams:
    """
    Momentum SGD step on the live policy (in place)

    The gradient is masked by the frozen mask, clipped to max_grad_norm and fed
    through the momentum buffer; frozen entries keep their exact bits.

    Raises:
        NonFiniteGradientError: gradient holds NaN/inf
    """
    if params.read_only:
        raise ValueError("Cannot update a read-only snapshot")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.weights.shape:
        raise ValueError(f"Gradient shape {grad.shape} does not match weights {params.weights.shape}")

    bad = ~np.isfinite(grad)
    if bad.any():
        first = tuple(int(i) for i in np.argwhere(bad)[0])
        logger.error(f"Non-finite gradient at v{params.version}: {int(bad.sum())} entries, first at {first}")
        raise NonFiniteGradientError(int(bad.sum()), first, grad.shape)

    trainable = ~params.frozen_mask
    grad = np.where(trainable, grad, 0.0)
    grad, norm = clip_by_norm(grad, cfg.max_grad_norm)

    state = state if state is not None else MomentumState()
    if state.velocity is None or state.velocity.shape != grad.shape:
        state.velocity = np.zeros_like(grad)
    state.velocity = cfg.momentum * state.velocity + grad

    params.weights[trainable] -= cfg.learning_rate * state.velocity[trainable]
    params.version += 1
    logger.debug(f"Applied update v{params.version} (grad norm {norm:.4f})")
    return params


def grad_check(
    loss_fn: Callable[[PolicyParams], Tuple[float, np.ndarray]],
    params: PolicyParams,
    h: float = 1e-5,
    n_coords: int = 200,
    seed: int = 0,
    floor: float = 1e-3,
) -> float:
    """
    Compare the analytic gradient with central differences

    Args:
        loss_fn: params -> (loss, grad)
        params: Evaluation point (left unchanged)
        h: Finite-difference step
        n_coords: Coordinates sampled without replacement (all when fewer exist)
        seed: Coordinate sampling seed
        floor: Denominator floor of the relative error

    Returns:
        max |analytic - numeric| / max(|analytic|, |numeric|, floor)
    """
    if h <= 0:
        raise ValueError(f"Step h must be positive, got {h}")
    _, analytic = loss_fn(params)
    analytic = np.asarray(analytic, dtype=np.float64)

    probe = params.copy()
    size = probe.weights.size
    rng = np.random.default_rng(seed)
    coords = rng.choice(size, size=min(n_coords, size), replace=False)

    worst = 0.0
    for flat in coords:
        index = np.unravel_index(int(flat), probe.weights.shape)
        original = probe.weights[index]
        probe.weights[index] = original + h
        loss_plus, _ = loss_fn(probe)
        probe.weights[index] = original - h
        loss_minus, _ = loss_fn(probe)
        probe.weights[index] = original

        numeric = (loss_plus - loss_minus) / (2.0 * h)
        exact = analytic[index]
        worst = max(worst, abs(exact - numeric) / max(abs(exact), abs(numeric), floor))
    return worst
