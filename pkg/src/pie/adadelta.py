"""ADADELTA stepping with a multiplicative step size and scheduled decay.

The classic update is scaled by an explicit ``step_size`` factor (the plain
method has none) which decays by ``decay_factor`` every ``decay_every``
steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .types import DTYPE, ConfigurationError


@dataclass
class Schedule:
    """Iteration counts and step sizes of the two-stage embedding."""

    iters_w: int = 2000
    iters_wplus: int = 1000
    step_size_w: float = 50.0
    step_size_wplus: float = 10.0
    decay_factor: float = 0.1
    decay_every: int = 2000
    rho: float = 0.95
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.iters_w < 0 or self.iters_wplus < 0:
            raise ConfigurationError("iteration counts must be non-negative")
        if min(self.step_size_w, self.step_size_wplus, self.decay_factor) <= 0:
            raise ConfigurationError("step sizes and decay factor must be positive")
        if self.decay_every <= 0:
            raise ConfigurationError("decay_every must be positive")

    @classmethod
    def paper_scale(cls) -> "Schedule":
        return cls()

    @classmethod
    def desk(cls) -> "Schedule":
        """Reference schedule divided by 10 so the suite runs in minutes."""
        return cls(iters_w=200, iters_wplus=100, step_size_w=5.0,
                   step_size_wplus=1.0, decay_factor=0.1, decay_every=200)

    @property
    def total_iterations(self) -> int:
        return self.iters_w + self.iters_wplus


@dataclass
class AdadeltaState:
    accum_grad_sq: torch.Tensor
    accum_delta_sq: torch.Tensor
    rho: float = 0.95
    epsilon: float = 1e-6
    step_size: float = 1.0
    step_count: int = 0
    decay_factor: float = 1.0
    decay_every: int = 10 ** 9

    @classmethod
    def fresh(cls, shape, step_size: float, rho: float = 0.95, epsilon: float = 1e-6,
              decay_factor: float = 1.0, decay_every: int = 10 ** 9) -> "AdadeltaState":
        if step_size <= 0:
            raise ConfigurationError("step size must be positive")
        return cls(
            accum_grad_sq=torch.zeros(shape, dtype=DTYPE),
            accum_delta_sq=torch.zeros(shape, dtype=DTYPE),
            rho=rho,
            epsilon=epsilon,
            step_size=step_size,
            decay_factor=decay_factor,
            decay_every=decay_every,
        )


def adadelta_step(state: AdadeltaState, grad: torch.Tensor) -> torch.Tensor:
    """Advance ``state`` by one gradient and return the parameter delta.

    E[g2] <- rho E[g2] + (1-rho) g2
    delta  = -step_size * sqrt(E[d2]+eps) / sqrt(E[g2]+eps) * g
    E[d2] <- rho E[d2] + (1-rho) delta2
    """
    if grad.shape != state.accum_grad_sq.shape:
        raise ConfigurationError("gradient shape does not match optimizer state")
    rho = state.rho
    state.accum_grad_sq = rho * state.accum_grad_sq + (1.0 - rho) * grad * grad
    delta = (
        -state.step_size
        * torch.sqrt(state.accum_delta_sq + state.epsilon)
        / torch.sqrt(state.accum_grad_sq + state.epsilon)
        * grad
    )
    state.accum_delta_sq = rho * state.accum_delta_sq + (1.0 - rho) * delta * delta
    state.step_count += 1
    if state.step_count % state.decay_every == 0:
        state.step_size *= state.decay_factor
    return delta
