"""Variable-rate control through a vector of learned step gains.

Target ``i`` quantizes with step ``g_i * q_s`` and is trained with its own
Lagrange multiplier ``lambda_i``.  Index 0 is the highest-rate target, so the
multipliers are strictly increasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import ForwardOutput
from .exceptions import BadSpec, IndexOutOfRange


@dataclass
class GainVector:
    log_gains: np.ndarray
    lambdas: np.ndarray

    def __post_init__(self):
        self.log_gains = np.asarray(self.log_gains, dtype=np.float64).ravel()
        self.lambdas = np.asarray(self.lambdas, dtype=np.float64).ravel()
        if self.log_gains.size < 1 or self.log_gains.size != self.lambdas.size:
            raise BadSpec("need one gain per lambda and at least one target")
        if np.any(self.lambdas < 0):
            raise BadSpec("lambdas must be non-negative")
        if np.any(np.diff(self.lambdas) <= 0):
            raise BadSpec("lambdas must be strictly increasing")

    @classmethod
    def unit(cls, lambdas) -> "GainVector":
        """Gains initialized to 1 for every target."""
        lambdas = np.atleast_1d(np.asarray(lambdas, dtype=np.float64))
        return cls(np.zeros(lambdas.size), lambdas)

    @property
    def size(self) -> int:
        return self.log_gains.size

    @property
    def gains(self) -> np.ndarray:
        return np.exp(self.log_gains)

    def gain(self, target: int) -> float:
        return float(np.exp(self.log_gains[_check_target(target, self.size)]))

    def copy(self) -> "GainVector":
        return GainVector(self.log_gains.copy(), self.lambdas.copy())


def _check_target(target, size) -> int:
    target = int(target)
    if not 0 <= target < size:
        raise IndexOutOfRange(f"target {target} outside [0, {size})")
    return target


def scale_step(q_s: float, gains: GainVector, target: int) -> float:
    return gains.gain(target) * q_s


def sample_target(rng: np.random.Generator, M: int) -> int:
    """Uniformly drawn target index in ``[0, M)``."""
    if M < 1:
        raise BadSpec("M must be >= 1")
    return int(rng.integers(M))


def multirate_loss(out: ForwardOutput, target: int, gains: GainVector) -> float:
    """``mse + lambda_target * mean(rate_bits)`` for a forward pass run at ``g_target``."""
    lam = gains.lambdas[_check_target(target, gains.size)]
    return out.mse + float(lam) * float(np.mean(out.rate_bits))


def log_gain_grad(d_step_scale: float, gains: GainVector, target: int) -> np.ndarray:
    """Gradient on ``log_gains`` given the loss gradient on the step multiplier."""
    grad = np.zeros(gains.size)
    grad[target] = d_step_scale * gains.gain(target)
    return grad
