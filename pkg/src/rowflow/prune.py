"""Stochastic activation-gradient pruning with threshold prediction.

Values below the threshold ``tau`` in magnitude are replaced by ``0`` or
``sign(g) * tau`` at random so that every component keeps its expectation.
The threshold for a batch is not known until the batch has been seen, so
each CONV layer prunes with the mean of the last ``fifo_depth`` determined
thresholds and pushes a fresh one at the end of every batch.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .normal import norm_ppf
from .rng import Rng
from .tensor import ConfigurationError

_SQRT_PI_OVER_2 = math.sqrt(math.pi / 2.0)  # E|X| = sigma * sqrt(2/pi)


class UndefinedInputError(ValueError):
    pass


@dataclass(frozen=True)
class PruneConfig:
    p: float
    fifo_depth: int = 4

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ConfigurationError(f"target sparsity p={self.p} outside [0, 1)")
        if self.fifo_depth < 1:
            raise ConfigurationError("fifo_depth must be >= 1")

    def check_batches(self, n_batches: int):
        if self.fifo_depth > n_batches / 10:
            warnings.warn(
                f"fifo_depth={self.fifo_depth} is not much smaller than the "
                f"{n_batches} batches of the run", stacklevel=2)


def estimate_sigma(abs_sum: float, n: int) -> float:
    """Standard deviation of zero-mean normal data from its mean magnitude."""
    if n <= 0:
        raise UndefinedInputError("cannot estimate sigma from zero samples")
    return _SQRT_PI_OVER_2 * abs_sum / n


def determine_threshold(sigma_hat: float, p: float) -> float:
    """Nonnegative tau with P(|X| < tau) = p for X ~ N(0, sigma_hat**2)."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"target sparsity p={p} outside [0, 1)")
    if sigma_hat < 0:
        raise ConfigurationError("sigma_hat must be nonnegative")
    return norm_ppf((1.0 + p) / 2.0) * sigma_hat


def stochastic_prune(g, tau: float, rng: Rng) -> np.ndarray:
    """Prune ``g`` against ``tau``.  Consumes exactly one uniform per element."""
    g = np.asarray(g, dtype=np.float64)
    r = rng.uniform(g.size).reshape(g.shape)
    if tau <= 0:
        return g.copy()
    mag = np.abs(g)
    small = mag < tau
    survive = mag > tau * r
    out = np.where(small, np.where(survive, np.copysign(tau, g), 0.0), g)
    return out + 0.0


def survival_density(tau: float, sigma: float = 1.0) -> float:
    """Expected fraction of nonzeros after pruning N(0, sigma^2) data at tau."""
    if tau <= 0:
        return 1.0
    t = tau / sigma
    phi0 = 1.0 / math.sqrt(2.0 * math.pi)
    phi_t = phi0 * math.exp(-0.5 * t * t)
    p_small = math.erf(t / math.sqrt(2.0))
    return 1.0 - p_small + 2.0 * (phi0 - phi_t) / t


@dataclass
class ThresholdPredictor:
    """Per-layer FIFO of determined thresholds plus the running |g| sum."""

    fifo_depth: int
    fifo: deque = field(default_factory=deque)
    abs_sum: float = 0.0
    count: int = 0

    @property
    def ready(self) -> bool:
        return len(self.fifo) >= self.fifo_depth

    @property
    def predicted(self) -> float | None:
        if not self.ready:
            return None
        # offsets from the oldest entry keep a constant FIFO's mean exact
        base = self.fifo[0]
        return base + math.fsum(t - base for t in self.fifo) / len(self.fifo)

    def prune(self, g, rng: Rng) -> np.ndarray:
        """Stream one chunk of a batch: accumulate magnitudes, prune if warm."""
        g = np.asarray(g, dtype=np.float64)
        self.abs_sum += float(np.abs(g).sum())
        self.count += g.size
        tau = self.predicted
        if tau is None:
            return g.copy()
        return stochastic_prune(g, tau, rng)

    def end_batch(self, p: float) -> float:
        tau = determine_threshold(estimate_sigma(self.abs_sum, self.count), p) if self.count else 0.0
        self.fifo.append(tau)
        while len(self.fifo) > self.fifo_depth:
            self.fifo.popleft()
        self.abs_sum = 0.0
        self.count = 0
        return tau


def predictor_step(pred: ThresholdPredictor, batch_gradients, p: float, rng: Rng) -> list[np.ndarray]:
    """Prune every chunk of one batch, then push that batch's threshold."""
    out = [pred.prune(g, rng) for g in batch_gradients]
    pred.end_batch(p)
    return out
