"""Adaptive random-walk Metropolis proposals (Haario-style)."""

import logging
from typing import Any, Dict

import numpy as np

logger = logging.getLogger(__name__)


class AdaptiveProposal:
    """Gaussian random-walk proposal whose covariance tracks past samples.

    During the first ``adapt_after`` updates the proposal is spherical with
    variance ``initial_var``; afterwards it is
    (scale^2 / dim) * (running covariance + jitter * I).
    """

    def __init__(
        self,
        dim: int,
        initial_var: float = 0.01,
        scale: float = 2.38,
        jitter: float = 1e-6,
        adapt_after: int = 1000,
    ):
        self.dim = dim
        self.initial_var = initial_var
        self.scale_factor = scale ** 2 / dim if dim else 0.0
        self.jitter = jitter
        self.adapt_after = adapt_after
        self.n = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))
        self.accepted = 0
        self.proposed = 0

    @property
    def adapting(self) -> bool:
        return self.n >= self.adapt_after and self.n >= 2

    def sample_covariance(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros((self.dim, self.dim))
        return self._m2 / (self.n - 1)

    def covariance(self) -> np.ndarray:
        """Proposal covariance in force for the next proposal."""
        if not self.adapting:
            return self.initial_var * np.eye(self.dim)
        covariance = self.sample_covariance() + self.jitter * np.eye(self.dim)
        return self.scale_factor * covariance

    def propose(self, current: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        chol = np.linalg.cholesky(self.covariance())
        self.proposed += 1
        return current + chol @ rng.standard_normal(self.dim)

    def record(self, accepted: bool) -> None:
        self.accepted += int(accepted)

    def update(self, sample: np.ndarray) -> None:
        """Add the post-step value to the running moments (Welford)."""
        sample = np.asarray(sample, dtype=float)
        self.n += 1
        delta = sample - self.mean
        self.mean = self.mean + delta / self.n
        self._m2 = self._m2 + np.outer(delta, sample - self.mean)

    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    def get_stats(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "updates": self.n,
            "adapting": self.adapting,
            "acceptance_rate": self.acceptance_rate(),
        }
