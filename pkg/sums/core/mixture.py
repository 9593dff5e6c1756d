"""Finite mixture with a random number of components and Gamma weights.

Components are labelled so that the K_N allocated ones come first, in order
of the smallest subject index they hold; non-allocated components follow.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp

from ..exceptions import NumericalError, ValidationError
from .gwishart import normal_precision_logpdf, sample_mvn_precision

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixtureHyper:
    """Lambda: mean of the shifted Poisson on M - 1; gamma_s: Gamma shape of weights."""
    Lambda: float
    gamma_s: float

    def __post_init__(self) -> None:
        if self.Lambda <= 0 or self.gamma_s <= 0:
            raise ValidationError("Lambda and gamma_s must be positive")


@dataclass
class MixtureState:
    """Weights S, allocations c (zero-based), unique values phi_star and latent u."""
    S: np.ndarray
    c: np.ndarray
    phi_star: np.ndarray
    u: float = 1.0

    def __post_init__(self) -> None:
        self.S = np.asarray(self.S, dtype=float)
        self.c = np.asarray(self.c, dtype=int)
        self.phi_star = np.atleast_2d(np.asarray(self.phi_star, dtype=float))
        if self.phi_star.shape[0] != self.S.size:
            raise ValidationError("one weight per unique value is required")
        if np.any(self.c < 0) or np.any(self.c >= self.S.size):
            raise ValidationError("allocation outside 1..M")

    @property
    def M(self) -> int:
        return int(self.S.size)

    @property
    def N(self) -> int:
        return int(self.c.size)

    @property
    def K_N(self) -> int:
        return int(np.unique(self.c).size)

    def counts(self) -> np.ndarray:
        """Cluster sizes n_m for every component (zeros for empty ones)."""
        return np.bincount(self.c, minlength=self.M)

    def copy(self) -> "MixtureState":
        return MixtureState(
            S=self.S.copy(), c=self.c.copy(), phi_star=self.phi_star.copy(), u=self.u
        )


def canonical_labels(c: Sequence[int]) -> np.ndarray:
    """Relabel a partition by first appearance (0, 1, ...)."""
    c = np.asarray(c)
    mapping: Dict[int, int] = {}
    out = np.empty(c.size, dtype=int)
    for i, label in enumerate(c.tolist()):
        if label not in mapping:
            mapping[label] = len(mapping)
        out[i] = mapping[label]
    return out


def compact(state: MixtureState) -> MixtureState:
    """Reorder components so allocated ones come first in first-appearance order."""
    order = list(dict.fromkeys(state.c.tolist()))
    empty = [m for m in range(state.M) if m not in set(order)]
    permutation = np.array(order + empty, dtype=int)
    relabel = np.empty(state.M, dtype=int)
    relabel[permutation] = np.arange(state.M)
    state.S = state.S[permutation]
    state.phi_star = state.phi_star[permutation]
    state.c = relabel[state.c]
    return state


def update_u(state: MixtureState, rng: np.random.Generator) -> float:
    """u | S ~ Gamma(shape N, rate sum(S))."""
    total = float(np.sum(state.S))
    if total <= 0:
        raise NumericalError("sum of component weights must be positive")
    state.u = float(rng.gamma(state.N, 1.0 / total))
    return state.u


def update_allocated_weights(
    state: MixtureState, hyper: MixtureHyper, rng: np.random.Generator
) -> np.ndarray:
    """S_m ~ Gamma(gamma_s + n_m, rate 1 + u) for the allocated components."""
    k = state.K_N
    sizes = state.counts()[:k]
    state.S[:k] = rng.gamma(hyper.gamma_s + sizes, 1.0 / (1.0 + state.u))
    return state.S[:k]


def laplace_gamma(u: float, gamma_s: float) -> float:
    """E[exp(-u S)] for S ~ Gamma(gamma_s, 1)."""
    return float((1.0 + u) ** (-gamma_s))


def nonallocated_pmf(m: np.ndarray, k: int, x: float) -> np.ndarray:
    """p(M_na = m) proportional to (k + m) x^m / m!, normalised by e^x (k + x)."""
    m = np.asarray(m, dtype=float)
    log_p = np.log(k + m) + m * np.log(x) - gammaln(m + 1) - x - np.log(k + x)
    return np.exp(log_p)


def sample_n_nonallocated(k: int, x: float, rng: np.random.Generator) -> int:
    """Draw M_na as a two-part mixture of Poisson(x) and 1 + Poisson(x)."""
    if x <= 0:
        return 0
    if rng.random() < k / (k + x):
        return int(rng.poisson(x))
    return 1 + int(rng.poisson(x))


def update_nonallocated(
    state: MixtureState,
    hyper: MixtureHyper,
    mu: np.ndarray,
    omega: np.ndarray,
    rng: np.random.Generator,
) -> int:
    """Replace the empty components with a fresh draw.

    New components get S ~ Gamma(gamma_s, rate 1 + u) and phi* from the
    current base measure N(mu, omega^-1).

    Returns:
        number of non-allocated components
    """
    k = state.K_N
    x = hyper.Lambda * laplace_gamma(state.u, hyper.gamma_s)
    n_new = sample_n_nonallocated(k, x, rng)
    state.S = state.S[:k]
    state.phi_star = state.phi_star[:k]
    if n_new:
        weights = rng.gamma(hyper.gamma_s, 1.0 / (1.0 + state.u), size=n_new)
        values = sample_mvn_precision(mu, omega, rng, size=n_new)
        state.S = np.concatenate([state.S, weights])
        state.phi_star = np.vstack([state.phi_star, values])
    return n_new


def allocation_probabilities(S: np.ndarray, loglik: np.ndarray) -> np.ndarray:
    """(N, M) probabilities proportional to S_m exp(L[i, m]).

    Raises:
        NumericalError: some subject has -inf log-likelihood under every component
    """
    with np.errstate(divide="ignore"):
        log_w = np.log(S)[None, :] + loglik
    norm = logsumexp(log_w, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        bad = np.flatnonzero(~np.isfinite(norm.ravel()))
        raise NumericalError(
            f"subjects {(bad + 1).tolist()} have zero likelihood under every component"
        )
    return np.exp(log_w - norm)


def update_allocations(
    state: MixtureState, loglik: np.ndarray, rng: np.random.Generator
) -> MixtureState:
    """Resample every c_i from its full conditional, then compact labels."""
    probs = allocation_probabilities(state.S, loglik)
    cdf = np.cumsum(probs, axis=1)
    draws = rng.random(state.N)[:, None]
    state.c = np.minimum((cdf < draws * cdf[:, -1:]).sum(axis=1), state.M - 1)
    return compact(state)


def update_phi_star(
    state: MixtureState,
    cluster_loglik: Callable[[np.ndarray], np.ndarray],
    mu: np.ndarray,
    omega: np.ndarray,
    proposal_var: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Random-walk Metropolis step for each allocated unique value.

    Args:
        state: current mixture state (modified in place)
        cluster_loglik: maps an (M, D) array of unique values to the (K_N,)
            log-likelihood of the subjects in each allocated cluster; -inf
            marks unusable rates
        mu: base-measure mean
        omega: base-measure precision
        proposal_var: diagonal variance of the random walk
        rng: random generator

    Returns:
        boolean acceptance flags for the allocated components
    """
    k = state.K_N
    current = state.phi_star
    proposal = current.copy()
    proposal[:k] += np.sqrt(proposal_var) * rng.standard_normal((k, current.shape[1]))
    log_ratio = (cluster_loglik(proposal) - cluster_loglik(current)
                 + normal_precision_logpdf(proposal[:k], mu, omega)
                 - normal_precision_logpdf(current[:k], mu, omega))
    log_ratio = np.nan_to_num(log_ratio, nan=-np.inf)
    accept = np.log(rng.random(k)) < log_ratio
    state.phi_star[:k][accept] = proposal[:k][accept]
    return accept


def partition_weight_log_v(n: int, k: int, hyper: MixtureHyper) -> float:
    """log V(n, k) of the exchangeable partition law.

    V(n, k) = int u^(n-1)/Gamma(n) (1+u)^-(n + k gamma_s) e^-Lambda Lambda^(k-1)
    e^x (k + x) du with x = Lambda (1+u)^-gamma_s.
    """
    lam, gam = hyper.Lambda, hyper.gamma_s

    def log_integrand(t: float) -> float:
        # integrand in t = log u, including the Jacobian u
        log1pu = float(np.logaddexp(0.0, t))
        x = lam * np.exp(-gam * log1pu)
        return (n * t - gammaln(n) - (n + k * gam) * log1pu
                - lam + (k - 1) * np.log(lam) + x + np.log(k + x))

    # The right tail decays only like exp(-k gamma_s t), so both tails go to infinity.
    grid = np.linspace(-30.0, 30.0, 2001)
    shift = max(log_integrand(float(t)) for t in grid)

    def integrand(t: float) -> float:
        return float(np.exp(log_integrand(t) - shift))

    breaks = [float(g) for g in grid[200:2000:200]]
    body, _ = integrate.quad(integrand, -30.0, 30.0, limit=400, points=breaks)
    left, _ = integrate.quad(integrand, -np.inf, -30.0, limit=200)
    right, _ = integrate.quad(integrand, 30.0, np.inf, limit=200)
    return float(np.log(body + left + right) + shift)


def log_partition_prior(sizes: Sequence[int], hyper: MixtureHyper) -> float:
    """Log-probability of a specific partition with the given block sizes."""
    sizes = np.asarray(sizes, dtype=int)
    n, k = int(sizes.sum()), int(sizes.size)
    log_blocks = np.sum(gammaln(hyper.gamma_s + sizes) - gammaln(hyper.gamma_s))
    return partition_weight_log_v(n, k, hyper) + float(log_blocks)
