"""Dense-matrix mathematics for continuous-time Markov chains.

Off-diagonal rates are always laid out row by row, skipping the diagonal:
(1,2), (1,3), ..., (2,1), (2,3), ... The same layout is shared by the rate
regression, the graphs and every output file.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple

import numpy as np
from scipy.linalg import expm

from ..exceptions import NumericalError, ValidationError


@lru_cache(maxsize=None)
def offdiag_pairs(d: int) -> Tuple[Tuple[int, int], ...]:
    """Zero-based (r, s) pairs in the shared row-major off-diagonal layout."""
    return tuple((r, s) for r in range(d) for s in range(d) if r != s)


@lru_cache(maxsize=None)
def _layout_indices(d: int) -> Tuple[np.ndarray, np.ndarray]:
    pairs = offdiag_pairs(d)
    rows = np.array([r for r, _ in pairs], dtype=int)
    cols = np.array([s for _, s in pairs], dtype=int)
    return rows, cols


def n_rates(d: int) -> int:
    """Number of off-diagonal rates of a d-state chain."""
    return d * (d - 1)


@dataclass(frozen=True)
class Generator:
    """Intensity matrix of an irreducible chain with strictly positive rates."""
    d: int
    rates: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Dense Q with the diagonal completed as minus the row sums."""
        return generator_matrices(self.rates[None, :], self.d)[0]


def build_generator(rates: "np.ndarray | List[float]", d: int) -> Generator:
    """Validate a rate vector and wrap it as a :class:`Generator`.

    Args:
        rates: off-diagonal rates in the shared row-major layout
        d: number of states (>= 2)

    Raises:
        ValidationError: wrong length, or a rate that is not finite and positive
    """
    if d < 2:
        raise ValidationError(f"a generator needs at least 2 states, got d={d}")
    values = np.asarray(rates, dtype=float).ravel()
    if values.size != n_rates(d):
        raise ValidationError(
            f"expected {n_rates(d)} rates for d={d}, got {values.size}")
    for index, (r, s) in enumerate(offdiag_pairs(d)):
        rate = values[index]
        if not np.isfinite(rate) or rate <= 0:
            raise ValidationError(
                f"rate lambda({r + 1},{s + 1}) = {rate!r} "
                "must be finite and strictly positive"
            )
    values = values.copy()
    values.setflags(write=False)
    return Generator(d=d, rates=values)


def generator_matrices(rates: np.ndarray, d: int) -> np.ndarray:
    """Stack of generator matrices from an (n, d(d-1)) array of rates."""
    rates = np.asarray(rates, dtype=float)
    rows, cols = _layout_indices(d)
    q = np.zeros(rates.shape[:-1] + (d, d))
    q[..., rows, cols] = rates
    q[..., np.arange(d), np.arange(d)] = -q.sum(axis=-1)
    return q


def transition_matrices(
    rates: np.ndarray, d: int, eps: np.ndarray, method: str = "auto"
) -> np.ndarray:
    """Transition matrices exp(Q_n * eps_n) for a batch of generators.

    Args:
        rates: (n, d(d-1)) positive rates
        d: number of states
        eps: (n,) non-negative interval lengths
        method: ``"auto"`` uses the closed form for d = 2 and Pade otherwise,
            ``"closed"`` forces the two-state formula, ``"pade"`` forces the
            scaling-and-squaring Pade approximant

    Returns:
        (n, d, d) array of row-stochastic matrices
    """
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    eps = np.broadcast_to(np.asarray(eps, dtype=float), rates.shape[:1])
    if np.any(eps < 0) or not np.all(np.isfinite(eps)):
        raise ValidationError("interval lengths must be finite and non-negative")

    if method == "closed" or (method == "auto" and d == 2):
        if d != 2:
            raise ValidationError(
                "the closed-form transition matrix exists only for d = 2"
            )
        return _two_state_transition(rates[:, 0], rates[:, 1], eps)
    if method not in ("auto", "pade"):
        raise ValidationError(f"unknown transition-matrix method {method!r}")

    q = generator_matrices(rates, d) * eps[:, None, None]
    p = expm(q)
    # Clip round-off outside [0, 1] and renormalise rows.
    p = np.clip(p, 0.0, 1.0)
    return p / p.sum(axis=-1, keepdims=True)


def _two_state_transition(a: np.ndarray, b: np.ndarray, eps: np.ndarray) -> np.ndarray:
    total = a + b
    decay = np.exp(-total * eps)
    p = np.empty(a.shape + (2, 2))
    p[:, 0, 1] = a / total * (1.0 - decay)
    p[:, 0, 0] = 1.0 - p[:, 0, 1]
    p[:, 1, 0] = b / total * (1.0 - decay)
    p[:, 1, 1] = 1.0 - p[:, 1, 0]
    return p


def transition_matrix(q: Generator, eps: float, method: str = "auto") -> np.ndarray:
    """exp(Q * eps) for one generator."""
    return transition_matrices(q.rates[None, :], q.d, np.array([eps]), method=method)[0]


def stationary_many(rates: np.ndarray, d: int) -> np.ndarray:
    """Stationary distributions for a batch of generators.

    Solves pi Q = 0 with sum(pi) = 1 by replacing the last balance equation
    with the normalisation row.
    """
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    if d == 2:
        total = rates[:, 0] + rates[:, 1]
        return np.column_stack([rates[:, 1] / total, rates[:, 0] / total])

    system = np.swapaxes(generator_matrices(rates, d), -1, -2).copy()
    system[:, -1, :] = 1.0
    rhs = np.zeros(rates.shape[:1] + (d,))
    rhs[:, -1] = 1.0
    try:
        pi = np.linalg.solve(system, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"stationary distribution solve failed: {e}")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum(axis=-1, keepdims=True)


def stationary(q: Generator) -> np.ndarray:
    """Stationary distribution of one irreducible generator."""
    return stationary_many(q.rates[None, :], q.d)[0]


def sample_path(
    q: Generator, start_state: int, horizon: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Simulate an exact path on [0, horizon].

    Args:
        q: generator
        start_state: zero-based initial state
        horizon: length of the simulated window (> 0)
        rng: random generator

    Returns:
        (times, states): jump times starting with 0.0 and the state entered at
        each of them; the state at ``horizon`` is ``states[-1]``
    """
    if not 0 <= start_state < q.d:
        raise ValidationError(f"start state {start_state + 1} outside 1..{q.d}")
    if not horizon > 0:
        raise ValidationError("horizon must be positive")

    matrix = q.matrix
    exit_rates = -np.diag(matrix)
    times = [0.0]
    states = [start_state]
    t = 0.0
    state = start_state
    while True:
        t += rng.exponential(1.0 / exit_rates[state])
        if t > horizon:
            break
        jump = matrix[state].copy()
        jump[state] = 0.0
        state = int(rng.choice(q.d, p=jump / exit_rates[state]))
        times.append(t)
        states.append(state)
    return np.array(times), np.array(states, dtype=int)
