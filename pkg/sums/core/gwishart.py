"""G-Wishart distribution on precision matrices constrained by a rate graph.

Density convention: p(K) proportional to |K|^((nu-2)/2) exp(-tr(Psi K)/2)
on the cone of positive-definite matrices with zeros at the non-edges of
the graph. On a complete graph this is a Wishart with nu + D - 1 degrees
of freedom and scale matrix Psi^-1.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp, multigammaln

from ..exceptions import (
    ConvergenceError,
    NormalizingConstantError,
    NumericalError,
    ValidationError,
)
from .graphs import RateGraph

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
COMPLETION_TOL = 1e-8
COMPLETION_MAX_SWEEPS = 1000


@dataclass(frozen=True)
class GWishartParams:
    """Degrees of freedom, inverse-scale matrix and graph."""
    nu: float
    psi: np.ndarray
    graph: RateGraph

    def __post_init__(self) -> None:
        psi = np.asarray(self.psi, dtype=float)
        if psi.shape != (self.graph.n_nodes, self.graph.n_nodes):
            n = self.graph.n_nodes
            raise ValidationError(f"Psi must be {n}x{n}, got {psi.shape}")
        if not np.allclose(psi, psi.T, atol=SYMMETRY_TOL, rtol=0):
            raise ValidationError("Psi must be symmetric")
        if not self.nu > 0:
            raise ValidationError(f"degrees of freedom must be positive, got {self.nu}")
        try:
            np.linalg.cholesky(psi)
        except np.linalg.LinAlgError:
            raise ValidationError("Psi must be positive definite")
        object.__setattr__(self, "psi", psi)

    @property
    def dim(self) -> int:
        return self.graph.n_nodes


@dataclass(frozen=True)
class NormConstEstimate:
    """log I_G(nu, Psi) with its Monte Carlo standard error (0 when exact)."""
    log_value: float
    std_error: float = 0.0
    exact: bool = False


def _non_edge_mask(graph: RateGraph) -> np.ndarray:
    mask = ~graph.adjacency()
    np.fill_diagonal(mask, False)
    return mask


def log_density_unnorm(omega: np.ndarray, params: GWishartParams) -> float:
    """((nu - 2)/2) log|Omega| - tr(Psi Omega)/2.

    Raises:
        ValidationError: Omega has a non-zero entry at a non-edge or is not
            positive definite
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(omega[_non_edge_mask(params.graph)] != 0.0):
        raise ValidationError("precision matrix violates the zero pattern of the graph")
    sign, logdet = np.linalg.slogdet(omega)
    if sign <= 0:
        raise ValidationError("precision matrix is not positive definite")
    return 0.5 * (params.nu - 2.0) * logdet - 0.5 * float(np.sum(params.psi * omega))


def sample_wishart(nu: float, psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unconstrained draw under the same (nu, Psi) convention."""
    dim = psi.shape[0]
    wishart = stats.wishart(df=nu + dim - 1, scale=np.linalg.inv(psi))
    draw = wishart.rvs(random_state=rng)
    return np.atleast_2d(draw)


def sample_direct(
    params: GWishartParams,
    rng: np.random.Generator,
    tol: float = COMPLETION_TOL,
    max_sweeps: int = COMPLETION_MAX_SWEEPS,
) -> np.ndarray:
    """Exact G-Wishart draw by iterated block completion of a Wishart covariance.

    Raises:
        ConvergenceError: the completion did not settle within ``max_sweeps``
    """
    graph = params.graph
    dim = params.dim
    sigma = np.linalg.inv(sample_wishart(params.nu, params.psi, rng))
    if graph.is_complete():
        return _finalise(np.linalg.inv(sigma), graph)

    neighbours = [graph.neighbours(j) for j in range(dim)]
    w = sigma.copy()
    change = np.inf
    for sweep in range(1, max_sweeps + 1):
        previous = w.copy()
        for j in range(dim):
            others = np.array([i for i in range(dim) if i != j], dtype=int)
            nb = neighbours[j]
            beta = np.zeros(dim)
            if nb:
                beta[nb] = np.linalg.solve(w[np.ix_(nb, nb)], sigma[nb, j])
            column = w[np.ix_(others, others)] @ beta[others]
            w[others, j] = column
            w[j, others] = column
        change = float(np.max(np.abs(w - previous)))
        if change < tol:
            logger.debug(f"Direct sampler converged after {sweep} sweeps")
            return _finalise(np.linalg.inv(w), graph)
    raise ConvergenceError(
        f"G-Wishart completion did not converge in {max_sweeps} sweeps "
        f"(max change {change:.3g})",
        iterations=max_sweeps,
        max_change=change,
    )


def _finalise(omega: np.ndarray, graph: RateGraph) -> np.ndarray:
    omega = 0.5 * (omega + omega.T)
    omega[_non_edge_mask(graph)] = 0.0
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise NumericalError("sampled precision matrix is not positive definite")
    return omega


def posterior_params(
    phi_star: np.ndarray, m_mu: np.ndarray, k0: float, prior: GWishartParams
) -> GWishartParams:
    """Conjugate update with the base-measure mean integrated out.

    nu* = nu + M and Psi* = Psi + sum_m (phi_m - mean)(phi_m - mean)'
    + k0 M / (k0 + M) (m_mu - mean)(m_mu - mean)'.
    """
    phi_star = np.atleast_2d(np.asarray(phi_star, dtype=float))
    n_comp = phi_star.shape[0]
    if n_comp < 1:
        raise ValidationError("at least one unique value is required")
    m_mu = np.broadcast_to(np.asarray(m_mu, dtype=float), (prior.dim,))
    mean = phi_star.mean(axis=0)
    centred = phi_star - mean
    shift = (m_mu - mean)[:, None]
    scatter = centred.T @ centred
    psi = prior.psi + scatter + (k0 * n_comp / (k0 + n_comp)) * (shift @ shift.T)
    return GWishartParams(
        nu=prior.nu + n_comp, psi=0.5 * (psi + psi.T), graph=prior.graph
    )


def log_norm_const_full(nu: float, psi: np.ndarray) -> float:
    """Closed-form log I for a complete graph."""
    psi = np.atleast_2d(psi)
    dim = psi.shape[0]
    df = nu + dim - 1
    _, logdet = np.linalg.slogdet(psi)
    return (
        0.5 * df * dim * np.log(2.0)
        + multigammaln(0.5 * df, dim)
        - 0.5 * df * logdet
    )


def _clique_components(graph: RateGraph) -> Optional[List[List[int]]]:
    """Connected components when each one is complete, otherwise None."""
    seen = np.zeros(graph.n_nodes, dtype=bool)
    components = []
    for start in range(graph.n_nodes):
        if seen[start]:
            continue
        stack, nodes = [start], []
        seen[start] = True
        while stack:
            node = stack.pop()
            nodes.append(node)
            for other in graph.neighbours(node):
                if not seen[other]:
                    seen[other] = True
                    stack.append(other)
        nodes.sort()
        if any(len(graph.neighbours(node)) != len(nodes) - 1 for node in nodes):
            return None
        components.append(nodes)
    return components


def log_norm_const_exact(params: GWishartParams) -> Optional[NormConstEstimate]:
    """Exact constant for graphs that are disjoint unions of cliques, else None."""
    components = _clique_components(params.graph)
    if components is None:
        return None
    total = sum(
        log_norm_const_full(params.nu, params.psi[np.ix_(nodes, nodes)])
        for nodes in components
    )
    return NormConstEstimate(log_value=float(total), std_error=0.0, exact=True)


def log_norm_const_mc(
    params: GWishartParams, n_mc: int, rng: np.random.Generator
) -> NormConstEstimate:
    """Monte Carlo estimate of log I_G(nu, Psi).

    Uses the upper-triangular parametrisation K = Phi' Phi, Phi = Psi_T T with
    T'T = Psi^-1: the free entries of Psi_T are independent (chi on the
    diagonal, standard normal off it) and the non-free entries are fixed by
    the zero pattern, so I = C * E[exp(-sum of squared non-free entries / 2)].

    Raises:
        NormalizingConstantError: every Monte Carlo weight underflowed
    """
    if n_mc < 100:
        raise ValidationError(f"n_mc must be at least 100, got {n_mc}")
    graph = params.graph
    dim = params.dim
    delta = params.nu
    adjacency = graph.adjacency()
    upper = np.triu(adjacency, 1)
    later = upper.sum(axis=1)
    earlier = upper.sum(axis=0)
    t = np.linalg.cholesky(np.linalg.inv(params.psi)).T
    t_diag = np.diag(t)

    log_c = float(np.sum(
        (delta + later + earlier) * np.log(t_diag)
        + 0.5 * (delta + later) * np.log(2.0)
        + gammaln(0.5 * (delta + later))
        + 0.5 * later * np.log(2.0 * np.pi)))

    psi_t = np.zeros((n_mc, dim, dim))
    phi = np.zeros((n_mc, dim, dim))
    penalty = np.zeros(n_mc)
    for i in range(dim):
        psi_t[:, i, i] = np.sqrt(rng.chisquare(delta + later[i], size=n_mc))
        phi[:, i, i] = psi_t[:, i, i] * t[i, i]
        for j in range(i + 1, dim):
            if upper[i, j]:
                psi_t[:, i, j] = rng.standard_normal(n_mc)
                phi[:, i, j] = psi_t[:, i, i:j + 1] @ t[i:j + 1, j]
            else:
                cross = np.sum(phi[:, :i, i] * phi[:, :i, j], axis=1)
                phi[:, i, j] = -cross / phi[:, i, i]
                partial = psi_t[:, i, i:j] @ t[i:j, j]
                psi_t[:, i, j] = (phi[:, i, j] - partial) / t[j, j]
                penalty += psi_t[:, i, j] ** 2

    log_weights = -0.5 * penalty
    if not np.any(np.isfinite(log_weights)):
        raise NormalizingConstantError("all Monte Carlo weights underflowed")
    log_mean = float(logsumexp(log_weights) - np.log(n_mc))
    scaled = np.exp(log_weights - log_mean)
    std_error = float(np.std(scaled, ddof=1) / np.sqrt(n_mc))
    if not np.isfinite(log_mean) or not np.isfinite(std_error):
        raise NormalizingConstantError(
            "degenerate Monte Carlo estimate of the normalising constant"
        )
    return NormConstEstimate(
        log_value=log_c + log_mean, std_error=std_error, exact=False
    )


def log_norm_const(
    params: GWishartParams, n_mc: int, rng: np.random.Generator
) -> NormConstEstimate:
    """Exact constant when available, Monte Carlo estimate otherwise."""
    exact = log_norm_const_exact(params)
    if exact is not None:
        return exact
    return log_norm_const_mc(params, n_mc, rng)


def sample_mvn_precision(
    mean: np.ndarray,
    precision: np.ndarray,
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> np.ndarray:
    """Normal draws parametrised by a precision matrix."""
    chol = np.linalg.cholesky(precision)
    n = 1 if size is None else size
    z = rng.standard_normal((n, precision.shape[0]))
    draws = mean + np.linalg.solve(chol.T, z.T).T
    return draws[0] if size is None else draws


def normal_precision_logpdf(
    x: np.ndarray, mean: np.ndarray, precision: np.ndarray
) -> np.ndarray:
    """Log-density of N(mean, precision^-1) evaluated row-wise."""
    x = np.atleast_2d(x)
    diff = x - mean
    _, logdet = np.linalg.slogdet(precision)
    quad = np.einsum("ni,ij,nj->n", diff, precision, diff)
    return 0.5 * (logdet - precision.shape[0] * np.log(2.0 * np.pi) - quad)
