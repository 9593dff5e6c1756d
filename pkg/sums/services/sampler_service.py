"""MCMC sampler for the joint model of several panel-observed processes.

One iteration runs, in order: missing first-state imputation, the mixture
sweep (u, weights, non-allocated components, allocations, unique values),
the regression blocks, the graph move, the precision-matrix redraw and the
conjugate update of mu and k0.
"""

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..config import Config
from ..core import graphs, gwishart, mixture
from ..core.graphs import ProcessGraph, RateGraph
from ..core.gwishart import GWishartParams, NormConstEstimate
from ..core.mixture import MixtureHyper, MixtureState
from ..core.model import (
    MISSING,
    LikelihoodEngine,
    PanelDataset,
    RegressionParams,
    crude_log_rates_panel,
)
from ..exceptions import (
    ChainAbortedError,
    NormalizingConstantError,
    NumericalError,
    RateOverflowError,
    ValidationError,
)
from .adaptive_service import AdaptiveProposal
from .cache_service import NormConstCache
from .logging_service import LoggingService, format_acceptance

logger = logging.getLogger(__name__)

INIT_JITTER_SD = 0.1


@dataclass
class GGMState:
    """Graph, precision matrix and base-measure mean."""
    g0: ProcessGraph
    graph: RateGraph
    omega: np.ndarray
    mu: np.ndarray
    k0: float


@dataclass
class SamplerState:
    mixture: MixtureState
    ggm: GGMState
    regression: RegressionParams
    initial_states: List[np.ndarray]
    iteration: int = 0


@dataclass
class PosteriorChain:
    """Saved records of one chain plus run diagnostics."""
    chain_id: int
    records: List[Dict[str, Any]] = field(default_factory=list)
    acceptance: Dict[str, Any] = field(default_factory=dict)
    samples_path: str = ""
    elapsed: float = 0.0


def chain_generators(seed: int, n_chains: int) -> List[np.random.Generator]:
    """Independent PCG64 streams, one per chain, spawned from the run seed."""
    return [np.random.Generator(np.random.PCG64(child))
            for child in np.random.SeedSequence(seed).spawn(n_chains)]


def _categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    draws = rng.random(probs.shape[0])[:, None]
    return np.minimum((cdf < draws * cdf[:, -1:]).sum(axis=1), probs.shape[1] - 1)


class SamplerService:
    """Service running one MCMC chain over a panel dataset."""

    def __init__(
        self,
        config: Config,
        dataset: PanelDataset,
        chain_id: int = 0,
        cache: Optional[NormConstCache] = None,
        engine: Optional[LikelihoodEngine] = None,
        logging_service: Optional[LoggingService] = None,
        fixed_partition: Optional[Sequence[int]] = None,
        prior_only: bool = False,
    ):
        """Initialize the sampler.

        Args:
            config: run configuration
            dataset: validated panel data
            chain_id: index used in logs and file names
            cache: shared cache of prior normalising constants
            engine: prebuilt likelihood engine (built from ``dataset`` if omitted)
            logging_service: emits chain events and progress lines
            fixed_partition: freeze allocations to this partition (labels per subject)
            prior_only: replace the likelihood by a constant
        """
        self.config = config
        self.dataset = dataset
        self.design = dataset.design
        self.chain_id = chain_id
        self.engine = engine or LikelihoodEngine(dataset)
        self.cache = cache if cache is not None else NormConstCache()
        self.logging_service = logging_service
        self.prior_only = prior_only
        self.fixed_partition = (None if fixed_partition is None
                                else mixture.canonical_labels(fixed_partition))
        partition = self.fixed_partition
        if partition is not None and partition.size != dataset.n_subjects:
            raise ValidationError("fixed partition must label every subject")

        dim = self.design.dim
        self.hyper = MixtureHyper(config.mixture.Lambda, config.mixture.gamma_s)
        self.nu = config.resolve_nu(dim)
        self.psi_scale = config.resolve_psi_scale(dim)
        self.psi = self.psi_scale * np.eye(dim)
        self.m_mu = np.full(dim, config.mean.m_mu)

        proposal = config.proposal
        self.proposals = [
            AdaptiveProposal(
                dim=(len(spec.covariates) + len(spec.tv_covariates)) * spec.n_rates,
                initial_var=proposal.initial_var,
                scale=proposal.scale,
                jitter=proposal.jitter,
                adapt_after=config.chain.adapt_burnin,
            )
            for spec in self.design.processes
        ]
        self.counters: Dict[str, List[int]] = {
            "phi_star": [0, 0],
            "graph": [0, 0],
            "graph_failures": [0, 0],
        }

    # -- state ---------------------------------------------------------------

    def prior_params(self, g0: ProcessGraph) -> GWishartParams:
        return GWishartParams(
            nu=self.nu, psi=self.psi, graph=graphs.expand(g0, self.design)
        )

    def initial_state(self, rng: np.random.Generator) -> SamplerState:
        """Starting point: crude panel log-rates plus jitter, empty graph."""
        dim = self.design.dim
        n = self.dataset.n_subjects
        if self.fixed_partition is not None:
            c = self.fixed_partition.copy()
            n_comp = int(c.max()) + 1
        else:
            n_comp = self.config.mixture.init_components
            c = rng.integers(n_comp, size=n)
        crude = crude_log_rates_panel(self.dataset)
        phi_star = crude + INIT_JITTER_SD * rng.standard_normal((n_comp, dim))
        mix = mixture.compact(
            MixtureState(S=np.ones(n_comp), c=c, phi_star=phi_star, u=1.0)
        )
        g0 = ProcessGraph.empty(self.design.p)
        ggm = GGMState(g0=g0, graph=graphs.expand(g0, self.design), omega=np.eye(dim),
                       mu=phi_star.mean(axis=0), k0=1.0)
        initial_states = self.engine.observed_initial_states()
        for states in initial_states:
            states[states == MISSING] = 0
        return SamplerState(
            mixture=mix,
            ggm=ggm,
            regression=RegressionParams.zeros(self.design),
            initial_states=initial_states,
        )

    def subject_phi(self, state: SamplerState) -> np.ndarray:
        return state.mixture.phi_star[state.mixture.c]

    def log_likelihood(self, state: SamplerState) -> float:
        if self.prior_only:
            return 0.0
        per_subject = self.engine.subject_loglik(
            self.subject_phi(state), state.regression, state.initial_states
        )
        return float(np.sum(per_subject))

    # -- steps ---------------------------------------------------------------

    def step_missing(self, state: SamplerState, rng: np.random.Generator) -> None:
        """Redraw every missing first state from its full conditional."""
        phi = self.subject_phi(state)
        for h in range(self.design.p):
            positions = self.engine.missing_positions(h)
            if positions.size == 0:
                continue
            probs = self.engine.initial_state_probabilities(
                h, phi, state.regression.beta[h], state.regression.gamma[h])
            state.initial_states[h][positions] = _categorical(probs, rng)

    def _component_table(self, state: SamplerState) -> np.ndarray:
        mix = state.mixture
        if self.prior_only:
            return np.zeros((mix.N, mix.M))
        return self.engine.component_table(
            mix.phi_star, state.regression, state.initial_states
        )

    def _cluster_loglik(
        self, state: SamplerState, candidates: np.ndarray
    ) -> np.ndarray:
        mix = state.mixture
        k = mix.K_N
        if self.prior_only:
            return np.zeros(k)
        per_subject = self.engine.subject_loglik(candidates[mix.c], state.regression,
                                                 state.initial_states, strict=False)
        return np.bincount(mix.c, weights=per_subject, minlength=k)[:k]

    def step_mixture(self, state: SamplerState, rng: np.random.Generator) -> None:
        """u, weights, non-allocated components, allocations, then unique values.

        With a fixed partition only the unique values move.
        """
        mix = state.mixture
        if self.fixed_partition is None:
            mixture.update_u(mix, rng)
            mixture.update_allocated_weights(mix, self.hyper, rng)
            mixture.update_nonallocated(
                mix, self.hyper, state.ggm.mu, state.ggm.omega, rng
            )
            mixture.update_allocations(mix, self._component_table(state), rng)
        accepted = mixture.update_phi_star(
            mix, lambda candidates: self._cluster_loglik(state, candidates),
            state.ggm.mu, state.ggm.omega, self.config.proposal.phi_star_var, rng)
        self.counters["phi_star"][0] += int(np.sum(accepted))
        self.counters["phi_star"][1] += int(accepted.size)

    def _unpack(self, h: int, theta: np.ndarray) -> tuple:
        spec = self.design.processes[h]
        n_beta = len(spec.covariates) * spec.n_rates
        beta = theta[:n_beta].reshape(len(spec.covariates), spec.n_rates)
        gamma = theta[n_beta:].reshape(len(spec.tv_covariates), spec.n_rates)
        return beta, gamma

    def _process_loglik(
        self,
        state: SamplerState,
        h: int,
        phi: np.ndarray,
        beta: np.ndarray,
        gamma: np.ndarray,
    ) -> float:
        if self.prior_only:
            return 0.0
        per_subject = self.engine.process_loglik(
            h, phi, beta, gamma, state.initial_states[h]
        )
        return float(np.sum(per_subject))

    def step_beta_gamma(self, state: SamplerState, rng: np.random.Generator) -> None:
        """One adaptive Metropolis update of (beta, gamma) per process."""
        phi = self.subject_phi(state)
        variance = self.config.regression.prior_sd ** 2
        for h, proposal in enumerate(self.proposals):
            if proposal.dim == 0:
                continue
            reg = state.regression
            theta = np.concatenate([reg.beta[h].ravel(), reg.gamma[h].ravel()])
            candidate = proposal.propose(theta, rng)
            cand_beta, cand_gamma = self._unpack(h, candidate)
            try:
                log_ratio = (
                    self._process_loglik(state, h, phi, cand_beta, cand_gamma)
                    - self._process_loglik(state, h, phi, reg.beta[h], reg.gamma[h])
                    - 0.5 * (candidate @ candidate - theta @ theta) / variance
                )
            except RateOverflowError as e:
                logger.debug(f"Regression proposal for process {h + 1} overflows: {e}")
                log_ratio = -np.inf
            accepted = bool(np.log(rng.random()) < log_ratio)
            if accepted:
                reg.beta[h], reg.gamma[h] = cand_beta.copy(), cand_gamma.copy()
                theta = candidate
            proposal.record(accepted)
            proposal.update(theta)

    def _graph_key(self, g0: ProcessGraph) -> tuple:
        return (self.nu, self.psi_scale, tuple(sorted(g0.edges)))

    def prior_log_const(self, g0: ProcessGraph) -> NormConstEstimate:
        """Prior normalising constant of expand(g0), cached per graph.

        Monte Carlo draws come from a stream seeded by the graph itself so
        every chain sees the same value whichever computes it first.
        """
        key = self._graph_key(g0)
        mask = sum(1 << (h * self.design.p + k) for h, k in g0.edges)

        def compute() -> NormConstEstimate:
            rng = np.random.default_rng([self.config.chain.seed, mask])
            params = self.prior_params(g0)
            return gwishart.log_norm_const(params, self.config.graph.n_mc, rng)

        return self.cache.get_or_compute(key, compute)

    def step_graph(self, state: SamplerState, rng: np.random.Generator) -> bool:
        """Toggle one uniformly chosen process-graph edge, Omega integrated out."""
        if self.design.p < 2:
            return False
        ggm = state.ggm
        phi_star = state.mixture.phi_star
        candidates = ggm.g0.candidate_edges()
        edge = candidates[int(rng.integers(len(candidates)))]
        proposed = ggm.g0.toggle(*edge)
        try:
            post_current = gwishart.posterior_params(
                phi_star, self.m_mu, ggm.k0, self.prior_params(ggm.g0)
            )
            post_proposed = gwishart.posterior_params(
                phi_star, self.m_mu, ggm.k0, self.prior_params(proposed)
            )
            n_mc = self.config.graph.n_mc
            log_ratio = (
                graphs.log_prior_ratio(ggm.g0, edge, self.config.graph.eta)
                + gwishart.log_norm_const(post_proposed, n_mc, rng).log_value
                - gwishart.log_norm_const(post_current, n_mc, rng).log_value
                + self.prior_log_const(ggm.g0).log_value
                - self.prior_log_const(proposed).log_value
            )
        except NormalizingConstantError as e:
            logger.warning(
                f"Chain {self.chain_id}: graph move on edge "
                f"{edge[0] + 1}-{edge[1] + 1} rejected: {e}"
            )
            self.counters["graph_failures"][0] += 1
            return False
        accepted = bool(np.log(rng.random()) < log_ratio)
        if accepted:
            ggm.g0 = proposed
            ggm.graph = graphs.expand(proposed, self.design)
        self.counters["graph"][0] += int(accepted)
        self.counters["graph"][1] += 1
        return accepted

    def step_omega(self, state: SamplerState, rng: np.random.Generator) -> None:
        """Omega | G, phi*, k0 with mu integrated out."""
        ggm = state.ggm
        post = gwishart.posterior_params(
            state.mixture.phi_star, self.m_mu, ggm.k0, self.prior_params(ggm.g0)
        )
        ggm.omega = gwishart.sample_direct(post, rng)

    def step_mu_k0(self, state: SamplerState, rng: np.random.Generator) -> None:
        """Conjugate draws of mu (precision (M + k0) Omega) and then k0."""
        ggm = state.ggm
        phi_star = state.mixture.phi_star
        n_comp = phi_star.shape[0]
        mean = (phi_star.sum(axis=0) + ggm.k0 * self.m_mu) / (n_comp + ggm.k0)
        precision = (n_comp + ggm.k0) * ggm.omega
        ggm.mu = gwishart.sample_mvn_precision(mean, precision, rng)
        diff = ggm.mu - self.m_mu
        rate = self.config.mean.b_k0 + 0.5 * float(diff @ ggm.omega @ diff)
        shape = self.config.mean.a_k0 + 0.5 * self.design.dim
        ggm.k0 = float(rng.gamma(shape, 1.0 / rate))

    def iterate(self, state: SamplerState, rng: np.random.Generator) -> None:
        state.iteration += 1
        self.step_missing(state, rng)
        self.step_mixture(state, rng)
        self.step_beta_gamma(state, rng)
        self.step_graph(state, rng)
        self.step_omega(state, rng)
        self.step_mu_k0(state, rng)

    # -- output --------------------------------------------------------------

    def record(self, state: SamplerState) -> Dict[str, Any]:
        """One saved iteration (allocations one-based, edges one-based)."""
        mix = state.mixture
        return {
            "iter": state.iteration,
            "M": mix.M,
            "K_N": mix.K_N,
            "c": (mix.c + 1).tolist(),
            "phi_star": mix.phi_star.tolist(),
            "S": mix.S.tolist(),
            "beta": [b.tolist() for b in state.regression.beta],
            "gamma": [g.tolist() for g in state.regression.gamma],
            "mu": state.ggm.mu.tolist(),
            "k0": float(state.ggm.k0),
            "g0_edges": state.ggm.g0.to_edge_list(),
            "log_lik": self.log_likelihood(state),
            "u": float(mix.u),
        }

    def acceptance_rates(self) -> Dict[str, Any]:
        def rate(pair: List[int]) -> float:
            return pair[0] / pair[1] if pair[1] else 0.0

        return {
            "phi_star": rate(self.counters["phi_star"]),
            "graph": rate(self.counters["graph"]),
            "graph_failures": self.counters["graph_failures"][0],
            "beta_gamma": {
                spec.name: proposal.acceptance_rate()
                for spec, proposal in zip(self.design.processes, self.proposals)
            },
        }

    def _dump_state(self, state: SamplerState, dump_dir: str, error: Exception) -> str:
        if not dump_dir:
            return ""
        mix = state.mixture
        dump = {
            "chain": self.chain_id,
            "iteration": state.iteration,
            "error": str(error),
            "M": mix.M,
            "c": (mix.c + 1).tolist(),
            "phi_star": mix.phi_star.tolist(),
            "S": mix.S.tolist(),
            "u": float(mix.u),
            "beta": [b.tolist() for b in state.regression.beta],
            "gamma": [g.tolist() for g in state.regression.gamma],
            "mu": state.ggm.mu.tolist(),
            "k0": float(state.ggm.k0),
            "omega": state.ggm.omega.tolist(),
            "g0_edges": state.ggm.g0.to_edge_list(),
        }
        os.makedirs(dump_dir, exist_ok=True)
        path = os.path.join(dump_dir, "state_dump.json")
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(dump, handle)
        return path

    def run_chain(
        self, rng: np.random.Generator, samples_path: str = "", dump_dir: str = ""
    ) -> PosteriorChain:
        """Run ``chain.n_iter`` iterations and keep every thinned post-burn-in state.

        Args:
            rng: the chain's random stream
            samples_path: JSON-lines file receiving one record per saved iteration
            dump_dir: directory for ``state_dump.json`` on a numerical abort

        Raises:
            ChainAbortedError: a step failed numerically
        """
        settings = self.config.chain
        chain = PosteriorChain(chain_id=self.chain_id, samples_path=samples_path)
        state = self.initial_state(rng)
        started = time.perf_counter()
        self._event(
            "start",
            details=f"{settings.n_iter} iterations, burn-in {settings.burnin}, "
            f"thin {settings.thin}",
        )
        handle = open(samples_path, "w", encoding="utf-8") if samples_path else None
        try:
            for iteration in range(1, settings.n_iter + 1):
                try:
                    self.iterate(state, rng)
                except NumericalError as e:
                    path = self._dump_state(state, dump_dir, e)
                    self._event(
                        "abort", success=False, details=f"iteration {iteration}: {e}"
                    )
                    raise ChainAbortedError(
                        f"chain {self.chain_id} aborted at iteration {iteration}: {e}"
                        + (f" (state dumped to {path})" if path else ""),
                        chain_id=self.chain_id,
                        iteration=iteration,
                        dump_path=path,
                    ) from e
                if iteration % settings.progress_every == 0:
                    self._progress(state)
                since_burnin = iteration - settings.burnin
                if since_burnin > 0 and since_burnin % settings.thin == 0:
                    record = self.record(state)
                    chain.records.append(record)
                    if handle is not None:
                        handle.write(json.dumps(record) + "\n")
        finally:
            if handle is not None:
                handle.close()
        chain.elapsed = time.perf_counter() - started
        chain.acceptance = self.acceptance_rates()
        self._event(
            "finish",
            details=f"{len(chain.records)} saved iterations in {chain.elapsed:.1f}s, "
            f"accept {format_acceptance(chain.acceptance)}",
        )
        return chain

    def _event(self, event: str, success: bool = True, details: str = "") -> None:
        if self.logging_service is not None:
            self.logging_service.log_chain_event(self.chain_id, event, success, details)
        else:
            logger.info(f"Chain {self.chain_id} {event}: {details}")

    def _progress(self, state: SamplerState) -> None:
        mix = state.mixture
        log_lik = self.log_likelihood(state)
        if self.logging_service is not None:
            self.logging_service.log_progress(
                self.chain_id,
                state.iteration,
                self.config.chain.n_iter,
                mix.K_N,
                mix.M,
                state.ggm.g0.n_edges,
                log_lik,
                self.acceptance_rates(),
            )
        else:
            logger.info(
                f"Chain {self.chain_id} iteration {state.iteration}: "
                f"K_N={mix.K_N} M={mix.M} loglik={log_lik:.3f} "
                f"accept {format_acceptance(self.acceptance_rates())}"
            )
