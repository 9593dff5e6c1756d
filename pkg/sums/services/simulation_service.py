"""Synthetic panel data with known clusters and covariate effects."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np
from scipy import stats

from ..core import ctmc
from ..core.model import (
    EXPLANATORY,
    MISSING,
    RESPONSE,
    PanelDataset,
    ProcessSpec,
    RegressionParams,
    SeriesData,
    StudyDesign,
    SubjectData,
    log_rates,
)
from ..exceptions import ValidationError

logger = logging.getLogger(__name__)

SM4_CRUDE_RATES = (0.12, 0.37, 0.11, 0.26, 0.21, 0.34)
SM4_BETA = ((1.0, 1.0), (-1.0, -1.0))
SM4_GAMMA = ((0.75, -1.25), (1.25, -0.75))
SM4_PROPORTIONS = (1.0 / 3.0, 2.0 / 3.0)
TV_SD = math.sqrt(0.5)


@dataclass
class SimScenario:
    """Everything needed to generate one synthetic study.

    ``phi_star`` holds one row of log-baseline rates per true cluster;
    ``params`` carries the regression coefficients of every process.
    """
    design: StudyDesign
    n_subjects: int
    proportions: Tuple[float, ...]
    phi_star: np.ndarray
    params: RegressionParams
    horizon: float = 10.0
    increment_mean: float = 1.0
    increment_sd: float = 1.0
    increment_min: float = 0.5
    bernoulli_p: float = 0.25
    missing_rate: float = 0.0

    def __post_init__(self) -> None:
        self.phi_star = np.atleast_2d(np.asarray(self.phi_star, dtype=float))
        if not math.isclose(sum(self.proportions), 1.0, abs_tol=1e-12):
            raise ValidationError("cluster proportions must sum to 1")
        if self.phi_star.shape != (len(self.proportions), self.design.dim):
            raise ValidationError(
                f"phi_star must be {len(self.proportions)}x{self.design.dim}"
            )
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ValidationError("missing rate must lie in [0, 1]")


@dataclass
class SimulatedPath:
    """Exact path of one process over one observation interval."""
    process: int
    times: np.ndarray
    states: np.ndarray
    end: float


@dataclass
class SimulationResult:
    dataset: PanelDataset
    truth: Dict[str, Any]
    paths: List[SimulatedPath] = field(default_factory=list)


def sm4_design() -> StudyDesign:
    """Three binary processes; covariates act on the first (response) only."""
    return StudyDesign([
        ProcessSpec(name="P1", n_states=2, role=RESPONSE, covariates=("x1", "x2"),
                    tv_covariates=("z1", "z2")),
        ProcessSpec(name="P2", n_states=2, role=EXPLANATORY),
        ProcessSpec(name="P3", n_states=2, role=EXPLANATORY),
    ])


def sm4_scenario(n_subjects: int = 200, missing_rate: float = 0.0) -> SimScenario:
    design = sm4_design()
    crude = np.log(SM4_CRUDE_RATES)
    params = RegressionParams.zeros(design)
    params.beta[0] = np.array(SM4_BETA)
    params.gamma[0] = np.array(SM4_GAMMA)
    return SimScenario(
        design=design,
        n_subjects=n_subjects,
        proportions=SM4_PROPORTIONS,
        phi_star=np.vstack([crude, crude + 1.0]),
        params=params,
        missing_rate=missing_rate,
    )


PRESETS = {"sm4": sm4_scenario}


class SimulationService:
    """Service generating synthetic panel studies."""

    def __init__(self, scenario: SimScenario):
        self.scenario = scenario

    def gen_times(self, rng: np.random.Generator) -> np.ndarray:
        """Visit grid from 0 by truncated-normal increments up to the horizon.

        The first point beyond the horizon is dropped unless fewer than two
        points would remain.
        """
        sc = self.scenario
        lower = (sc.increment_min - sc.increment_mean) / sc.increment_sd
        increments = stats.truncnorm(
            a=lower, b=np.inf, loc=sc.increment_mean, scale=sc.increment_sd
        )
        times = [0.0]
        while True:
            step = float(increments.rvs(random_state=rng))
            if times[-1] + step > sc.horizon:
                if len(times) < 2:
                    times.append(times[-1] + step)
                break
            times.append(times[-1] + step)
        return np.array(times)

    def gen_covariates(
        self, times: np.ndarray, rng: np.random.Generator
    ) -> Tuple[np.ndarray, np.ndarray]:
        """One N(0,1) and one Bernoulli covariate, two Gaussian time-varying ones.

        Returns:
            (x, z) with x of length 2 and z of shape (len(times), 2)
        """
        x = np.array([
            rng.standard_normal(),
            float(rng.random() < self.scenario.bernoulli_p),
        ])
        z1 = rng.normal(times / self.scenario.horizon, TV_SD)
        z2 = rng.normal(np.cos(2.0 * np.pi * times / self.scenario.horizon), TV_SD)
        return x, np.column_stack([z1, z2])

    def _process_inputs(
        self, spec: ProcessSpec, x: np.ndarray, z: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        return x[:len(spec.covariates)], z[:, :len(spec.tv_covariates)]

    def gen_panel(self, rng: np.random.Generator) -> SimulationResult:
        """Allocate subjects, simulate exact paths between visits, record states."""
        sc = self.scenario
        design = sc.design
        allocations = rng.choice(
            len(sc.proportions), size=sc.n_subjects, p=np.asarray(sc.proportions)
        )
        subjects = []
        paths: List[SimulatedPath] = []
        for i in range(sc.n_subjects):
            times = self.gen_times(rng)
            x, z = self.gen_covariates(times, rng)
            phi_i = sc.phi_star[allocations[i]]
            series_list: List[SeriesData] = []
            x_list = []
            for h, spec in enumerate(design.processes):
                x_h, z_h = self._process_inputs(spec, x, z)
                rates = np.vstack([
                    log_rates(phi_i, x_h, z_h[j], sc.params, design, h)
                    for j in range(len(times))
                ])
                pi = ctmc.stationary_many(rates[:1], spec.n_states)[0]
                states = [int(rng.choice(spec.n_states, p=pi))]
                for j in range(1, len(times)):
                    generator = ctmc.build_generator(rates[j], spec.n_states)
                    gap = times[j] - times[j - 1]
                    jump_times, jump_states = ctmc.sample_path(
                        generator, states[-1], gap, rng
                    )
                    paths.append(SimulatedPath(
                        process=h,
                        times=times[j - 1] + jump_times,
                        states=jump_states,
                        end=float(times[j]),
                    ))
                    states.append(int(jump_states[-1]))
                series_list.append(
                    SeriesData(times=times, states=np.array(states), z=z_h)
                )
                x_list.append(x_h)
            subjects.append(SubjectData(
                subject_id=f"S{i + 1:04d}", series=series_list, x=x_list
            ))

        dataset = PanelDataset(design, subjects)
        masked = self.inject_missing(dataset, sc.missing_rate, rng)
        truth = {
            "n_subjects": sc.n_subjects,
            "proportions": list(sc.proportions),
            "allocations": (allocations + 1).tolist(),
            "phi_star": sc.phi_star.tolist(),
            "beta": [b.tolist() for b in sc.params.beta],
            "gamma": [g.tolist() for g in sc.params.gamma],
            "missing_first_states": masked,
        }
        logger.info(f"Simulated {sc.n_subjects} subjects on {design.p} processes "
                    f"({int(np.sum(allocations == 0))} in cluster 1)")
        return SimulationResult(dataset=dataset, truth=truth, paths=paths)

    def inject_missing(
        self, dataset: PanelDataset, rate: float, rng: np.random.Generator
    ) -> Dict[str, List[str]]:
        """Mask the first state of exactly ceil(rate * N_h) subjects per process."""
        masked: Dict[str, List[str]] = {}
        if rate <= 0:
            return masked
        for h, spec in enumerate(dataset.design.processes):
            observed = [
                i for i, subject in enumerate(dataset.subjects)
                if subject.series[h] is not None
            ]
            count = min(len(observed), math.ceil(rate * len(observed)))
            chosen = sorted(rng.choice(observed, size=count, replace=False).tolist())
            for i in chosen:
                dataset.subjects[i].series[h].states[0] = MISSING
            masked[spec.name] = [dataset.subjects[i].subject_id for i in chosen]
        return masked


def crude_rates(paths: List[SimulatedPath], design: StudyDesign) -> np.ndarray:
    """Transition count over person-time at risk from exactly observed paths.

    Returns NaN for a transition whose origin state was never occupied.
    """
    out = np.full(design.dim, np.nan)
    counts = [np.zeros((spec.n_states, spec.n_states)) for spec in design.processes]
    exposure = [np.zeros(spec.n_states) for spec in design.processes]
    for path in paths:
        stays = np.diff(np.append(path.times, path.end))
        np.add.at(exposure[path.process], path.states, stays)
        np.add.at(counts[path.process], (path.states[:-1], path.states[1:]), 1.0)
    for h, spec in enumerate(design.processes):
        for index, (r, s) in enumerate(ctmc.offdiag_pairs(spec.n_states)):
            if exposure[h][r] > 0:
                out[design.offsets[h] + index] = counts[h][r, s] / exposure[h][r]
    return out
