"""Observation model: log-linear rate regression and panel likelihood.

States are stored zero-based internally; files and reports use 1..d.
Missing first observations are encoded as ``MISSING`` (-1).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import NumericalError, RateOverflowError, ValidationError
from . import ctmc

logger = logging.getLogger(__name__)

MISSING = -1
# exp() of anything beyond this is not a usable finite positive rate
MAX_ABS_LOG_RATE = 700.0
PROB_FLOOR = 1e-300

RESPONSE = "response"
EXPLANATORY = "explanatory"


@dataclass(frozen=True)
class ProcessSpec:
    """One multi-state process of the study."""
    name: str
    n_states: int
    role: str = RESPONSE
    covariates: Tuple[str, ...] = ()
    tv_covariates: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.n_states < 2:
            raise ValidationError(f"process {self.name!r} needs at least 2 states")
        if self.role not in (RESPONSE, EXPLANATORY):
            raise ValidationError(f"process {self.name!r}: unknown role {self.role!r}")

    @property
    def n_rates(self) -> int:
        return ctmc.n_rates(self.n_states)


class StudyDesign:
    """Processes, covariate dimensions and the D_p rate layout."""

    def __init__(self, processes: Sequence[ProcessSpec]):
        if not processes:
            raise ValidationError("a study needs at least one process")
        names = [spec.name for spec in processes]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate process names in {names}")
        self.processes: Tuple[ProcessSpec, ...] = tuple(processes)
        sizes = [spec.n_rates for spec in self.processes]
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.offsets: Tuple[int, ...] = tuple(int(v) for v in starts)
        self.dim = int(sum(sizes))

    @property
    def p(self) -> int:
        return len(self.processes)

    def n_states(self, h: int) -> int:
        return self.processes[h].n_states

    def block(self, h: int) -> slice:
        """Slice of the D_p vector holding the rates of process h."""
        start = self.offsets[h]
        return slice(start, start + self.processes[h].n_rates)

    def rate_index(self, h: int, r: int, s: int) -> int:
        """Zero-based index of rate (r, s) of process h in the D_p vector."""
        pairs = ctmc.offdiag_pairs(self.n_states(h))
        try:
            return self.offsets[h] + pairs.index((r, s))
        except ValueError:
            raise ValidationError(
                f"({r + 1},{s + 1}) is not an off-diagonal transition "
                f"of process {h + 1}"
            )

    def process_of_rate(self) -> np.ndarray:
        """Process index of every entry of the D_p vector."""
        return np.repeat(np.arange(self.p), [spec.n_rates for spec in self.processes])

    def transition_labels(self, h: int) -> List[str]:
        """Labels ``r->s`` (one-based) in layout order."""
        return [f"{r + 1}->{s + 1}" for r, s in ctmc.offdiag_pairs(self.n_states(h))]

    def rate_labels(self) -> List[str]:
        return [f"{spec.name}:{label}" for h, spec in enumerate(self.processes)
                for label in self.transition_labels(h)]

    def to_dict(self) -> Dict[str, Any]:
        return {"processes": [
            {
                "name": spec.name,
                "n_states": spec.n_states,
                "role": spec.role,
                "covariates": list(spec.covariates),
                "tv_covariates": list(spec.tv_covariates),
            }
            for spec in self.processes
        ]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StudyDesign":
        try:
            return cls([
                ProcessSpec(
                    name=str(item["name"]),
                    n_states=int(item["n_states"]),
                    role=str(item.get("role", RESPONSE)),
                    covariates=tuple(item.get("covariates") or ()),
                    tv_covariates=tuple(item.get("tv_covariates") or ()),
                )
                for item in data["processes"]
            ])
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed study design: {e}")


@dataclass
class SeriesData:
    """Observations of one process for one subject."""
    times: np.ndarray
    states: np.ndarray
    z: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=int)
        self.z = np.asarray(self.z, dtype=float).reshape(len(self.times), -1)

    @property
    def n_obs(self) -> int:
        return len(self.times)

    @property
    def eps(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def first_missing(self) -> bool:
        return bool(self.states[0] == MISSING)


@dataclass
class SubjectData:
    """All processes of one subject; ``series[h]`` is None when unobserved."""
    subject_id: str
    series: List[Optional[SeriesData]]
    x: List[np.ndarray] = field(default_factory=list)


class PanelDataset:
    """Validated panel observations for N subjects."""

    def __init__(self, design: StudyDesign, subjects: Sequence[SubjectData]):
        self.design = design
        self.subjects: List[SubjectData] = list(subjects)
        self._validate()

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    def _validate(self) -> None:
        design = self.design
        for i, subject in enumerate(self.subjects):
            if len(subject.series) != design.p:
                raise ValidationError(
                    f"subject {subject.subject_id}: expected {design.p} processes"
                )
            if not subject.x:
                subject.x = [
                    np.zeros(len(spec.covariates)) for spec in design.processes
                ]
            for h, spec in enumerate(design.processes):
                x = np.asarray(subject.x[h], dtype=float).ravel()
                if x.size != len(spec.covariates):
                    raise ValidationError(
                        f"subject {subject.subject_id}, process {spec.name}: "
                        f"expected {len(spec.covariates)} covariates, got {x.size}")
                subject.x[h] = x
                series = subject.series[h]
                if series is None:
                    continue
                where = f"subject {subject.subject_id}, process {spec.name}"
                if series.n_obs < 2:
                    raise ValidationError(
                        f"{where}: at least two observation times are required"
                    )
                if np.any(np.diff(series.times) <= 0):
                    raise ValidationError(
                        f"{where}: observation times must be strictly increasing"
                    )
                if np.any(series.states[1:] == MISSING):
                    raise ValidationError(
                        f"{where}: only the first state may be missing"
                    )
                observed = series.states[series.states != MISSING]
                if np.any((observed < 0) | (observed >= spec.n_states)):
                    raise ValidationError(
                        f"{where}: states must lie in 1..{spec.n_states}"
                    )
                if series.z.shape[1] != len(spec.tv_covariates):
                    n_tv = len(spec.tv_covariates)
                    raise ValidationError(
                        f"{where}: expected {n_tv} time-varying covariates"
                    )

    def subject_ids(self) -> List[str]:
        return [subject.subject_id for subject in self.subjects]


@dataclass
class RegressionParams:
    """Per-process coefficient matrices (covariates x transitions)."""
    beta: List[np.ndarray]
    gamma: List[np.ndarray]

    @classmethod
    def zeros(cls, design: StudyDesign) -> "RegressionParams":
        return cls(
            beta=[np.zeros((len(spec.covariates), spec.n_rates))
                  for spec in design.processes],
            gamma=[np.zeros((len(spec.tv_covariates), spec.n_rates))
                   for spec in design.processes],
        )

    def copy(self) -> "RegressionParams":
        return RegressionParams(
            beta=[b.copy() for b in self.beta], gamma=[g.copy() for g in self.gamma]
        )


def _check_predictor(predictor: np.ndarray) -> None:
    if predictor.size == 0:
        return
    worst = float(np.max(np.abs(predictor)))
    if not np.isfinite(worst) or worst > MAX_ABS_LOG_RATE:
        index = int(np.argmax(np.abs(np.nan_to_num(predictor, nan=np.inf))))
        value = float(predictor.ravel()[index])
        raise RateOverflowError(
            f"log-rate linear predictor {value!r} is outside the finite range", value
        )


def log_rates(
    phi_i: np.ndarray,
    x_i: np.ndarray,
    z_ij: np.ndarray,
    params: RegressionParams,
    design: StudyDesign,
    h: int,
) -> np.ndarray:
    """Rates of process h on one interval: exp(phi + X beta + Z gamma).

    Raises:
        RateOverflowError: the linear predictor cannot be exponentiated to a
            finite positive rate
    """
    predictor = (np.asarray(phi_i, dtype=float)[design.block(h)]
                 + np.asarray(x_i, dtype=float) @ params.beta[h]
                 + np.asarray(z_ij, dtype=float) @ params.gamma[h])
    _check_predictor(predictor)
    return np.exp(predictor)


def interval_rates(
    phi_i: np.ndarray,
    series: SeriesData,
    x_i: np.ndarray,
    params: RegressionParams,
    design: StudyDesign,
    h: int,
) -> np.ndarray:
    """(n_obs, K) rates; row j governs the interval ending at t_j, row 0 the
    stationary distribution of the first observation."""
    return np.vstack([log_rates(phi_i, x_i, series.z[j], params, design, h)
                      for j in range(series.n_obs)])


def subject_process_loglik(
    series: SeriesData, rates: np.ndarray, d: int, initial_state: Optional[int] = None
) -> float:
    """Log-probability of one subject's panel for one process.

    Args:
        series: observation times and states
        rates: (n_obs, K) per-interval rates from :func:`interval_rates`
        d: number of states
        initial_state: state to use at t_1 when it is missing
    """
    states = series.states.copy()
    if states[0] == MISSING:
        if initial_state is None:
            raise ValidationError(
                "first state is missing and no imputed value was supplied"
            )
        states[0] = initial_state
    rates = np.asarray(rates, dtype=float)
    pi = ctmc.stationary_many(rates[:1], d)[0]
    total = np.log(max(pi[states[0]], PROB_FLOOR))
    if series.n_obs > 1:
        p = ctmc.transition_matrices(rates[1:], d, series.eps)
        steps = p[np.arange(series.n_obs - 1), states[:-1], states[1:]]
        total += float(np.sum(np.log(np.maximum(steps, PROB_FLOOR))))
    return float(total)


def total_loglik(
    dataset: PanelDataset,
    phi: np.ndarray,
    params: RegressionParams,
    initial_states: Optional[Dict[Tuple[int, int], int]] = None,
) -> float:
    """Sum of :func:`subject_process_loglik` over subjects and processes.

    Args:
        dataset: panel data
        phi: (N, D_p) subject log-baseline rates
        params: regression coefficients
        initial_states: imputed first states keyed by (subject, process)
    """
    design = dataset.design
    initial_states = initial_states or {}
    total = 0.0
    for i, subject in enumerate(dataset.subjects):
        for h, series in enumerate(subject.series):
            if series is None:
                continue
            rates = interval_rates(phi[i], series, subject.x[h], params, design, h)
            total += subject_process_loglik(
                series, rates, design.n_states(h), initial_states.get((i, h))
            )
    return total


def initial_state_weights(
    pi_first: np.ndarray, p_second: np.ndarray, y_second: np.ndarray
) -> np.ndarray:
    """Normalised full conditional of missing first states.

    Args:
        pi_first: (n, d) stationary distributions at t_1
        p_second: (n, d, d) transition matrices over (t_1, t_2]
        y_second: (n,) observed states at t_2

    Returns:
        (n, d) probabilities proportional to p(k, y_2) * pi(k)
    """
    weights = p_second[np.arange(len(y_second)), :, y_second] * pi_first
    totals = weights.sum(axis=1, keepdims=True)
    if np.any(totals <= 0) or not np.all(np.isfinite(totals)):
        raise NumericalError("all candidate first states have zero probability")
    return weights / totals


def impute_initial_state(
    series: SeriesData, rates: np.ndarray, d: int, rng: np.random.Generator
) -> int:
    """Draw a missing first state from its full conditional."""
    if not series.first_missing:
        raise ValidationError("first state is observed; nothing to impute")
    pi = ctmc.stationary_many(rates[:1], d)
    p = ctmc.transition_matrices(rates[1:2], d, series.eps[:1])
    probs = initial_state_weights(pi, p, series.states[1:2])[0]
    return int(rng.choice(d, p=probs))


def crude_log_rates_panel(dataset: PanelDataset) -> np.ndarray:
    """Crude per-transition log-rates from consecutive panel observations.

    Counts observed changes r -> s between consecutive visits and divides by
    the time spent at risk in r (interval lengths starting in r), with half a
    pseudo-count on each transition.
    """
    design = dataset.design
    out = np.zeros(design.dim)
    for h, spec in enumerate(design.processes):
        d = spec.n_states
        counts = np.full((d, d), 0.5)
        exposure = np.full(d, 1.0)
        for subject in dataset.subjects:
            series = subject.series[h]
            if series is None:
                continue
            states = series.states
            for j in range(1, series.n_obs):
                start, end = states[j - 1], states[j]
                if start == MISSING:
                    continue
                exposure[start] += series.eps[j - 1]
                if start != end:
                    counts[start, end] += 1.0
        out[design.block(h)] = [
            np.log(counts[r, s] / exposure[r]) for r, s in ctmc.offdiag_pairs(d)
        ]
    return out


class _ProcessArrays:
    """Flattened interval arrays of one process across all subjects."""

    def __init__(self, dataset: PanelDataset, h: int):
        design = dataset.design
        spec = design.processes[h]
        subj, start_pos, end_state, eps, z = [], [], [], [], []
        first_subj, first_state, first_z, second_index = [], [], [], []
        start_state = []
        self.x = np.zeros((dataset.n_subjects, len(spec.covariates)))
        for i, subject in enumerate(dataset.subjects):
            self.x[i] = subject.x[h]
            series = subject.series[h]
            if series is None:
                continue
            first_subj.append(i)
            first_state.append(int(series.states[0]))
            first_z.append(series.z[0])
            second_index.append(len(subj))
            for j in range(1, series.n_obs):
                subj.append(i)
                start_state.append(int(series.states[j - 1]))
                end_state.append(int(series.states[j]))
                eps.append(series.times[j] - series.times[j - 1])
                z.append(series.z[j])
        q = len(spec.tv_covariates)
        self.d = spec.n_states
        self.block = design.block(h)
        self.subj = np.array(subj, dtype=int)
        self.start = np.array(start_state, dtype=int)
        self.end = np.array(end_state, dtype=int)
        self.eps = np.array(eps, dtype=float)
        self.z = np.array(z, dtype=float).reshape(len(subj), q)
        self.first_subj = np.array(first_subj, dtype=int)
        self.first_state = np.array(first_state, dtype=int)
        self.first_z = np.array(first_z, dtype=float).reshape(len(first_subj), q)
        self.second_index = np.array(second_index, dtype=int)
        self.missing = np.flatnonzero(self.first_state == MISSING)


class LikelihoodEngine:
    """Vectorised panel likelihood over all subjects.

    ``initial_states[h]`` is aligned with the subjects observed on process h
    (in subject order) and must hold a valid state for every entry; the
    sampler keeps the imputed values there.
    """

    def __init__(self, dataset: PanelDataset):
        self.dataset = dataset
        self.design = dataset.design
        self.n_subjects = dataset.n_subjects
        self._arrays = [_ProcessArrays(dataset, h) for h in range(self.design.p)]

    def observed_initial_states(self) -> List[np.ndarray]:
        return [arrays.first_state.copy() for arrays in self._arrays]

    def missing_positions(self, h: int) -> np.ndarray:
        return self._arrays[h].missing

    def first_subjects(self, h: int) -> np.ndarray:
        return self._arrays[h].first_subj

    def _predictors(
        self,
        h: int,
        phi: np.ndarray,
        beta: np.ndarray,
        gamma: np.ndarray,
        strict: bool = True,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Linear predictors of the first observations and of every interval.

        With ``strict`` an out-of-range predictor raises; otherwise the
        offending rows are zeroed and their subjects are returned as bad.
        """
        arrays = self._arrays[h]
        phi_h = phi[:, arrays.block]
        subject_part = phi_h + arrays.x @ beta
        first = subject_part[arrays.first_subj] + arrays.first_z @ gamma
        steps = subject_part[arrays.subj] + arrays.z @ gamma
        bad = np.zeros(self.n_subjects, dtype=bool)
        if strict:
            _check_predictor(first)
            _check_predictor(steps)
            return first, steps, bad
        for predictor, owners in ((first, arrays.first_subj), (steps, arrays.subj)):
            rows = ~np.all(np.abs(predictor) <= MAX_ABS_LOG_RATE, axis=1)
            if np.any(rows):
                predictor[rows] = 0.0
                bad[owners[rows]] = True
        return first, steps, bad

    def process_loglik(
        self,
        h: int,
        phi: np.ndarray,
        beta: np.ndarray,
        gamma: np.ndarray,
        initial_states: np.ndarray,
        strict: bool = True,
    ) -> np.ndarray:
        """(N,) log-likelihood contributions of process h.

        Raises:
            RateOverflowError: some interval's linear predictor is out of range
                (only with ``strict``; otherwise those subjects get -inf)
        """
        arrays = self._arrays[h]
        out = np.zeros(self.n_subjects)
        if arrays.first_subj.size == 0:
            return out
        first, steps, bad = self._predictors(h, phi, beta, gamma, strict)
        pi = ctmc.stationary_many(np.exp(first), arrays.d)
        pi_obs = pi[np.arange(len(initial_states)), initial_states]
        log_pi = np.log(np.maximum(pi_obs, PROB_FLOOR))
        out += np.bincount(arrays.first_subj, weights=log_pi, minlength=self.n_subjects)
        if arrays.subj.size:
            start = arrays.start.copy()
            start[arrays.second_index] = initial_states
            p = ctmc.transition_matrices(np.exp(steps), arrays.d, arrays.eps)
            p_obs = p[np.arange(len(start)), start, arrays.end]
            log_p = np.log(np.maximum(p_obs, PROB_FLOOR))
            out += np.bincount(arrays.subj, weights=log_p, minlength=self.n_subjects)
        out[bad] = -np.inf
        return out

    def subject_loglik(
        self,
        phi: np.ndarray,
        params: RegressionParams,
        initial_states: Sequence[np.ndarray],
        strict: bool = True,
    ) -> np.ndarray:
        """(N,) log-likelihood of every subject summed over processes."""
        total = np.zeros(self.n_subjects)
        for h in range(self.design.p):
            total += self.process_loglik(
                h, phi, params.beta[h], params.gamma[h], initial_states[h], strict
            )
        return total

    def component_table(
        self,
        phi_star: np.ndarray,
        params: RegressionParams,
        initial_states: Sequence[np.ndarray],
    ) -> np.ndarray:
        """(N, M) table of subject log-likelihoods under each component.

        Subjects whose rates overflow under a component get -inf there.
        """
        table = np.empty((self.n_subjects, phi_star.shape[0]))
        for m, phi_m in enumerate(phi_star):
            phi = np.broadcast_to(phi_m, (self.n_subjects, phi_m.size))
            table[:, m] = self.subject_loglik(phi, params, initial_states, strict=False)
        return table

    def initial_state_probabilities(
        self, h: int, phi: np.ndarray, beta: np.ndarray, gamma: np.ndarray
    ) -> np.ndarray:
        """(n_missing, d) full-conditional probabilities of missing first states."""
        arrays = self._arrays[h]
        positions = arrays.missing
        if positions.size == 0:
            return np.zeros((0, arrays.d))
        first, steps, _ = self._predictors(h, phi, beta, gamma)
        second = arrays.second_index[positions]
        pi = ctmc.stationary_many(np.exp(first[positions]), arrays.d)
        p = ctmc.transition_matrices(
            np.exp(steps[second]), arrays.d, arrays.eps[second]
        )
        return initial_state_weights(pi, p, arrays.end[second])
