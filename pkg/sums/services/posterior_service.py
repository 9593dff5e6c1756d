"""Posterior summaries of saved sampler records."""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.metrics import adjusted_rand_score

from ..config import Config
from ..core.mixture import canonical_labels
from ..core.model import PanelDataset, StudyDesign
from ..exceptions import ValidationError
from .chain_pool_service import ChainPoolService

logger = logging.getLogger(__name__)

MIN_BF_SAMPLES = 500
DENSITY_FLOOR = float(np.finfo(float).eps)
INTERVAL = (2.5, 97.5)
BF_COLUMNS = ["process", "covariate", "transition", "neg_log10_bf"]

Edge = Tuple[int, int]


def edge_probabilities(records: Sequence[Dict[str, Any]], p: int) -> Dict[Edge, float]:
    """Posterior inclusion frequency of every process pair (zero-based keys)."""
    counts = {edge: 0 for edge in itertools.combinations(range(p), 2)}
    for record in records:
        for a, b in record["g0_edges"]:
            counts[(a - 1, b - 1)] += 1
    return {edge: count / len(records) for edge, count in counts.items()}


def median_graph(probabilities: Dict[Edge, float]) -> List[Edge]:
    """Edges whose inclusion probability is strictly above one half."""
    return sorted(edge for edge, prob in probabilities.items() if prob > 0.5)


def partitions_matrix(records: Sequence[Dict[str, Any]]) -> np.ndarray:
    """(T, N) zero-based allocations of every saved iteration."""
    return np.array([np.asarray(record["c"], dtype=int) - 1 for record in records])


def coclustering_matrix(partitions: np.ndarray) -> np.ndarray:
    """Average of the pairwise same-cluster indicators over iterations."""
    partitions = np.atleast_2d(partitions)
    total = np.zeros((partitions.shape[1], partitions.shape[1]))
    for c in partitions:
        total += c[:, None] == c[None, :]
    return total / partitions.shape[0]


def binder_loss(partition: np.ndarray, coclustering: np.ndarray) -> float:
    """Sum over pairs i < j of |1[c_i = c_j] - P(i ~ j)| (equal costs)."""
    partition = np.asarray(partition)
    same = (partition[:, None] == partition[None, :]).astype(float)
    upper = np.triu_indices(partition.size, k=1)
    return float(np.sum(np.abs(same[upper] - coclustering[upper])))


def binder_partition(
    partitions: np.ndarray, coclustering: np.ndarray
) -> Tuple[np.ndarray, float, int]:
    """Sampled partition with the smallest Binder loss; ties go to the earliest.

    Returns:
        (canonical partition, loss, index of the chosen iteration)
    """
    partitions = np.atleast_2d(partitions)
    if partitions.shape[0] == 0:
        raise ValidationError("at least one sampled partition is required")
    losses = np.array([binder_loss(c, coclustering) for c in partitions])
    best = int(np.argmin(losses))
    return canonical_labels(partitions[best]), float(losses[best]), best


def partition_entropy(partition: Sequence[int]) -> float:
    """Shannon entropy of the cluster proportions."""
    _, sizes = np.unique(np.asarray(partition), return_counts=True)
    return float(stats.entropy(sizes))


def count_table(values: Sequence[int]) -> Dict[int, float]:
    """Relative frequency of each observed value, in increasing order."""
    uniques, counts = np.unique(np.asarray(values), return_counts=True)
    return {int(v): float(c) / len(values) for v, c in zip(uniques, counts)}


def table_mode(table: Dict[int, float]) -> int:
    return max(table, key=lambda value: (table[value], -value))


def savage_dickey_bf(
    samples: Sequence[float],
    prior_sd: float = 1.0,
    method: str = "kde",
    min_samples: int = MIN_BF_SAMPLES,
) -> Tuple[float, float]:
    """Bayes factor of beta = 0 against beta != 0 as a density ratio at 0.

    Args:
        samples: posterior draws of one coefficient
        prior_sd: standard deviation of its N(0, prior_sd^2) prior
        method: ``"kde"`` (Gaussian kernel, Silverman bandwidth) or
            ``"normal"`` (normal approximation to the posterior)
        min_samples: minimum number of draws

    Returns:
        (BF, -log10 BF)

    Raises:
        ValidationError: too few draws or zero posterior variance
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size < min_samples:
        raise ValidationError(
            f"at least {min_samples} posterior draws are required, "
            f"got {samples.size}"
        )
    sd = float(np.std(samples, ddof=1))
    if not sd > 0:
        raise ValidationError("posterior draws have zero variance")
    if method == "kde":
        kde = stats.gaussian_kde(samples, bw_method="silverman")
        posterior_at_zero = float(kde(0.0)[0])
    elif method == "normal":
        posterior_at_zero = float(stats.norm.pdf(0.0, loc=samples.mean(), scale=sd))
    else:
        raise ValidationError(f"unknown Bayes factor method {method!r}")
    prior_at_zero = float(stats.norm.pdf(0.0, scale=prior_sd))
    bf = max(posterior_at_zero, DENSITY_FLOOR) / prior_at_zero
    return bf, float(-np.log10(bf))


def adjusted_rand(partition: Sequence[int], truth: Sequence[int]) -> float:
    return float(adjusted_rand_score(np.asarray(truth), np.asarray(partition)))


def _interval(values: np.ndarray, axis: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = np.percentile(values, INTERVAL, axis=axis)
    return lo, hi


@dataclass
class SummaryReport:
    """Every summary written by ``summarize``."""
    summary: Dict[str, Any]
    edge_probs: pd.DataFrame
    bf_table: pd.DataFrame
    coclustering: pd.DataFrame
    phi_by_cluster: pd.DataFrame
    partition: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


class PosteriorService:
    """Service computing posterior summaries from saved records."""

    def __init__(
        self, design: StudyDesign, prior_sd: float = 1.0, bf_method: str = "kde"
    ):
        self.design = design
        self.prior_sd = prior_sd
        self.bf_method = bf_method

    def bf_table(self, records: Sequence[Dict[str, Any]]) -> pd.DataFrame:
        """-log10 BF per (process, covariate, transition) for beta and gamma."""
        rows = []
        for h, spec in enumerate(self.design.processes):
            labels = self.design.transition_labels(h)
            blocks = (("beta", spec.covariates), ("gamma", spec.tv_covariates))
            for key, names in blocks:
                if not names:
                    continue
                draws = np.array([record[key][h] for record in records], dtype=float)
                for j, name in enumerate(names):
                    for k, label in enumerate(labels):
                        try:
                            _, value = savage_dickey_bf(
                                draws[:, j, k], self.prior_sd, self.bf_method
                            )
                        except ValidationError as e:
                            logger.warning(
                                f"Bayes factor for {spec.name}/{name}/{label} "
                                f"skipped: {e}"
                            )
                            value = float("nan")
                        rows.append((spec.name, name, label, value))
        return pd.DataFrame(rows, columns=BF_COLUMNS)

    def cluster_average_phi(
        self, records: Sequence[Dict[str, Any]], partition: np.ndarray
    ) -> pd.DataFrame:
        """Per cluster: posterior mean and 95% interval of the within-cluster
        average of subject log-rates phi_i = phi*_{c_i}."""
        partition = np.asarray(partition)
        clusters = np.unique(partition)
        averages = np.empty((len(records), clusters.size, self.design.dim))
        for t, record in enumerate(records):
            phi_star = np.asarray(record["phi_star"], dtype=float)
            subject_phi = phi_star[np.asarray(record["c"], dtype=int) - 1]
            for k, cluster in enumerate(clusters):
                averages[t, k] = subject_phi[partition == cluster].mean(axis=0)
        sizes = [int(np.sum(partition == cluster)) for cluster in clusters]
        return self._phi_frame(averages, sizes)

    def _phi_frame(self, draws: np.ndarray, sizes: List[int]) -> pd.DataFrame:
        """Frame of mean/lower/upper from (T, K, D) cluster-level draws."""
        mean = draws.mean(axis=0)
        lo, hi = _interval(draws)
        labels = self.design.rate_labels()
        rows = []
        for k, size in enumerate(sizes):
            for index, label in enumerate(labels):
                process, transition = label.split(":")
                rows.append((
                    k + 1, size, process, transition,
                    mean[k, index], lo[k, index], hi[k, index],
                ))
        columns = ["cluster", "size", "process", "transition", "mean", "lower", "upper"]
        return pd.DataFrame(rows, columns=columns)

    def cluster_conditional_rerun(
        self,
        config: Config,
        dataset: PanelDataset,
        partition: Sequence[int],
        n_chains: int = 1,
    ) -> pd.DataFrame:
        """Re-run the sampler with allocations frozen to ``partition``."""
        partition = canonical_labels(partition)
        n_clusters = int(partition.max()) + 1
        logger.info(f"Re-running with the partition fixed to {n_clusters} cluster(s)")
        pool = ChainPoolService(config, dataset)
        chains = pool.run(n_chains, fixed_partition=partition)
        records = [record for chain in chains for record in chain.records]
        if not records:
            raise ValidationError("no saved iterations in the fixed-partition run")
        draws = np.array([record["phi_star"] for record in records], dtype=float)
        sizes = np.bincount(partition).tolist()
        return self._phi_frame(draws, sizes)

    def coverage(
        self, records: Sequence[Dict[str, Any]], truth: Dict[str, Any]
    ) -> Dict[str, Any]:
        """Whether each true beta/gamma entry lies inside its 95% interval."""
        out: Dict[str, Any] = {}
        for key in ("beta", "gamma"):
            flags = []
            for h in range(self.design.p):
                draws = np.array([record[key][h] for record in records], dtype=float)
                true = np.asarray(truth[key][h], dtype=float)
                if true.size == 0:
                    flags.append([])
                    continue
                lo, hi = _interval(draws)
                flags.append(((lo <= true) & (true <= hi)).tolist())
            out[key] = flags
        return out

    def partition_summary(self, records: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
        """Clustering statistics compared across prior settings."""
        if not records:
            raise ValidationError("no saved iterations")
        partitions = partitions_matrix(records)
        partition, _, _ = binder_partition(partitions, coclustering_matrix(partitions))
        entropies = np.array([partition_entropy(c) for c in partitions])
        entropy_lo, entropy_hi = _interval(entropies)
        return {
            "mode_K_N": table_mode(count_table([record["K_N"] for record in records])),
            "mode_M": table_mode(count_table([record["M"] for record in records])),
            "binder_clusters": int(partition.max()) + 1,
            "entropy_lo": float(entropy_lo),
            "entropy_hi": float(entropy_hi),
        }

    def summarize(
        self,
        records: Sequence[Dict[str, Any]],
        subject_ids: Optional[Sequence[str]] = None,
        truth: Optional[Dict[str, Any]] = None,
    ) -> SummaryReport:
        if not records:
            raise ValidationError("no saved iterations")
        design = self.design
        probs = edge_probabilities(records, design.p)
        names = [spec.name for spec in design.processes]
        partitions = partitions_matrix(records)
        coclustering = coclustering_matrix(partitions)
        partition, loss, index = binder_partition(partitions, coclustering)
        entropies = np.array([partition_entropy(c) for c in partitions])
        k_table = count_table([record["K_N"] for record in records])
        m_table = count_table([record["M"] for record in records])
        n_clusters = int(partition.max()) + 1
        entropy_lo, entropy_hi = _interval(entropies)

        summary: Dict[str, Any] = {
            "n_saved": len(records),
            "edge_probabilities": [
                {"edge": [names[a], names[b]], "probability": prob}
                for (a, b), prob in sorted(probs.items())
            ],
            "median_graph": [[names[a], names[b]] for a, b in median_graph(probs)],
            "binder_partition": (partition + 1).tolist(),
            "binder_loss": loss,
            "binder_iteration": int(records[index]["iter"]),
            "binder_clusters": n_clusters,
            "entropy": {
                "binder": partition_entropy(partition),
                "mean": float(entropies.mean()),
                "lower": float(entropy_lo),
                "upper": float(entropy_hi),
            },
            "K_N": {
                "table": {str(k): v for k, v in k_table.items()},
                "mode": table_mode(k_table),
            },
            "M": {
                "table": {str(k): v for k, v in m_table.items()},
                "mode": table_mode(m_table),
            },
            "triple": [table_mode(k_table), table_mode(m_table), n_clusters],
        }
        if truth is not None:
            truth_partition = np.asarray(truth["allocations"], dtype=int)
            summary["adjusted_rand"] = adjusted_rand(partition, truth_partition)
            summary["coverage"] = self.coverage(records, truth)

        if subject_ids is not None:
            labels = list(subject_ids)
        else:
            labels = [str(i + 1) for i in range(partition.size)]
        edge_frame = pd.DataFrame(
            [(names[a], names[b], prob) for (a, b), prob in sorted(probs.items())],
            columns=["process_a", "process_b", "probability"],
        )
        coclustering_frame = pd.DataFrame(coclustering, columns=labels)
        coclustering_frame.insert(0, "subject_id", labels)
        return SummaryReport(
            summary=summary,
            edge_probs=edge_frame,
            bf_table=self.bf_table(records),
            coclustering=coclustering_frame,
            phi_by_cluster=self.cluster_average_phi(records, partition),
            partition=partition,
        )
