"""Command-line interface: simulate, fit, summarize, sensitivity."""

import functools
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional

import click
import numpy as np
import pandas as pd

from . import __version__
from .config import Config
from .core.model import StudyDesign
from .exceptions import ChainAbortedError, SumsError, exit_code_for
from .services.chain_pool_service import ChainPoolService
from .services.data_service import DataService, write_csv, write_json
from .services.logging_service import LoggingService
from .services.posterior_service import PosteriorService
from .services.simulation_service import PRESETS, SimulationService

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
SENSITIVITY_COLUMNS = [
    "Lambda",
    "gamma_s",
    "mode_K_N",
    "mode_M",
    "binder_clusters",
    "entropy_lo",
    "entropy_hi",
]

DATA_DIR = click.Path(exists=True, file_okay=False)
EXISTING_FILE = click.Path(exists=True, dir_okay=False)
OUT_DIR = click.Path(file_okay=False)


def handle_errors(command: Callable[..., None]) -> Callable[..., None]:
    """Report engine errors on stderr and exit with the documented code."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            command(*args, **kwargs)
        except SumsError as e:
            logger.error(f"{command.__name__} failed: {e}")
            click.echo(f"error: {e}", err=True)
            sys.exit(exit_code_for(e))

    return wrapper


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _parse_floats(value: str) -> List[float]:
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise click.BadParameter(
            f"expected a comma-separated list of numbers, got {value!r}"
        )


@click.group()
@click.version_option(__version__, prog_name="sums")
def cli() -> None:
    """Joint Bayesian clustering of panel-observed multi-state processes."""


@cli.command()
@click.option(
    "--preset", type=click.Choice(sorted(PRESETS)), default="sm4", show_default=True
)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=OUT_DIR)
@click.option(
    "--n-subjects", type=click.IntRange(min=1), default=200, show_default=True
)
@click.option(
    "--missing-rate",
    type=click.FloatRange(0.0, 1.0),
    default=0.0,
    show_default=True,
)
@handle_errors
def simulate(
    preset: str, seed: int, out: str, n_subjects: int, missing_rate: float
) -> None:
    """Generate a synthetic study with known truth."""
    os.makedirs(out, exist_ok=True)
    LoggingService(Config().logging, run_dir=out)
    scenario = PRESETS[preset](n_subjects=n_subjects, missing_rate=missing_rate)
    result = SimulationService(scenario).gen_panel(np.random.default_rng(seed))
    DataService().write_dataset(result.dataset, out)
    truth = dict(
        result.truth, preset=preset, seed=seed, design=scenario.design.to_dict()
    )
    write_json(truth, os.path.join(out, "truth.json"))
    click.echo(f"wrote {n_subjects} subjects to {out}")


@cli.command()
@click.option("--data", required=True, type=DATA_DIR)
@click.option("--config", "config_path", type=EXISTING_FILE, default=None)
@click.option("--out", required=True, type=OUT_DIR)
@click.option("--chains", type=click.IntRange(min=1), default=1, show_default=True)
@handle_errors
def fit(data: str, config_path: Optional[str], out: str, chains: int) -> None:
    """Run the sampler and write chain_<k>/samples.jsonl plus manifest.json."""
    config = Config(config_path)
    os.makedirs(out, exist_ok=True)
    logging_service = LoggingService(config.logging, run_dir=out)
    data_service = DataService(config.data)
    dataset = data_service.load_dataset(data)

    manifest: Dict[str, Any] = {
        "version": __version__,
        "command": "fit",
        "status": "running",
        "seed": config.chain.seed,
        "n_chains": chains,
        "config": config.snapshot(),
        "inputs": data_service.input_digests(data),
        "design": dataset.design.to_dict(),
        "subject_ids": dataset.subject_ids(),
        "covariate_transform": data_service.transform,
        "started_at": _utc_now(),
    }
    manifest_path = os.path.join(out, MANIFEST_FILE)
    write_json(manifest, manifest_path, atomic=True)

    started = time.perf_counter()
    pool = ChainPoolService(config, dataset, logging_service)
    try:
        results = pool.run(chains, out_dir=out)
    except ChainAbortedError as e:
        manifest.update(
            status="aborted",
            error=str(e),
            iteration=e.iteration,
            state_dump=e.dump_path,
        )
        write_json(manifest, manifest_path, atomic=True)
        raise

    manifest.update(
        status="complete",
        finished_at=_utc_now(),
        elapsed_seconds=time.perf_counter() - started,
        chains=[
            {
                "chain": chain.chain_id,
                "saved": len(chain.records),
                "elapsed_seconds": chain.elapsed,
                "acceptance": chain.acceptance,
            }
            for chain in results
        ],
    )
    write_json(manifest, manifest_path, atomic=True)
    n_saved = sum(len(chain.records) for chain in results)
    click.echo(f"saved {n_saved} iterations to {out}")


@cli.command()
@click.option("--samples", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=OUT_DIR)
@click.option(
    "--bf-method",
    type=click.Choice(["kde", "normal"]),
    default="kde",
    show_default=True,
)
@click.option(
    "--data",
    type=DATA_DIR,
    default=None,
    help="Panel data for the fixed-partition re-run.",
)
@click.option(
    "--config",
    "config_path",
    type=EXISTING_FILE,
    default=None,
    help="Configuration for the fixed-partition re-run.",
)
@click.option("--truth", type=EXISTING_FILE, default=None)
@handle_errors
def summarize(
    samples: str,
    out: str,
    bf_method: str,
    data: Optional[str],
    config_path: Optional[str],
    truth: Optional[str],
) -> None:
    """Posterior summaries: graph, partition, entropy, Bayes factors, rates."""
    os.makedirs(out, exist_ok=True)
    data_service = DataService()
    records = data_service.read_samples(samples)
    manifest = data_service.read_manifest(samples)
    run_config = Config(config_data=manifest["config"])
    LoggingService(run_config.logging, run_dir=out)

    design = StudyDesign.from_dict(manifest["design"])
    truth_data = None
    if truth:
        with open(truth, "r", encoding="utf-8") as handle:
            truth_data = json.load(handle)

    service = PosteriorService(
        design, prior_sd=run_config.regression.prior_sd, bf_method=bf_method
    )
    report = service.summarize(
        records, subject_ids=manifest.get("subject_ids"), truth=truth_data
    )
    report.summary["phi_source"] = "cluster_average"
    if data is not None:
        rerun_config = Config(config_path) if config_path else run_config
        dataset = DataService(rerun_config.data).load_dataset(data)
        report.phi_by_cluster = service.cluster_conditional_rerun(
            rerun_config, dataset, report.partition
        )
        report.summary["phi_source"] = "fixed_partition_rerun"

    write_json(report.summary, os.path.join(out, "summary.json"))
    write_csv(report.edge_probs, os.path.join(out, "edge_probs.csv"))
    write_csv(report.bf_table, os.path.join(out, "bf_table.csv"))
    write_csv(report.coclustering, os.path.join(out, "coclustering.csv"))
    write_csv(report.phi_by_cluster, os.path.join(out, "phi_by_cluster.csv"))
    click.echo(f"summarised {len(records)} iterations into {out}")


@cli.command()
@click.option("--data", required=True, type=DATA_DIR)
@click.option("--config", "config_path", type=EXISTING_FILE, default=None)
@click.option("--out", required=True, type=OUT_DIR)
@click.option("--lambdas", required=True, help="Comma-separated Lambda values.")
@click.option("--gammas", required=True, help="Comma-separated gamma_s values.")
@click.option("--chains", type=click.IntRange(min=1), default=1, show_default=True)
@handle_errors
def sensitivity(
    data: str,
    config_path: Optional[str],
    out: str,
    lambdas: str,
    gammas: str,
    chains: int,
) -> None:
    """Fit every (Lambda, gamma_s) pair and tabulate the clustering summaries."""
    config = Config(config_path)
    os.makedirs(out, exist_ok=True)
    LoggingService(config.logging, run_dir=out)
    dataset = DataService(config.data).load_dataset(data)
    rows = []
    for lam in _parse_floats(lambdas):
        for gam in _parse_floats(gammas):
            grid_config = config.with_overrides("mixture", Lambda=lam, gamma_s=gam)
            logger.info(f"Sensitivity run Lambda={lam} gamma_s={gam}")
            results = ChainPoolService(grid_config, dataset).run(chains)
            records = [record for chain in results for record in chain.records]
            service = PosteriorService(
                dataset.design, prior_sd=grid_config.regression.prior_sd
            )
            stats = service.partition_summary(records)
            rows.append({"Lambda": lam, "gamma_s": gam, **stats})
    frame = pd.DataFrame(rows, columns=SENSITIVITY_COLUMNS)
    write_csv(frame, os.path.join(out, "sensitivity.csv"))
    click.echo(f"wrote {len(rows)} grid rows to {out}")


def main() -> None:
    cli(prog_name="sums")
