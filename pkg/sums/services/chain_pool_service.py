"""Worker pool running several independent MCMC chains."""

import logging
import os
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Sequence

from ..config import Config
from ..core.model import LikelihoodEngine, PanelDataset
from .cache_service import NormConstCache
from .logging_service import LoggingService
from .sampler_service import PosteriorChain, SamplerService, chain_generators

logger = logging.getLogger(__name__)


class ChainPoolService:
    """Service for running chains concurrently with independent random streams."""

    def __init__(
        self,
        config: Config,
        dataset: PanelDataset,
        logging_service: Optional[LoggingService] = None,
    ):
        """Initialize the pool.

        Args:
            config: run configuration; ``pool.max_workers`` bounds concurrency
            dataset: panel data shared read-only by every chain
            logging_service: forwarded to each chain
        """
        self.config = config
        self.dataset = dataset
        self.logging_service = logging_service
        self.engine = LikelihoodEngine(dataset)
        self.cache = NormConstCache()

    def _sampler(
        self, chain_id: int, fixed_partition: Optional[Sequence[int]] = None
    ) -> SamplerService:
        return SamplerService(
            self.config,
            self.dataset,
            chain_id=chain_id,
            cache=self.cache,
            engine=self.engine,
            logging_service=self.logging_service,
            fixed_partition=fixed_partition,
        )

    def run(
        self,
        n_chains: int,
        out_dir: str = "",
        fixed_partition: Optional[Sequence[int]] = None,
    ) -> List[PosteriorChain]:
        """Run ``n_chains`` chains and return them ordered by chain id.

        Each chain writes ``chain_<k>/samples.jsonl`` under ``out_dir`` when
        it is given. If any chain fails, the first failure (by chain id) is
        re-raised once every chain has stopped.
        """
        generators = chain_generators(self.config.chain.seed, n_chains)
        workers = min(self.config.pool.max_workers, n_chains)
        logger.info(f"Running {n_chains} chain(s) on {workers} worker(s)")

        futures: Dict[int, Future] = {}
        with ThreadPoolExecutor(max_workers=workers) as executor:
            for chain_id, rng in enumerate(generators):
                chain_dir = ""
                samples_path = ""
                if out_dir:
                    chain_dir = os.path.join(out_dir, f"chain_{chain_id}")
                    os.makedirs(chain_dir, exist_ok=True)
                    samples_path = os.path.join(chain_dir, "samples.jsonl")
                sampler = self._sampler(chain_id, fixed_partition)
                futures[chain_id] = executor.submit(
                    sampler.run_chain, rng, samples_path, chain_dir
                )

        chains = []
        errors = []
        for chain_id in sorted(futures):
            try:
                chains.append(futures[chain_id].result())
            except Exception as e:
                logger.error(f"Chain {chain_id} failed: {e}")
                errors.append(e)
        if errors:
            raise errors[0]
        return chains

    def get_stats(self) -> Dict[str, Any]:
        return {
            "max_workers": self.config.pool.max_workers,
            "cache": self.cache.get_stats(),
        }
