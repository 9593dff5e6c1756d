import os
import unittest

import numpy as np
import pytest

from sums.services.chain_pool_service import ChainPoolService
from sums.services.posterior_service import PosteriorService
from sums.services.simulation_service import SimulationService, sm4_scenario

from .factories import fast_config


@pytest.mark.slow
@unittest.skipUnless(
    os.getenv("SUMS_RUN_SLOW") == "1", "set SUMS_RUN_SLOW=1 to run the recovery study"
)
class TestSm4Recovery(unittest.TestCase):
    """25000 iterations, the last 5000 kept with thinning 2."""

    def test_recovery(self):
        rng = np.random.default_rng(20210101)
        result = SimulationService(sm4_scenario()).gen_panel(rng)
        config = fast_config(
            overrides={
                "mixture": {"Lambda": 0.01, "gamma_s": 0.1},
                "graph": {"n_mc": 1000},
                "data": {"standardize_covariates": False},
            },
            n_iter=25000,
            burnin=20000,
            thin=2,
            adapt_burnin=1000,
            seed=20210101,
            progress_every=1000,
        )
        chains = ChainPoolService(config, result.dataset).run(1)
        records = chains[0].records
        posterior = PosteriorService(result.dataset.design)
        report = posterior.summarize(records, truth=result.truth)

        summary = report.summary
        self.assertEqual(summary["K_N"]["mode"], 2)
        self.assertGreaterEqual(summary["adjusted_rand"], 0.8)
        self.assertEqual(summary["coverage"]["beta"][0], [[True, True], [True, True]])
        self.assertEqual(summary["coverage"]["gamma"][0], [[True, True], [True, True]])
