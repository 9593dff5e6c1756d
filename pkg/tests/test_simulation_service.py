import math
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from sums.core.model import MISSING, RegressionParams
from sums.exceptions import ValidationError
from sums.services.simulation_service import (
    SM4_BETA,
    SM4_CRUDE_RATES,
    SM4_GAMMA,
    SimScenario,
    SimulationService,
    crude_rates,
    sm4_design,
    sm4_scenario,
)

from .factories import binary_design, toy_scenario


class TestScenario(unittest.TestCase):

    def test_sm4_preset(self):
        scenario = sm4_scenario()
        self.assertEqual(scenario.n_subjects, 200)
        self.assertEqual(scenario.design.p, 3)
        self.assertEqual(scenario.design.dim, 6)
        np.testing.assert_allclose(scenario.phi_star[0], np.log(SM4_CRUDE_RATES))
        np.testing.assert_allclose(scenario.phi_star[1], np.log(SM4_CRUDE_RATES) + 1.0)
        np.testing.assert_allclose(scenario.params.beta[0], SM4_BETA)
        np.testing.assert_allclose(scenario.params.gamma[0], SM4_GAMMA)
        self.assertEqual(scenario.params.beta[1].shape, (0, 2))

    def test_design_roles(self):
        design = sm4_design()
        roles = [spec.role for spec in design.processes]
        self.assertEqual(roles, ["response", "explanatory", "explanatory"])
        self.assertEqual(design.processes[0].covariates, ("x1", "x2"))

    def test_invalid_scenarios(self):
        design = binary_design(1)
        params = RegressionParams.zeros(design)
        with self.assertRaises(ValidationError):
            SimScenario(design=design, n_subjects=5, proportions=(0.5, 0.4),
                        phi_star=np.zeros((2, 2)), params=params)
        with self.assertRaises(ValidationError):
            SimScenario(design=design, n_subjects=5, proportions=(1.0,),
                        phi_star=np.zeros((1, 3)), params=params)


class TestSimulationService(unittest.TestCase):

    def test_visit_grid(self):
        service = SimulationService(sm4_scenario())
        rng = np.random.default_rng(61)
        for _ in range(200):
            times = service.gen_times(rng)
            self.assertEqual(times[0], 0.0)
            self.assertGreaterEqual(len(times), 2)
            self.assertTrue(np.all(np.diff(times) >= 0.5))
            self.assertLessEqual(times[-1], 10.0)

    def test_same_seed_same_panel(self):
        service = SimulationService(toy_scenario(n_subjects=10))
        first = service.gen_panel(np.random.default_rng(62))
        second = service.gen_panel(np.random.default_rng(62))
        self.assertEqual(first.truth, second.truth)
        for a, b in zip(first.dataset.subjects, second.dataset.subjects):
            for sa, sb in zip(a.series, b.series):
                assert_array_equal(sa.times, sb.times)
                assert_array_equal(sa.states, sb.states)

    def test_truth_record(self):
        service = SimulationService(sm4_scenario(n_subjects=30))
        result = service.gen_panel(np.random.default_rng(63))
        truth = result.truth
        self.assertEqual(truth["n_subjects"], 30)
        self.assertEqual(len(truth["allocations"]), 30)
        self.assertTrue(set(truth["allocations"]) <= {1, 2})
        self.assertEqual(truth["beta"][0], [list(row) for row in SM4_BETA])
        self.assertEqual(result.dataset.n_subjects, 30)

    def test_missing_injection_counts(self):
        scenario = sm4_scenario(n_subjects=30, missing_rate=0.1)
        result = SimulationService(scenario).gen_panel(np.random.default_rng(64))
        for h, spec in enumerate(result.dataset.design.processes):
            masked = [
                s for s in result.dataset.subjects if s.series[h].states[0] == MISSING
            ]
            self.assertEqual(len(masked), math.ceil(0.1 * 30))
            expected = result.truth["missing_first_states"][spec.name]
            self.assertEqual(sorted(s.subject_id for s in masked), expected)

    def test_crude_rates_recover_truth(self):
        design = binary_design(1)
        scenario = SimScenario(
            design=design,
            n_subjects=300,
            proportions=(1.0,),
            phi_star=np.log([[0.4, 0.8]]),
            params=RegressionParams.zeros(design),
        )
        result = SimulationService(scenario).gen_panel(np.random.default_rng(65))
        estimate = crude_rates(result.paths, scenario.design)
        np.testing.assert_allclose(estimate, [0.4, 0.8], rtol=0.1)
