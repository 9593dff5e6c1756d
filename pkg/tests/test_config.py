import os
import tempfile
import unittest
from unittest import mock

from sums.config import Config
from sums.exceptions import ConfigError


def write_yaml(text: str) -> str:
    handle = tempfile.NamedTemporaryFile("w", suffix=".yaml", delete=False)
    handle.write(text)
    handle.close()
    return handle.name


class TestConfig(unittest.TestCase):

    def test_defaults(self):
        config = Config()
        self.assertEqual(config.chain.n_iter, 50000)
        self.assertEqual(config.chain.burnin, 40000)
        self.assertEqual(config.chain.thin, 2)
        self.assertEqual(config.mixture.Lambda, 0.01)
        self.assertEqual(config.mixture.gamma_s, 0.1)
        self.assertEqual(config.graph.eta, 0.1)
        self.assertIsNone(config.gwishart.nu)

    def test_resolve_gwishart_defaults(self):
        config = Config()
        self.assertEqual(config.resolve_nu(12), 14.0)
        self.assertAlmostEqual(config.resolve_psi_scale(12), 1.0 / 14.0)
        config = Config(config_data={"gwishart": {"nu": 5, "psi_scale": 0.5}})
        self.assertEqual(config.resolve_nu(12), 5.0)
        self.assertEqual(config.resolve_psi_scale(12), 0.5)

    def test_load_from_file(self):
        path = write_yaml(
            "chain:\n  n_iter: 100\n  burnin: 50\n  adapt_burnin: 10\n"
            "mixture:\n  Lambda: 1\n"
        )
        self.addCleanup(os.remove, path)
        config = Config(path)
        self.assertEqual(config.chain.n_iter, 100)
        self.assertIsInstance(config.mixture.Lambda, float)
        self.assertEqual(config.mixture.Lambda, 1.0)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            Config("/nonexistent/config.yaml")

    def test_invalid_yaml(self):
        path = write_yaml("chain: [unclosed\n")
        self.addCleanup(os.remove, path)
        with self.assertRaises(ConfigError):
            Config(path)

    def test_unknown_section_and_key(self):
        with self.assertRaisesRegex(
            ConfigError, "Unknown configuration sections: scheduler"
        ):
            Config(config_data={"scheduler": {}})
        with self.assertRaisesRegex(ConfigError, "n_iterations"):
            Config(config_data={"chain": {"n_iterations": 10}})

    def test_cross_field_validation(self):
        with self.assertRaisesRegex(ConfigError, "n_iter"):
            Config(
                config_data={"chain": {"n_iter": 10, "burnin": 20, "adapt_burnin": 5}}
            )
        with self.assertRaisesRegex(ConfigError, "eta"):
            Config(config_data={"graph": {"eta": 1.0}})
        with self.assertRaisesRegex(ConfigError, "thin"):
            Config(config_data={"chain": {"thin": 0}})
        with self.assertRaisesRegex(ConfigError, "nu"):
            Config(config_data={"gwishart": {"nu": 2}})

    def test_n_iter_equal_to_burnin_is_allowed(self):
        config = Config(
            config_data={"chain": {"n_iter": 20, "burnin": 20, "adapt_burnin": 5}}
        )
        self.assertEqual(config.chain.n_iter, config.chain.burnin)

    def test_type_coercion(self):
        with self.assertRaises(ConfigError):
            Config(config_data={"chain": {"n_iter": "many"}})
        with self.assertRaises(ConfigError):
            Config(config_data={"chain": {"thin": 2.5}})
        config = Config(config_data={"data": {"standardize_covariates": "false"}})
        self.assertFalse(config.data.standardize_covariates)

    @mock.patch.dict(os.environ, {"SUMS_TEST_SEED": "123"})
    def test_env_var_resolution(self):
        config = Config(config_data={"chain": {"seed": "${SUMS_TEST_SEED}"}})
        self.assertEqual(config.chain.seed, 123)

    def test_snapshot_round_trip(self):
        config = Config(config_data={"mixture": {"Lambda": 0.5}})
        copy = Config(config_data=config.snapshot())
        self.assertEqual(copy.snapshot(), config.snapshot())

    def test_with_overrides_leaves_original(self):
        config = Config()
        changed = config.with_overrides("mixture", Lambda=1.0, gamma_s=2.0)
        self.assertEqual(changed.mixture.Lambda, 1.0)
        self.assertEqual(changed.mixture.gamma_s, 2.0)
        self.assertEqual(config.mixture.Lambda, 0.01)
        with self.assertRaises(ConfigError):
            config.with_overrides("nope", a=1)

    def test_shipped_config_files_load(self):
        root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
        for name in ("config.yaml", "config-sm4.yaml"):
            config = Config(os.path.join(root, name))
            self.assertEqual(config.chain.n_iter, 50000)
        sm4 = Config(os.path.join(root, "config-sm4.yaml"))
        self.assertFalse(sm4.data.standardize_covariates)
