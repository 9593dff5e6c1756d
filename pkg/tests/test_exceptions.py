import unittest

from sums.exceptions import (
    ChainAbortedError,
    ConfigError,
    ConvergenceError,
    DataValidationError,
    GraphStructureError,
    NormalizingConstantError,
    NumericalError,
    RateOverflowError,
    SumsError,
    ValidationError,
    exit_code_for,
)


class TestExitCodes(unittest.TestCase):

    def test_mapping(self):
        self.assertEqual(exit_code_for(ConfigError("x")), 2)
        self.assertEqual(exit_code_for(DataValidationError("x")), 3)
        self.assertEqual(exit_code_for(GraphStructureError("x")), 3)
        self.assertEqual(exit_code_for(RateOverflowError("x", 800.0)), 4)
        self.assertEqual(exit_code_for(ConvergenceError("x", 10, 0.1)), 4)
        self.assertEqual(exit_code_for(NormalizingConstantError("x")), 4)
        aborted = ChainAbortedError("x", chain_id=0, iteration=3)
        self.assertEqual(exit_code_for(aborted), 4)
        self.assertEqual(exit_code_for(RuntimeError("x")), 1)

    def test_hierarchy(self):
        self.assertTrue(issubclass(ValidationError, ValueError))
        self.assertTrue(issubclass(NumericalError, ArithmeticError))
        for error_type in (
            ConfigError,
            DataValidationError,
            ValidationError,
            NumericalError,
        ):
            self.assertTrue(issubclass(error_type, SumsError))

    def test_attributes(self):
        error = RateOverflowError("too big", 712.5)
        self.assertEqual(error.predictor, 712.5)
        aborted = ChainAbortedError(
            "stop", chain_id=1, iteration=42, dump_path="/tmp/x.json"
        )
        self.assertEqual(
            (aborted.chain_id, aborted.iteration, aborted.dump_path),
            (1, 42, "/tmp/x.json"),
        )
