"""Exception hierarchy for the SUMS engine."""

from typing import Dict, Type


class SumsError(Exception):
    """Base class for every error raised by the engine."""


class ConfigError(SumsError, ValueError):
    """Invalid or unknown configuration entry."""


class DataValidationError(SumsError, ValueError):
    """Input files do not match the expected schema or value ranges."""


class ValidationError(SumsError, ValueError):
    """Invalid domain input (rates, dimensions, graphs)."""


class GraphStructureError(ValidationError):
    """A rate-level graph outside the image of the clique expansion."""


class NumericalError(SumsError, ArithmeticError):
    """A numerical routine failed."""


class RateOverflowError(NumericalError):
    """A log-rate linear predictor left the representable range."""

    def __init__(self, message: str, predictor: float):
        super().__init__(message)
        self.predictor = predictor


class ConvergenceError(NumericalError):
    """Iterative procedure did not converge."""

    def __init__(self, message: str, iterations: int, max_change: float):
        super().__init__(message)
        self.iterations = iterations
        self.max_change = max_change


class NormalizingConstantError(NumericalError):
    """Monte Carlo normalising-constant estimate is degenerate."""


class ChainAbortedError(NumericalError):
    """A chain stopped on a numerical error; its state was dumped to disk."""

    def __init__(
        self, message: str, chain_id: int, iteration: int, dump_path: str = ""
    ):
        super().__init__(message)
        self.chain_id = chain_id
        self.iteration = iteration
        self.dump_path = dump_path


EXIT_CODES: Dict[Type[SumsError], int] = {
    ConfigError: 2,
    DataValidationError: 3,
    ValidationError: 3,
    NumericalError: 4,
}


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the documented process exit code."""
    for error_type, code in EXIT_CODES.items():
        if isinstance(error, error_type):
            return code
    return 1
