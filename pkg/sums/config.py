"""Configuration management for the SUMS engine."""

import copy
import dataclasses
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv

from .exceptions import ConfigError

# Load environment variables
load_dotenv()


@dataclass
class ChainConfig:
    """Length and thinning of a single MCMC chain."""
    n_iter: int = 50000
    burnin: int = 40000
    thin: int = 2
    adapt_burnin: int = 1000
    seed: int = 20210101
    progress_every: int = 500


@dataclass
class MixtureConfig:
    """Hyperparameters of the mixture with random number of components."""
    Lambda: float = 0.01
    gamma_s: float = 0.1
    init_components: int = 3


@dataclass
class GraphConfig:
    """Process graph prior and graph-move settings."""
    eta: float = 0.1
    n_mc: int = 1000


@dataclass
class GWishartConfig:
    """G-Wishart prior on the precision matrix.

    ``nu`` and ``psi_scale`` left as ``None`` resolve to D_p + 2 and 1/nu.
    """
    nu: Optional[float] = None
    psi_scale: Optional[float] = None


@dataclass
class MeanConfig:
    """Prior on the mean of the base measure and on its scale k0."""
    m_mu: float = 0.0
    a_k0: float = 1.0
    b_k0: float = 1.0


@dataclass
class RegressionConfig:
    """Matrix-normal prior on regression coefficients (identity covariances)."""
    prior_sd: float = 1.0


@dataclass
class ProposalConfig:
    """Random-walk proposal settings."""
    phi_star_var: float = 0.25
    initial_var: float = 0.01
    scale: float = 2.38
    jitter: float = 1e-6


@dataclass
class DataConfig:
    """Ingestion settings."""
    standardize_covariates: bool = True


@dataclass
class LoggingConfig:
    """Logging configuration."""
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    file: str = ""
    max_size: str = "10MB"
    backup_count: int = 5


@dataclass
class PoolConfig:
    """Worker pool used to run several chains."""
    max_workers: int = 4


SECTIONS = {
    "chain": ChainConfig,
    "mixture": MixtureConfig,
    "graph": GraphConfig,
    "gwishart": GWishartConfig,
    "mean": MeanConfig,
    "regression": RegressionConfig,
    "proposal": ProposalConfig,
    "data": DataConfig,
    "logging": LoggingConfig,
    "pool": PoolConfig,
}


class Config:
    """Main configuration class."""

    chain: ChainConfig
    mixture: MixtureConfig
    graph: GraphConfig
    gwishart: GWishartConfig
    mean: MeanConfig
    regression: RegressionConfig
    proposal: ProposalConfig
    data: DataConfig
    logging: LoggingConfig
    pool: PoolConfig

    def __init__(
        self,
        config_path: Optional[str] = None,
        config_data: Optional[Dict[str, Any]] = None,
    ):
        """Initialize configuration from a YAML file or an in-memory mapping.

        Args:
            config_path: YAML file to read; ``None`` uses the built-in defaults
            config_data: Already parsed mapping (takes precedence over the file)
        """
        self.config_path = config_path
        if config_data is not None:
            self._config_data = copy.deepcopy(config_data)
        else:
            self._config_data = self._load_config()
        self._setup_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from YAML file."""
        if self.config_path is None:
            return {}
        try:
            with open(self.config_path, "r", encoding="utf-8") as file:
                config_data = yaml.safe_load(file)
                return config_data or {}
        except FileNotFoundError:
            raise ConfigError(f"Configuration file {self.config_path} not found")
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML configuration: {e}")

    def _setup_config(self) -> None:
        """Setup configuration objects."""
        if not isinstance(self._config_data, dict):
            raise ConfigError("Configuration root must be a mapping of sections")

        unknown_sections = sorted(set(self._config_data) - set(SECTIONS))
        if unknown_sections:
            raise ConfigError(
                f"Unknown configuration sections: {', '.join(unknown_sections)}"
            )

        for name, section_type in SECTIONS.items():
            values = self._config_data.get(name) or {}
            if not isinstance(values, dict):
                raise ConfigError(f"Section '{name}' must be a mapping")
            setattr(self, name, self._build_section(name, section_type, values))

        self._validate()

    def _build_section(
        self, name: str, section_type: Any, values: Dict[str, Any]
    ) -> Any:
        """Instantiate one section dataclass, rejecting unknown keys."""
        fields = {field.name: field for field in dataclasses.fields(section_type)}
        unknown = sorted(set(values) - set(fields))
        if unknown:
            raise ConfigError(f"Unknown keys in section '{name}': {', '.join(unknown)}")

        resolved = {}
        for key, value in values.items():
            if isinstance(value, str):
                value = self._resolve_env_var(value)
            resolved[key] = self._coerce(name, key, fields[key].type, value)
        return section_type(**resolved)

    def _coerce(self, section: str, key: str, annotation: Any, value: Any) -> Any:
        """Coerce a raw YAML/env value to the annotated field type."""
        if value is None:
            if "Optional" in str(annotation):
                return None
            raise ConfigError(f"{section}.{key} may not be null")
        target = annotation
        if "Optional[float]" in str(annotation):
            target = float
        try:
            if target is bool:
                if isinstance(value, str):
                    return value.strip().lower() in ("1", "true", "yes", "on")
                return bool(value)
            if target is int:
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError("not an integer")
                return int(value)
            if target is float:
                return float(value)
            return str(value)
        except (TypeError, ValueError):
            type_name = getattr(target, "__name__", target)
            raise ConfigError(
                f"{section}.{key}: cannot interpret {value!r} as {type_name}"
            )

    def _resolve_env_var(self, value: str) -> str:
        """Resolve environment variable references in configuration."""
        if value.startswith("${") and value.endswith("}"):
            env_var = value[2:-1]
            return os.getenv(env_var, "")
        return value

    def _validate(self) -> None:
        """Check cross-field invariants."""
        chain = self.chain
        errors: List[str] = []
        if chain.thin < 1:
            errors.append("chain.thin must be >= 1")
        if chain.n_iter < chain.burnin:
            errors.append("chain.n_iter must be >= chain.burnin")
        if not 0 <= chain.adapt_burnin <= chain.burnin:
            errors.append("chain.adapt_burnin must lie in [0, chain.burnin]")
        if chain.progress_every < 1:
            errors.append("chain.progress_every must be >= 1")
        if self.mixture.Lambda <= 0 or self.mixture.gamma_s <= 0:
            errors.append("mixture.Lambda and mixture.gamma_s must be positive")
        if self.mixture.init_components < 1:
            errors.append("mixture.init_components must be >= 1")
        if not 0 < self.graph.eta < 1:
            errors.append("graph.eta must lie in (0, 1)")
        if self.graph.n_mc < 100:
            errors.append("graph.n_mc must be >= 100")
        if self.gwishart.nu is not None and self.gwishart.nu <= 2:
            errors.append("gwishart.nu must be > 2")
        if self.gwishart.psi_scale is not None and self.gwishart.psi_scale <= 0:
            errors.append("gwishart.psi_scale must be positive")
        if self.mean.a_k0 <= 0 or self.mean.b_k0 <= 0:
            errors.append("mean.a_k0 and mean.b_k0 must be positive")
        if self.regression.prior_sd <= 0:
            errors.append("regression.prior_sd must be positive")
        if min(self.proposal.phi_star_var, self.proposal.initial_var,
               self.proposal.scale) <= 0 or self.proposal.jitter < 0:
            errors.append("proposal settings must be positive")
        if self.pool.max_workers < 1:
            errors.append("pool.max_workers must be >= 1")
        if errors:
            raise ConfigError("; ".join(errors))

    def resolve_nu(self, dim: int) -> float:
        """Degrees of freedom of the G-Wishart prior for a D_p-dimensional model."""
        return self.gwishart.nu if self.gwishart.nu is not None else dim + 2.0

    def resolve_psi_scale(self, dim: int) -> float:
        """Diagonal value of the G-Wishart prior matrix Psi."""
        if self.gwishart.psi_scale is not None:
            return self.gwishart.psi_scale
        return 1.0 / self.resolve_nu(dim)

    def snapshot(self) -> Dict[str, Any]:
        """Plain-dict view of every section, as stored in run manifests."""
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def with_overrides(self, section: str, **values: Any) -> "Config":
        """Copy of this configuration with some keys of one section replaced."""
        data = self.snapshot()
        if section not in data:
            raise ConfigError(f"Unknown configuration section: {section}")
        data[section].update(values)
        return Config(config_path=self.config_path, config_data=data)
