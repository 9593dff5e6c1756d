"""Logging service for the SUMS engine."""

import logging
import logging.handlers
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..config import LoggingConfig

SIZE_UNITS = {"KB": 1024, "MB": 1024 ** 2, "GB": 1024 ** 3}


class LoggingService:
    """Service for configuring run logs and emitting chain events."""

    def __init__(self, config: LoggingConfig, run_dir: str = ""):
        """Initialize logging service.

        Args:
            config: logging section of the configuration
            run_dir: output directory of the current command; a relative
                ``config.file`` is placed inside it
        """
        self.config = config
        self.run_dir = run_dir
        self.log_file = self._resolve_file()
        self._setup_logging()

    def _resolve_file(self) -> str:
        if not self.config.file:
            return ""
        path = Path(self.config.file)
        if self.run_dir and not path.is_absolute():
            path = Path(self.run_dir) / path
        return str(path)

    def _setup_logging(self) -> None:
        """Setup logging configuration."""
        # Production runs (batch schedulers, containers) log to stderr only
        is_production = os.getenv("SUMS_ENV") == "production"

        handlers: List[logging.Handler] = [logging.StreamHandler()]
        if self.log_file and not is_production:
            log_file_path = Path(self.log_file)
            log_file_path.parent.mkdir(parents=True, exist_ok=True)
            handlers.append(logging.handlers.RotatingFileHandler(
                filename=self.log_file,
                maxBytes=self._parse_size(self.config.max_size),
                backupCount=self.config.backup_count
            ))

        logging.basicConfig(
            level=getattr(logging, self.config.level.upper(), logging.INFO),
            format=self.config.format,
            handlers=handlers,
            force=True
        )

        # Set specific loggers
        logging.getLogger("numexpr").setLevel(logging.WARNING)
        logging.getLogger("fsspec").setLevel(logging.WARNING)

    def _parse_size(self, size_str: str) -> int:
        """Parse size string (e.g., '10MB') to bytes."""
        size_str = size_str.strip().upper()
        for unit, factor in SIZE_UNITS.items():
            if size_str.endswith(unit):
                return int(size_str[:-2]) * factor
        return int(size_str)

    def log_chain_event(
        self, chain_id: int, event: str, success: bool = True, details: str = ""
    ) -> None:
        """Log a chain lifecycle event (start, finish, abort)."""
        status = "OK" if success else "FAILED"
        message = f"CHAIN_EVENT: chain {chain_id} - {event.upper()} - {status}"
        if details:
            message += f" - {details}"

        if success:
            logging.info(message)
        else:
            logging.error(message)

    def log_progress(
        self,
        chain_id: int,
        iteration: int,
        n_iter: int,
        k_n: int,
        n_components: int,
        n_edges: int,
        log_lik: float,
        acceptance: Optional[Dict[str, Any]] = None,
    ) -> None:
        """Log a periodic progress line for a running chain.

        Args:
            acceptance: rates as returned by ``SamplerService.acceptance_rates``
        """
        message = (f"PROGRESS: chain {chain_id} - iter {iteration}/{n_iter} - "
                   f"K_N={k_n} M={n_components} |E0|={n_edges} loglik={log_lik:.3f}")
        if acceptance:
            message += f" - accept {format_acceptance(acceptance)}"
        logging.info(message)


def format_acceptance(acceptance: Dict[str, Any]) -> str:
    """One-line rendering of acceptance rates, e.g. ``phi*=0.41 graph=0.12 P1=0.23``."""
    parts = [
        f"phi*={acceptance.get('phi_star', 0.0):.2f}",
        f"graph={acceptance.get('graph', 0.0):.2f}",
    ]
    failures = acceptance.get("graph_failures", 0)
    if failures:
        parts.append(f"graph_failures={failures}")
    for name, rate in acceptance.get("beta_gamma", {}).items():
        parts.append(f"{name}={rate:.2f}")
    return " ".join(parts)
