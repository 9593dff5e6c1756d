"""Cache of G-Wishart normalising constants under the prior."""

import logging
from threading import Lock
from typing import Any, Callable, Dict, Tuple

from ..core.gwishart import NormConstEstimate

logger = logging.getLogger(__name__)

CacheKey = Tuple[Any, ...]


class NormConstCache:
    """In-memory cache for prior normalising constants keyed by process graph.

    The prior (nu, Psi) never changes during a run, so I_G(nu, Psi) only
    depends on the graph and is computed once per visited G0.
    """

    def __init__(self) -> None:
        self._cache: Dict[CacheKey, NormConstEstimate] = {}
        self._lock = Lock()
        self._hits = 0
        self._misses = 0

    def get(self, key: CacheKey) -> Any:
        """
        Get a cached estimate.

        Args:
            key: hashable graph key

        Returns:
            Cached estimate if present, None otherwise
        """
        with self._lock:
            value = self._cache.get(key)
            if value is None:
                self._misses += 1
            else:
                self._hits += 1
                logger.debug(f"Cache hit for graph {key}")
            return value

    def set(self, key: CacheKey, value: NormConstEstimate) -> None:
        """Store an estimate."""
        with self._lock:
            self._cache[key] = value
            logger.debug(
                f"Cached normalising constant for graph {key}: {value.log_value:.6f}"
            )

    def get_or_compute(
        self, key: CacheKey, compute: Callable[[], NormConstEstimate]
    ) -> NormConstEstimate:
        """Return the cached estimate or compute, store and return it."""
        cached = self.get(key)
        if cached is not None:
            return cached
        value = compute()
        self.set(key, value)
        return value

    def clear(self) -> None:
        """Clear all cache entries."""
        with self._lock:
            self._cache.clear()
            self._hits = self._misses = 0
            logger.info("Normalising-constant cache cleared")

    def get_stats(self) -> Dict[str, Any]:
        """
        Get cache statistics.

        Returns:
            Dictionary with cache statistics
        """
        with self._lock:
            return {
                "total_entries": len(self._cache),
                "hits": self._hits,
                "misses": self._misses,
                "keys": list(self._cache.keys())
            }
