"""SUMS - joint Bayesian clustering of panel-observed multi-state processes."""

__version__ = "0.1.0"
