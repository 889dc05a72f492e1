"""Hierarchical Bayesian attribution of airline delay causes.

The package covers the full pipeline: panel ingestion and filtering,
airport clustering, a three-level Beta-Binomial logit model with a
pandemic shock-isolation layer, a self-contained no-U-turn sampler,
convergence diagnostics, synthetic-panel generation, and cross-epoch
reporting.  See the ``airdelay`` command-line entry point for the
file-based pipeline.
"""

__version__ = "0.1.0"
