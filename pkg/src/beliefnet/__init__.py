"""Belief-state tracking and forecasting for partially observed multi-agent scenes.

Subpackages: ``autodiff`` (float64 tape), ``sim`` (trajectory generators and
loaders), ``model`` (graph variational recurrent model and baselines). Top-level
modules cover rendering, step data, training, evaluation and the CLI.
"""

__version__ = "0.1.0"
