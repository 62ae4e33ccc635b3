"""Finite-sample analysis toolkit for contractive stochastic approximation.

The library evaluates a generalized smoothing envelope of half a squared
norm (a smooth Lyapunov function for sup-norm and weighted-norm
contractions), computes the drift constants and finite-sample error bounds
they induce, and validates the bounds empirically against sampled runs of
n-step TD evaluation, truncated-importance-sampling off-policy evaluation,
and Q-learning on tabular MDPs. The ``contract-sa`` CLI exposes experiment
runs (CSV + SVG reports), verification suites, bound-curve evaluation, and
envelope evaluation.
"""

from . import bounds, engine, envelope, experiments, mdp, norms, rl

__all__ = ["bounds", "engine", "envelope", "experiments", "mdp", "norms", "rl"]

__version__ = "0.1.0"
