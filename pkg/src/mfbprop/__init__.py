"""Mean-field Bayesian online learning for binary-weight converging networks."""

__version__ = "0.1.0"
