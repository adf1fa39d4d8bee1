"""Planning toolkit for cash-constrained multi-product retailers.

Generates and reduces demand scenario trees, solves deterministic and
multi-stage stochastic MILP inventory models with and without order-based
loans, and computes the standard evaluation metrics (VSS, EVPI, stability,
loan profit gaps).
"""

from .core import InstanceConfig, Trajectory, simulate, validate

__version__ = "0.1.0"

__all__ = ["InstanceConfig", "Trajectory", "simulate", "validate", "__version__"]
