"""Hybrid physical + recurrent residual models for vehicle motion prediction.

Subpackages:
    sim      -- ground-truth simulators (4-DOF ship, quadcopter) and environment
    data     -- episode persistence, splitting, normalization, sample extraction
    models   -- physical one-step predictors, the recurrent corrector, hybrids
    metrics  -- state/trajectory error metrics and the interpretability sweep
    cli      -- command-line entry points (simulate / train / evaluate / sweep)
"""

__version__ = "0.1.0"
