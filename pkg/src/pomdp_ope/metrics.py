"""Relative error summaries over replications."""

import numpy as np

from .core import ValidationError


def _ratios(estimates, truth):
    if truth == 0:
        raise ValidationError("truth must be nonzero")
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ValidationError("no estimates")
    return est / truth


def relative_bias(estimates, truth):
    """|mean(estimate / truth) - 1|."""
    return float(abs(_ratios(estimates, truth).mean() - 1.0))


def relative_mse(estimates, truth):
    """mean(((estimate - truth) / truth)^2)."""
    return float(((_ratios(estimates, truth) - 1.0) ** 2).mean())


def ci_halfwidth(values):
    """Two standard errors of the mean across replications (0 for a single value)."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(2.0 * v.std(ddof=1) / np.sqrt(v.size))
