"""Doubly robust value estimation with optional two-fold cross-fitting.

J(f, g) = E_{nu_O}[sum_a g(a, o)]
          + E[f(A, O-) / (1 - gamma) * ({R + gamma sum_a' g(a', O+)} pi_e(A|O) - g(A, O))]

The estimate stays consistent when either the weight bridge f or the value
bridge g is correct.
"""

import math

import numpy as np

from .core import ValidationError, ValueEstimate
from .features import one_hot_features
from .linear import fit_value_bridge_linear, fit_weight_bridge_linear


def dr_contribution(f, g, data, target_policy, gamma=None):
    """Per-tuple correction terms (the nu_O term is added once at aggregation)."""
    gamma = data.gamma if gamma is None else gamma
    if not 0 <= gamma < 1:
        raise ValidationError("gamma must lie in [0, 1)")
    pi = target_policy.prob_of(data.a, data.o)
    g_next = g.all_actions(data.o_plus).sum(axis=1)
    td = (data.r + gamma * g_next) * pi - g(data.a, data.o)
    return f(data.a, data.o_minus) * td / (1 - gamma)


def initial_term(g, data):
    return float(data.init_mean(g.all_actions(data.init_obs).sum(axis=1)))


def dr_estimate(f, g, data, target_policy, gamma=None, method="dr"):
    if data.n == 0:
        raise ValidationError("empty dataset")
    corr = dr_contribution(f, g, data, target_policy, gamma)
    base = initial_term(g, data)
    full = base + corr
    if data.weights is not None or data.n < 2:
        se = 0.0
    else:
        se = float(full.std(ddof=1) / math.sqrt(data.n))
    return ValueEstimate(base + float(data.mean(corr)), method, data.n, se, extra={"initial_term": base})


def linear_fit_procedure(target_policy, fm=None, reparam=False, ridge=None):
    """Fold fit returning (weight bridge, value bridge) from the closed-form linear estimators."""

    def fit(data):
        feat = fm if fm is not None else one_hot_features(data.num_actions, data.num_obs)
        f = fit_weight_bridge_linear(data, target_policy, feat, ridge=ridge)
        g = fit_value_bridge_linear(data, target_policy, feat, reparam=reparam, ridge=ridge)
        return f, g

    return fit


def split_folds(n, split_seed):
    """Shuffled split into sizes ceil(n/2) and floor(n/2)."""
    perm = np.random.default_rng(split_seed).permutation(n)
    half = (n + 1) // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def cross_fit_dr(data, fit_procedure, split_seed, target_policy, gamma=None):
    """Fit bridges on each half, evaluate on the other half, average 0.5 / 0.5."""
    if data.n < 4:
        raise ValidationError("cross-fitting needs at least 4 tuples")
    folds = split_folds(data.n, split_seed)
    parts = [data.subset(idx) for idx in folds]
    fits = []
    for k, part in enumerate(parts):
        try:
            fits.append(fit_procedure(part))
        except Exception as exc:  # annotate which fold failed
            raise type(exc)(f"fold {k + 1} fit failed: {exc}") from exc
    e1 = dr_estimate(*fits[1], parts[0], target_policy, gamma)
    e2 = dr_estimate(*fits[0], parts[1], target_policy, gamma)
    est = 0.5 * (e1.estimate + e2.estimate)
    se = 0.5 * math.sqrt(e1.std_error**2 + e2.std_error**2)
    return ValueEstimate(est, "dr_crossfit", data.n, se,
                         extra={"fold_estimates": [e1.estimate, e2.estimate],
                                "fold_sizes": [parts[0].n, parts[1].n]})
