"""Spectral identification of the target value in a partially observable bandit.

The value is recovered from observable quantities only:

    J = sum_{a, r, o} r pi_e(a|o) Pr(r, o | a, O-) Pr(O | a, O-)^+ Pr(O)

where the pseudoinverse bridges the pre-observation O- (a proxy of the
hidden state) back to the observation marginal.
"""

from dataclasses import dataclass

import numpy as np

from .core import BanditDataset, TabularPOMDP, ValidationError
from .environments import RANK_TOL, numerical_rank

PINV_CUTOFF = 1e-10


class RankConditionError(ValidationError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class BanditProbMatrices:
    """M_O[a] (|O| x |O-|), M_RO[a] (|R| x |O| x |O-|), p_O (|O|), sorted reward support."""

    m_o: np.ndarray
    m_ro: np.ndarray
    p_o: np.ndarray
    reward_support: np.ndarray

    @property
    def num_actions(self):
        return self.m_o.shape[0]

    @property
    def num_obs(self):
        return self.m_o.shape[1]


def _reward_levels(r, bin_edges=None):
    r = np.asarray(r, dtype=float)
    if bin_edges is None:
        support, idx = np.unique(r, return_inverse=True)
        return support, idx.reshape(-1)
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValidationError("bin_edges must be strictly increasing with >= 2 entries")
    idx = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, edges.size - 2)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return mids, idx


def estimate_bandit_matrices(data: BanditDataset, smooth=0.0, bin_edges=None):
    """Plug-in conditional frequencies; ``smooth`` adds a pseudo-count to every cell."""
    if smooth < 0:
        raise ValidationError("smooth must be >= 0")
    if data.n == 0:
        raise ValidationError("empty bandit dataset")
    A, O, Om = data.num_actions, data.num_obs, data.num_preobs
    support, ridx = _reward_levels(data.r, bin_edges)
    R = support.size
    w = np.ones(data.n) if data.weights is None else data.weights
    ro = np.zeros((A, R, O, Om))
    np.add.at(ro, (data.a, ridx, data.o, data.o_minus), w)
    ro += smooth
    cell = ro.sum(axis=(1, 2))  # (a, o-)
    empty = np.argwhere(cell <= 0)
    if empty.size:
        cells = ", ".join(f"(a={a}, o-={om})" for a, om in empty)
        raise ValidationError(f"empty conditioning cells: {cells}")
    m_ro = ro / cell[:, None, None, :]
    m_o = m_ro.sum(axis=1)
    p_o = np.bincount(data.o, weights=w, minlength=O).astype(float)
    p_o = p_o / p_o.sum()
    return BanditProbMatrices(m_o, m_ro, p_o, support)


def population_bandit_matrices(model: TabularPOMDP, behavior):
    """Analytic matrices from the latent model (requires a preobs kernel)."""
    if model.preobs_kernel is None:
        raise ValidationError("model has no preobs_kernel")
    Z, Zm, nu = model.obs_kernel, model.preobs_kernel, model.init_dist
    support, ridx = np.unique(model.reward, return_inverse=True)
    ridx = ridx.reshape(model.reward.shape)
    A, O, Om, S = model.num_actions, model.num_obs, Zm.shape[1], model.num_states
    m_ro = np.zeros((A, support.size, O, Om))
    for a in range(A):
        joint = nu[:, None] * Zm * behavior.table[:, a][:, None]  # (s, o-)
        col = joint.sum(axis=0)
        post = np.divide(joint, col, out=np.zeros_like(joint), where=col > 0)  # P(s | a, o-)
        for s in range(S):
            m_ro[a, ridx[s, a]] += Z[s][:, None] * post[s][None, :]
    m_o = m_ro.sum(axis=1)
    return BanditProbMatrices(m_o, m_ro, model.obs_init_dist.copy(), support)


def pinv(mat, cutoff=PINV_CUTOFF):
    """Moore-Penrose pseudoinverse; singular values below cutoff * s_max count as zero."""
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    keep = s > cutoff * (s[0] if s.size else 0.0)
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (vt.T * inv) @ u.T


def check_rank_conditions(obj, tol=RANK_TOL, behavior=None, num_states=None):
    """Numerical ranks of the observation kernels and of each M_O[a].

    ``obj`` is a TabularPOMDP (``behavior`` then required for the per-action
    side) or BanditProbMatrices.  Without the model, |S| is unknown and the
    check passes when every M_O[a] has the same rank (``num_states`` pins it).
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    diag = {"tol": tol, "obs_rank": None, "preobs_rank": None}
    if isinstance(obj, TabularPOMDP):
        S = obj.num_states
        diag["obs_rank"] = numerical_rank(obj.obs_kernel, tol)
        if obj.preobs_kernel is not None:
            diag["preobs_rank"] = numerical_rank(obj.preobs_kernel, tol)
        mats = population_bandit_matrices(obj, behavior) if behavior is not None else None
    else:
        S = num_states
        mats = obj
    ranks = [] if mats is None else [numerical_rank(m, tol) for m in mats.m_o]
    diag["per_action_rank"] = ranks
    kernel_side = None
    if diag["obs_rank"] is not None and diag["preobs_rank"] is not None:
        kernel_side = diag["obs_rank"] == S and diag["preobs_rank"] == S
    if ranks:
        action_side = all(r == S for r in ranks) if S is not None else len(set(ranks)) == 1
    else:
        action_side = None
    if kernel_side is not None and action_side is not None:
        diag["equivalence_holds"] = kernel_side == action_side
    sides = [x for x in (kernel_side, action_side) if x is not None]
    diag["pass"] = bool(sides) and all(sides)
    return diag


def bandit_value_pseudoinverse(matrices: BanditProbMatrices, target_policy, force=False,
                               cutoff=PINV_CUTOFF, tol=RANK_TOL, num_states=None):
    diag = check_rank_conditions(matrices, tol, num_states=num_states)
    if not diag["pass"] and not force:
        raise RankConditionError("rank check failed; pass force=True to override", diag)
    pe = target_policy.table  # (O, A)
    total = 0.0
    for a in range(matrices.num_actions):
        bridge = pinv(matrices.m_o[a], cutoff) @ matrices.p_o  # weights over o-
        # sum_{r, o} r pi_e(a|o) M_RO[a](r, o, :)
        lhs = np.einsum("r,o,rom->m", matrices.reward_support, pe[:, a], matrices.m_ro[a])
        total += float(lhs @ bridge)
    return total
