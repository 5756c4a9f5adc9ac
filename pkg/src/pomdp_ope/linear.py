"""Closed-form linear minimax bridge estimators and the naive LSTDQ baseline.

With bridge classes linear in features, the inner maximization of the
minimax programs is solved in closed form and the outer problem reduces to
a linear system built from empirical moments.
"""

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ValidationError, ValueEstimate, NumericalError
from .features import FeatureMap
from .tabular_id import PINV_CUTOFF, pinv

VALUE = "value"
WEIGHT = "weight"


@dataclass
class BridgeFunction:
    """theta^T phi(a, o), or pi_e(a|o) theta^T phi(a, o) when ``reparam``."""

    feature_map: FeatureMap
    theta: np.ndarray
    role: str
    reparam: bool = False
    target_policy: Optional[object] = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.role not in (VALUE, WEIGHT):
            raise ValidationError(f"unknown bridge role {self.role!r}")
        if self.theta.shape != (self.feature_map.dim,):
            raise ValidationError("theta length must equal the feature dimension")
        if not np.all(np.isfinite(self.theta)):
            raise NumericalError("bridge coefficients are not finite")
        if self.reparam and (self.role != VALUE or self.target_policy is None):
            raise ValidationError("reparam is for value bridges and needs the target policy")

    def all_actions(self, obs):
        """Bridge values for every action, shape (n, A)."""
        psi = self.feature_map.block(obs)
        A, D = self.feature_map.num_actions, self.feature_map.block_dim
        vals = psi @ self.theta.reshape(A, D).T
        if self.reparam:
            vals = vals * self.target_policy.probs(obs)
        return vals

    def __call__(self, actions, obs):
        vals = self.all_actions(obs)
        return vals[np.arange(vals.shape[0]), np.asarray(actions, dtype=int)]


@dataclass
class ActionGroup:
    idx: np.ndarray
    minus: np.ndarray
    cur: np.ndarray
    plus: np.ndarray


@dataclass
class ObsFeatures:
    """Feature blocks psi(.) of O-, O, O+ split by the logged action, plus the initial observations."""

    groups: list
    init: np.ndarray


def obs_features(fm, data):
    """Evaluate the feature blocks once; reusable across target policies."""
    groups = []
    for a in range(fm.num_actions):
        idx = np.flatnonzero(data.a == a)
        groups.append(ActionGroup(idx, fm.block(data.o_minus[idx]), fm.block(data.o[idx]),
                                  fm.block(data.o_plus[idx])))
    return ObsFeatures(groups, fm.block(data.init_obs))


def _row_weights(data):
    return np.full(data.n, 1.0 / data.n) if data.weights is None else data.weights


def _blocked_expect(fm, obs, probs):
    """sum_a probs[:, a] phi(a, o), shape (n, dim); probs=None sums over actions."""
    psi = fm.block(obs)
    n = psi.shape[0]
    if probs is None:
        probs = np.ones((n, fm.num_actions))
    return (probs[:, :, None] * psi[:, None, :]).reshape(n, fm.dim)


def _solve(A, b, ridge, cutoff=PINV_CUTOFF):
    if ridge > 0:
        return np.linalg.solve(A.T @ A + ridge * np.eye(A.shape[1]), A.T @ b)
    return pinv(A, cutoff) @ b


def default_ridge(data, A, scale=1e-8):
    """Zero for tabular and population data, else scale * trace(A^T A) / dim."""
    if data.discrete or data.weights is not None:
        return 0.0
    return scale * np.trace(A.T @ A) / A.shape[1]


def _blk(a, D):
    return slice(a * D, (a + 1) * D)


def _check(data):
    if data.n == 0:
        raise ValidationError("empty dataset")
    if data.gamma is None:
        raise ValidationError("dataset has no discount factor")


def value_moments(data, target_policy, fm, reparam=False, feats=None, instrument="previous"):
    """A and b of the value-bridge moment equation A theta = b.

    The moment conditions average phi(A, Z) times the residual, with Z the
    previous observation O- (``instrument="previous"``).  ``"current"``
    uses Z = O with phi / pi_e as discriminator, the fully observed
    specialisation under which the reparametrised fit is exactly LSTDQ.
    """
    _check(data)
    feats = obs_features(fm, data) if feats is None else feats
    gamma, D, nA = data.gamma, fm.block_dim, fm.num_actions
    w = _row_weights(data)
    A = np.zeros((fm.dim, fm.dim))
    b = np.zeros(fm.dim)
    for a, grp in enumerate(feats.groups):
        idx = grp.idx
        if idx.size == 0:
            continue
        pa = target_policy.probs(data.o[idx])[:, a]
        if instrument == "previous":
            base = grp.minus * w[idx, None]
        elif instrument == "current":
            if np.any(pa <= 0):
                raise ValidationError("the current-observation instrument needs pi_e > 0")
            base = grp.cur * (w[idx] / pa)[:, None]
        else:
            raise ValidationError(f"unknown instrument {instrument!r}")
        # every residual term carries pi_e(A|O); the current-step term is
        # pi_e(A|O) psi(O) under reparam and psi(O) otherwise
        left = base * pa[:, None]
        cur_left = left if reparam else base
        A[_blk(a, D), _blk(a, D)] += cur_left.T @ grp.cur
        if reparam:
            pn = target_policy.probs(data.o_plus[idx])
            for a2 in range(nA):
                A[_blk(a, D), _blk(a2, D)] -= gamma * ((left * pn[:, a2:a2 + 1]).T @ grp.plus)
        else:
            nxt = left.T @ grp.plus
            for a2 in range(nA):
                A[_blk(a, D), _blk(a2, D)] -= gamma * nxt
        b[_blk(a, D)] = left.T @ data.r[idx]
    return A, b


def fit_value_bridge_linear(data, target_policy, fm, reparam=False, ridge=None, cutoff=PINV_CUTOFF,
                            feats=None, instrument="previous"):
    A, b = value_moments(data, target_policy, fm, reparam, feats, instrument)
    lam = default_ridge(data, A) if ridge is None else float(ridge)
    if lam < 0:
        raise ValidationError("ridge must be >= 0")
    theta = _solve(A, b, lam, cutoff)
    if np.allclose(b, 0) and np.linalg.matrix_rank(A) < A.shape[1]:
        warnings.warn("unidentified direction: b vanishes and A is singular", RuntimeWarning, stacklevel=2)
    return BridgeFunction(fm, theta, VALUE, reparam, target_policy if reparam else None)


def weight_moments(data, target_policy, fm_g, fm_f=None, feats_g=None, feats_f=None):
    """M and c of the weight-bridge moment equation M^T theta = -(1 - gamma) c."""
    _check(data)
    if fm_f is None:
        fm_f, feats_f = fm_g, feats_g
    feats_g = obs_features(fm_g, data) if feats_g is None else feats_g
    feats_f = obs_features(fm_f, data) if feats_f is None else feats_f
    gamma, nA = data.gamma, fm_g.num_actions
    Dg, Df = fm_g.block_dim, fm_f.block_dim
    w = _row_weights(data)
    M = np.zeros((fm_g.dim, fm_f.dim))
    for a in range(nA):
        gg, gf = feats_g.groups[a], feats_f.groups[a]
        idx = gg.idx
        if idx.size == 0:
            continue
        wl = gg.minus * w[idx, None]
        pa = target_policy.probs(data.o[idx])[:, a]
        nxt = gamma * ((wl * pa[:, None]).T @ gf.plus)
        for a2 in range(nA):
            M[_blk(a, Dg), _blk(a2, Df)] += nxt
        M[_blk(a, Dg), _blk(a, Df)] -= wl.T @ gf.cur
    c = np.tile(data.init_mean(feats_f.init), nA)
    return M, c


def fit_weight_bridge_linear(data, target_policy, fm_g, fm_f=None, ridge=None, cutoff=PINV_CUTOFF,
                             feats_g=None, feats_f=None):
    M, c = weight_moments(data, target_policy, fm_g, fm_f, feats_g, feats_f)
    gamma = data.gamma
    rhs = -(1 - gamma) * c
    lam = default_ridge(data, M.T) if ridge is None else float(ridge)
    if lam < 0:
        raise ValidationError("ridge must be >= 0")
    theta = _solve(M.T, rhs, lam, cutoff)
    resid = np.linalg.norm(M.T @ theta - rhs)
    if resid > 1e-6 * max(np.linalg.norm(c), 1e-300):
        warnings.warn(f"no learnable weight bridge in span (residual {resid:.3g})", RuntimeWarning, stacklevel=2)
    return BridgeFunction(fm_g, theta, WEIGHT)


def _weighted_se(data, values):
    if data.weights is not None:
        return 0.0
    n = values.shape[0]
    return float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def vm_contributions(bridge, data):
    return bridge.all_actions(data.init_obs).sum(axis=1)


def is_contributions(bridge, data, target_policy, gamma):
    pi_o = target_policy.prob_of(data.a, data.o)
    return bridge(data.a, data.o_minus) * data.r * pi_o / (1 - gamma)


def estimate_value(kind, bridge, data, target_policy, gamma=None):
    gamma = data.gamma if gamma is None else gamma
    if kind == "vm":
        if bridge.role != VALUE:
            raise ValidationError("vm estimate needs a value bridge")
        vals = vm_contributions(bridge, data)
        est = float(data.init_mean(vals))
        se = 0.0
        if data.init_weights is None and vals.size > 1:
            se = float(vals.std(ddof=1) / np.sqrt(vals.size))
        return ValueEstimate(est, "vm_linear", data.n, se)
    if kind == "is":
        if bridge.role != WEIGHT:
            raise ValidationError("is estimate needs a weight bridge")
        vals = is_contributions(bridge, data, target_policy, gamma)
        return ValueEstimate(float(data.mean(vals)), "is_linear", data.n, _weighted_se(data, vals))
    raise ValidationError(f"unknown estimator kind {kind!r}")


def lstdq_baseline(data, target_policy, fm, ridge=None, cutoff=PINV_CUTOFF, feats=None):
    """Naive LSTDQ treating the current observation as the state.

    theta = (E[phi phi^T] - gamma E[phi(A, O) phi(pi_e, O+)^T])^+ E[R phi(A, O)],
    value = E_{nu_O}[phi(pi_e, o)]^T theta.
    """
    _check(data)
    feats = obs_features(fm, data) if feats is None else feats
    gamma, D, nA = data.gamma, fm.block_dim, fm.num_actions
    w = _row_weights(data)
    A = np.zeros((fm.dim, fm.dim))
    b = np.zeros(fm.dim)
    for a, grp in enumerate(feats.groups):
        idx = grp.idx
        if idx.size == 0:
            continue
        wl = grp.cur * w[idx, None]
        A[_blk(a, D), _blk(a, D)] += wl.T @ grp.cur
        pn = target_policy.probs(data.o_plus[idx])
        for a2 in range(nA):
            A[_blk(a, D), _blk(a2, D)] -= gamma * ((wl * pn[:, a2:a2 + 1]).T @ grp.plus)
        b[_blk(a, D)] = wl.T @ data.r[idx]
    lam = default_ridge(data, A) if ridge is None else float(ridge)
    theta = _solve(A, b, lam, cutoff)
    start = (target_policy.probs(data.init_obs)[:, :, None] * feats.init[:, None, :]).reshape(-1, fm.dim)
    vals = start @ theta
    est = float(data.init_mean(vals))
    se = 0.0
    if data.init_weights is None and vals.size > 1:
        se = float(vals.std(ddof=1) / np.sqrt(vals.size))
    return ValueEstimate(est, "lstdq_naive", data.n, se, extra={"theta": theta})


def average_over_seeds(estimates):
    """Mean of estimates obtained with independent feature seeds."""
    vals = np.array([e.estimate for e in estimates], dtype=float)
    first = estimates[0]
    return ValueEstimate(float(vals.mean()), first.method, first.n, first.std_error,
                         extra={"per_seed": vals.tolist()})


@dataclass
class TableBridge:
    """Bridge given by an explicit table over (action, discrete observation)."""

    table: np.ndarray
    role: str = VALUE

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)
        if self.table.ndim != 2:
            raise ValidationError("bridge table must be (actions, observations)")

    def all_actions(self, obs):
        return self.table[:, np.asarray(obs, dtype=int).reshape(-1)].T

    def __call__(self, actions, obs):
        return self.table[np.asarray(actions, dtype=int), np.asarray(obs, dtype=int)]


class ZeroBridge:
    """The identically zero bridge."""

    def __init__(self, num_actions=2, role=VALUE):
        self.num_actions = num_actions
        self.role = role

    def all_actions(self, obs):
        return np.zeros((np.shape(obs)[0], self.num_actions))

    def __call__(self, actions, obs):
        return np.zeros(np.shape(actions)[0])
