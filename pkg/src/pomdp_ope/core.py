"""Shared domain types: models, policies, tuple datasets and value estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit

PROB_TOL = 1e-12

METHODS = (
    "oracle_exact",
    "oracle_mc",
    "tabular_pinv",
    "vm_linear",
    "is_linear",
    "lstdq_naive",
    "pomql",
    "pomwl",
    "mql",
    "mwl",
    "dr",
    "dr_crossfit",
)

STATE = "state"
OBSERVATION = "observation"


class ValidationError(ValueError):
    """Bad parameters or malformed inputs (CLI exit code 2)."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite or unusable results (CLI exit code 3)."""


def _check_stochastic(name, arr, axis=-1):
    arr = np.asarray(arr, dtype=float)
    if np.any(~np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    if np.any(arr < 0):
        raise ValidationError(f"{name} has negative entries")
    sums = arr.sum(axis=axis)
    bad = np.abs(sums - 1.0) > PROB_TOL
    if np.any(bad):
        raise ValidationError(
            f"{name} rows must sum to 1 (max deviation {np.max(np.abs(sums - 1.0)):.3g})"
        )
    return arr


def _freeze(arr):
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TabularPOMDP:
    """Finite latent-state POMDP with every kernel stored as a dense array.

    Shapes: ``init_dist`` (S,), ``transition`` (S, A, S), ``reward`` (S, A),
    ``obs_kernel`` (S, O).  ``preobs_kernel`` (S, O) is only used by bandit
    instances, where the pre-observation is drawn from its own kernel.
    """

    init_dist: np.ndarray
    transition: np.ndarray
    reward: np.ndarray
    obs_kernel: np.ndarray
    discount: float
    r_max: Optional[float] = None
    preobs_kernel: Optional[np.ndarray] = None

    def __post_init__(self):
        init = _check_stochastic("init_dist", self.init_dist)
        trans = _check_stochastic("transition", self.transition)
        obs = _check_stochastic("obs_kernel", self.obs_kernel)
        reward = np.asarray(self.reward, dtype=float)
        if init.ndim != 1 or trans.ndim != 3 or obs.ndim != 2 or reward.ndim != 2:
            raise ValidationError("kernel arrays have the wrong number of dimensions")
        S, A = reward.shape
        if init.shape != (S,) or trans.shape != (S, A, S) or obs.shape[0] != S:
            raise ValidationError("kernel shapes are inconsistent with reward (S, A)")
        if not 0.0 <= self.discount < 1.0:
            raise ValidationError(f"discount must lie in [0, 1), got {self.discount}")
        r_max = float(reward.max()) if self.r_max is None else float(self.r_max)
        if reward.min() < 0 or reward.max() > r_max + PROB_TOL:
            raise ValidationError("rewards must lie in [0, r_max]")
        if r_max <= 0:
            r_max = 1.0
        object.__setattr__(self, "init_dist", _freeze(init))
        object.__setattr__(self, "transition", _freeze(trans))
        object.__setattr__(self, "reward", _freeze(reward))
        object.__setattr__(self, "obs_kernel", _freeze(obs))
        object.__setattr__(self, "r_max", r_max)
        if self.preobs_kernel is not None:
            pre = _check_stochastic("preobs_kernel", self.preobs_kernel)
            if pre.shape[0] != S:
                raise ValidationError("preobs_kernel must have one row per state")
            object.__setattr__(self, "preobs_kernel", _freeze(pre))

    @property
    def num_states(self):
        return self.reward.shape[0]

    @property
    def num_actions(self):
        return self.reward.shape[1]

    @property
    def num_obs(self):
        return self.obs_kernel.shape[1]

    @property
    def obs_init_dist(self):
        """nu_O = Z^T nu, the law of the first observation."""
        return self.obs_kernel.T @ self.init_dist

    @property
    def discrete(self):
        return True


@dataclass(frozen=True)
class Continuous1DProcess:
    """Linear-Gaussian process on a scalar state with binary actions.

    S_0 ~ N(init_mean, init_std^2);
    S_{t+1} = trans_coef * S_t + action_shift * (2 A_t - 1) + N(0, trans_noise_std^2);
    O_t = S_t + N(0, obs_noise_std^2);  R_t = S_t + (2 A_t - 1).
    """

    obs_noise_std: float
    discount: float = 0.95
    init_mean: float = 0.0
    init_std: float = 0.5
    trans_coef: float = 0.5
    action_shift: float = 1.0
    trans_noise_std: float = 0.5
    r_max: float = 3.0

    def __post_init__(self):
        for name in ("obs_noise_std", "init_std", "trans_noise_std"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not 0.0 <= self.discount < 1.0:
            raise ValidationError(f"discount must lie in [0, 1), got {self.discount}")
        if self.r_max <= 0:
            raise ValidationError("r_max must be positive")

    num_actions = 2
    obs_dim = 1

    @property
    def discrete(self):
        return False

    def sample_init_states(self, n, rng):
        return self.init_mean + self.init_std * rng.standard_normal(n)

    def sample_obs(self, states, rng):
        if self.obs_noise_std == 0:
            return np.array(states, dtype=float, copy=True)
        return states + self.obs_noise_std * rng.standard_normal(np.shape(states))

    def reward(self, states, actions):
        return states + (2.0 * actions - 1.0)

    def step(self, states, actions, rng):
        noise = self.trans_noise_std * rng.standard_normal(np.shape(states))
        return self.trans_coef * states + self.action_shift * (2.0 * actions - 1.0) + noise


class _Policy:
    input_kind: str

    def probs(self, x):
        raise NotImplementedError

    def prob_of(self, actions, x):
        p = self.probs(x)
        return p[np.arange(p.shape[0]), np.asarray(actions, dtype=int)]

    def sample(self, x, rng):
        p = self.probs(x)
        u = rng.random(p.shape[0])
        return (u[:, None] > np.cumsum(p, axis=1)[:, :-1]).sum(axis=1)


@dataclass(frozen=True)
class SigmoidPolicy(_Policy):
    """Binary-action policy with prob(action=1 | x) = 1 / (1 + exp(w * x + bias))."""

    weight: float
    bias: float = 1.0
    input_kind: str = OBSERVATION

    num_actions = 2

    def __post_init__(self):
        if self.input_kind not in (STATE, OBSERVATION):
            raise ValidationError(f"unknown input_kind {self.input_kind!r}")

    def prob_one(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return expit(-(self.weight * x + self.bias))

    def probs(self, x):
        p1 = self.prob_one(x)
        return np.stack([1.0 - p1, p1], axis=1)

    def sample(self, x, rng):
        p1 = self.prob_one(x)
        return (rng.random(p1.shape[0]) < p1).astype(int)


@dataclass(frozen=True)
class TabularPolicy(_Policy):
    """Lookup-table policy; ``table[x]`` is the action distribution for input index x."""

    table: np.ndarray
    input_kind: str = OBSERVATION

    def __post_init__(self):
        if self.input_kind not in (STATE, OBSERVATION):
            raise ValidationError(f"unknown input_kind {self.input_kind!r}")
        table = _check_stochastic("policy table", self.table)
        if table.ndim != 2:
            raise ValidationError("policy table must be 2-D (inputs x actions)")
        object.__setattr__(self, "table", _freeze(table))

    @property
    def num_actions(self):
        return self.table.shape[1]

    def probs(self, x):
        return self.table[np.asarray(x, dtype=int).reshape(-1)]


def uniform_policy(num_inputs, num_actions, input_kind=OBSERVATION):
    return TabularPolicy(np.full((num_inputs, num_actions), 1.0 / num_actions), input_kind)


class TransitionTuple(NamedTuple):
    o_minus: object
    o: object
    a: int
    r: float
    o_plus: object


@dataclass
class TupleDataset:
    """Observed tuples (O-, O, A, R, O+) plus a representation of nu_O.

    Observations are integer index arrays when ``discrete`` and float arrays
    (shape (n,) or (n, d)) otherwise.  ``init_obs`` holds either sampled
    initial observations (``init_weights`` None, equal weights) or the full
    observation support with ``init_weights`` = exact nu_O.  ``weights`` is
    None for sampled data; population datasets carry exact probabilities.
    """

    o_minus: np.ndarray
    o: np.ndarray
    a: np.ndarray
    r: np.ndarray
    o_plus: np.ndarray
    init_obs: np.ndarray
    discrete: bool
    num_actions: int = 2
    num_obs: Optional[int] = None
    init_weights: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    traj_id: Optional[np.ndarray] = None
    env_id: str = ""
    seed: Optional[int] = None
    gamma: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        obs_dtype = int if self.discrete else float
        self.o_minus = np.asarray(self.o_minus, dtype=obs_dtype)
        self.o = np.asarray(self.o, dtype=obs_dtype)
        self.o_plus = np.asarray(self.o_plus, dtype=obs_dtype)
        self.a = np.asarray(self.a, dtype=int)
        self.r = np.asarray(self.r, dtype=float)
        self.init_obs = np.asarray(self.init_obs, dtype=obs_dtype)
        n = self.a.shape[0]
        for name in ("o_minus", "o", "r", "o_plus"):
            if getattr(self, name).shape[0] != n:
                raise ValidationError(f"column {name} has length != {n}")
        if self.init_obs.shape[0] == 0:
            raise ValidationError("init_obs must be non-empty")
        if n and (self.a.min() < 0 or self.a.max() >= self.num_actions):
            raise ValidationError("action index out of range")
        if self.discrete and self.num_obs is not None and n:
            hi = max(self.o_minus.max(), self.o.max(), self.o_plus.max())
            lo = min(self.o_minus.min(), self.o.min(), self.o_plus.min())
            if lo < 0 or hi >= self.num_obs:
                raise ValidationError("observation index out of range")
        if self.weights is not None:
            self.weights = _normalized(self.weights, n, "weights")
        if self.init_weights is not None:
            self.init_weights = _normalized(
                self.init_weights, self.init_obs.shape[0], "init_weights"
            )

    @property
    def n(self):
        return int(self.a.shape[0])

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return TransitionTuple(self.o_minus[i], self.o[i], int(self.a[i]), float(self.r[i]), self.o_plus[i])

    def mean(self, values, axis=0):
        """Empirical (or population-weighted) average over tuples."""
        values = np.asarray(values, dtype=float)
        if self.weights is None:
            return values.mean(axis=axis)
        return np.tensordot(self.weights, values, axes=(0, axis))

    def init_mean(self, values):
        values = np.asarray(values, dtype=float)
        if self.init_weights is None:
            return values.mean(axis=0)
        return np.tensordot(self.init_weights, values, axes=(0, 0))

    def subset(self, idx):
        idx = np.asarray(idx)
        w = None if self.weights is None else self.weights[idx]
        return TupleDataset(
            o_minus=self.o_minus[idx],
            o=self.o[idx],
            a=self.a[idx],
            r=self.r[idx],
            o_plus=self.o_plus[idx],
            init_obs=self.init_obs,
            discrete=self.discrete,
            num_actions=self.num_actions,
            num_obs=self.num_obs,
            init_weights=self.init_weights,
            weights=w,
            traj_id=None if self.traj_id is None else self.traj_id[idx],
            env_id=self.env_id,
            seed=self.seed,
            gamma=self.gamma,
            meta=dict(self.meta),
        )

    def with_rewards(self, r):
        out = self.subset(np.arange(self.n))
        out.r = np.asarray(r, dtype=float)
        return out


def _normalized(w, n, name):
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValidationError(f"{name} must have shape ({n},)")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValidationError(f"{name} must be non-negative with positive mass")
    return w / w.sum()


@dataclass
class BanditDataset:
    """Records (O_{-1}, A_0, O_0, R_0) for the partially observable bandit."""

    o_minus: np.ndarray
    a: np.ndarray
    o: np.ndarray
    r: np.ndarray
    num_obs: int
    num_actions: int
    num_preobs: Optional[int] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.o_minus = np.asarray(self.o_minus, dtype=int)
        self.a = np.asarray(self.a, dtype=int)
        self.o = np.asarray(self.o, dtype=int)
        self.r = np.asarray(self.r, dtype=float)
        if self.num_preobs is None:
            self.num_preobs = self.num_obs
        n = self.a.shape[0]
        if not (self.o_minus.shape[0] == self.o.shape[0] == self.r.shape[0] == n):
            raise ValidationError("bandit columns have unequal lengths")
        if n:
            if self.a.min() < 0 or self.a.max() >= self.num_actions:
                raise ValidationError("action index out of range")
            if self.o.min() < 0 or self.o.max() >= self.num_obs:
                raise ValidationError("observation index out of range")
            if self.o_minus.min() < 0 or self.o_minus.max() >= self.num_preobs:
                raise ValidationError("pre-observation index out of range")
        if self.weights is not None:
            self.weights = _normalized(self.weights, n, "weights")

    @property
    def n(self):
        return int(self.a.shape[0])

    @property
    def reward_support(self):
        return np.unique(self.r)


@dataclass(frozen=True)
class ValueEstimate:
    estimate: float
    method: str
    n: int
    std_error: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method tag {self.method!r}")
        if self.std_error is not None and not self.std_error >= 0:
            raise ValidationError("std_error must be >= 0")

    def to_dict(self):
        out = {
            "estimate": float(self.estimate),
            "std_error": None if self.std_error is None else float(self.std_error),
            "method": self.method,
            "n": int(self.n),
        }
        for k, v in self.extra.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out
