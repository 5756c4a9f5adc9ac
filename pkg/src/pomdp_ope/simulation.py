"""Behavior-policy rollouts, tuple harvesting and ground-truth value oracles."""

import csv
import json
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (
    STATE,
    OBSERVATION,
    Continuous1DProcess,
    TabularPOMDP,
    TupleDataset,
    ValidationError,
    ValueEstimate,
)
from .environments import _categorical


class Record(NamedTuple):
    state: object
    obs: object
    action: int
    reward: float


@dataclass
class Trajectories:
    """A batch of equal-length trajectories, arrays shaped (num_trajectories, horizon)."""

    states: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    discrete: bool

    @property
    def num_trajectories(self):
        return self.actions.shape[0]

    @property
    def horizon(self):
        return self.actions.shape[1]

    def records(self, i):
        return [
            Record(self.states[i, t], self.obs[i, t], int(self.actions[i, t]), float(self.rewards[i, t]))
            for t in range(self.horizon)
        ]


def _tabular_step_arrays(env, n, T):
    states = np.empty((n, T), dtype=int)
    obs = np.empty((n, T), dtype=int)
    actions = np.empty((n, T), dtype=int)
    rewards = np.empty((n, T))
    return states, obs, actions, rewards


def rollout_behavior(env, behavior_policy, horizon, stream, num_trajectories=1):
    """Simulate trajectories under a state-based behavior policy.

    S_0 ~ nu, O_t ~ Z(.|S_t), A_t ~ pi_b(.|S_t), R_t = r(S_t, A_t),
    S_{t+1} ~ P(.|S_t, A_t).
    """
    if horizon < 1:
        raise ValidationError("horizon must be a positive integer")
    if behavior_policy.input_kind != STATE:
        raise ValidationError("behavior policy must be state-based")
    n, T = int(num_trajectories), int(horizon)
    rng = stream
    if isinstance(env, TabularPOMDP):
        states, obs, actions, rewards = _tabular_step_arrays(env, n, T)
        s = _categorical(rng, np.broadcast_to(env.init_dist, (n, env.num_states)))
        for t in range(T):
            states[:, t] = s
            obs[:, t] = _categorical(rng, env.obs_kernel[s])
            a = behavior_policy.sample(s, rng)
            actions[:, t] = a
            rewards[:, t] = env.reward[s, a]
            s = _categorical(rng, env.transition[s, a])
        return Trajectories(states, obs, actions, rewards, discrete=True)
    if isinstance(env, Continuous1DProcess):
        states = np.empty((n, T))
        obs = np.empty((n, T))
        actions = np.empty((n, T), dtype=int)
        rewards = np.empty((n, T))
        s = env.sample_init_states(n, rng)
        for t in range(T):
            states[:, t] = s
            obs[:, t] = env.sample_obs(s, rng)
            a = behavior_policy.sample(s, rng)
            actions[:, t] = a
            rewards[:, t] = env.reward(s, a)
            s = env.step(s, a, rng)
        return Trajectories(states, obs, actions, rewards, discrete=False)
    raise ValidationError(f"unsupported environment type {type(env).__name__}")


def extract_tuples(trajectories, env=None, env_id="", seed=None):
    """Harvest (O_{t-1}, O_t, A_t, R_t, O_{t+1}) for t = 1..T-2 from every trajectory.

    ``trajectories`` is a :class:`Trajectories` batch or a list of them.
    Trajectories shorter than 3 are skipped; the count is stored in
    ``meta["skipped"]``.  Tabular environments get the exact nu_O = Z^T nu,
    continuous ones the empirical O_0 of each trajectory.
    """
    batches = [trajectories] if isinstance(trajectories, Trajectories) else list(trajectories)
    if not batches:
        raise ValidationError("no trajectories given")
    cols = {k: [] for k in ("o_minus", "o", "a", "r", "o_plus", "traj")}
    first_obs = []
    skipped = 0
    offset = 0
    discrete = batches[0].discrete
    for tr in batches:
        N, T = tr.actions.shape
        if T < 3:
            skipped += N
            continue
        cols["o_minus"].append(tr.obs[:, :-2].reshape(-1))
        cols["o"].append(tr.obs[:, 1:-1].reshape(-1))
        cols["a"].append(tr.actions[:, 1:-1].reshape(-1))
        cols["r"].append(tr.rewards[:, 1:-1].reshape(-1))
        cols["o_plus"].append(tr.obs[:, 2:].reshape(-1))
        cols["traj"].append(np.repeat(np.arange(N) + offset, T - 2))
        first_obs.append(tr.obs[:, 0])
        offset += N
    if not cols["a"]:
        raise ValidationError(f"all {skipped} trajectories are shorter than 3")
    data = {k: np.concatenate(v) for k, v in cols.items()}
    if isinstance(env, TabularPOMDP):
        init_obs = np.arange(env.num_obs)
        init_weights = env.obs_init_dist
        num_obs = env.num_obs
        num_actions = env.num_actions
    else:
        init_obs = np.concatenate(first_obs)
        init_weights = None
        num_obs = None
        num_actions = 2 if env is None else env.num_actions
    return TupleDataset(
        o_minus=data["o_minus"],
        o=data["o"],
        a=data["a"],
        r=data["r"],
        o_plus=data["o_plus"],
        init_obs=init_obs,
        init_weights=init_weights,
        discrete=discrete,
        num_actions=num_actions,
        num_obs=num_obs,
        traj_id=data["traj"],
        env_id=env_id,
        seed=seed,
        gamma=None if env is None else env.discount,
        meta={"skipped": skipped},
    )


def simulate_dataset(env, behavior, num_trajectories, horizon, stream, env_id="", seed=None,
                     chunk=2000):
    """Roll out in chunks of trajectories and harvest tuples."""
    batches = []
    left = int(num_trajectories)
    while left > 0:
        k = min(chunk, left)
        batches.append(rollout_behavior(env, behavior, horizon, stream, k))
        left -= k
    return extract_tuples(batches, env, env_id=env_id, seed=seed)


def truncation_horizon(gamma, r_max, tail_tol=1e-4):
    """Smallest H with gamma^H r_max / (1 - gamma) <= tail_tol."""
    if gamma == 0:
        return 1
    need = math.log(tail_tol * (1 - gamma) / r_max) / math.log(gamma)
    return max(1, math.ceil(need - 1e-12))


def monte_carlo_value(env, target_policy, n_rollouts, horizon_trunc=None, stream=None, tail_tol=1e-4):
    """Mean discounted return of ``target_policy`` acting on observations."""
    if target_policy.input_kind != OBSERVATION:
        raise ValidationError("target policy must be observation-based")
    if n_rollouts < 1:
        raise ValidationError("n_rollouts must be positive")
    rng = np.random.default_rng() if stream is None else stream
    gamma = env.discount
    H = truncation_horizon(gamma, env.r_max, tail_tol) if horizon_trunc is None else int(horizon_trunc)
    if H < 1:
        raise ValidationError("horizon_trunc must be positive")
    n = int(n_rollouts)
    returns = np.zeros(n)
    disc = 1.0
    if isinstance(env, TabularPOMDP):
        s = _categorical(rng, np.broadcast_to(env.init_dist, (n, env.num_states)))
        for _ in range(H):
            o = _categorical(rng, env.obs_kernel[s])
            a = target_policy.sample(o, rng)
            returns += disc * env.reward[s, a]
            disc *= gamma
            if disc == 0.0:
                break
            s = _categorical(rng, env.transition[s, a])
    elif isinstance(env, Continuous1DProcess):
        s = env.sample_init_states(n, rng)
        for _ in range(H):
            o = env.sample_obs(s, rng)
            a = target_policy.sample(o, rng)
            returns += disc * env.reward(s, a)
            disc *= gamma
            if disc == 0.0:
                break
            s = env.step(s, a, rng)
    else:
        raise ValidationError(f"unsupported environment type {type(env).__name__}")
    se = float(returns.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    tail = gamma**H * env.r_max / (1 - gamma)
    return ValueEstimate(float(returns.mean()), "oracle_mc", n, se, extra={"horizon": H, "tail_bound": tail})


@dataclass
class ExactValue:
    J: float
    latent_q: np.ndarray
    occupancy_ratio: np.ndarray
    state_value: np.ndarray
    target_occupancy: np.ndarray
    behavior_occupancy: np.ndarray

    def __iter__(self):
        return iter((self.J, self.latent_q, self.occupancy_ratio))


def marginal_target_policy(env, target_policy):
    """pi~(a|s) = sum_o Z(o|s) pi_e(a|o), shape (S, A)."""
    return env.obs_kernel @ target_policy.table


def behavior_state_marginals(env, behavior_policy, horizon):
    """State laws d_t = nu (P^b)^t for t = 0..horizon-1, shape (horizon, S)."""
    pb = np.einsum("sa,sap->sp", behavior_policy.table, env.transition)
    out = np.empty((horizon, env.num_states))
    d = env.init_dist.copy()
    for t in range(horizon):
        out[t] = d
        d = d @ pb
    return out, pb


def behavior_occupancy(env, behavior_policy, horizon=100):
    """Law of S_t averaged over the harvested steps t = 1..T-2."""
    if horizon < 3:
        raise ValidationError("horizon must be >= 3")
    marg, _ = behavior_state_marginals(env, behavior_policy, horizon)
    return marg[1:horizon - 1].mean(axis=0)


def exact_tabular_value(env, target_policy, behavior_policy=None, horizon=100):
    """Closed-form value via the latent Markov chain induced by the target policy.

    J = nu^T (I - gamma P^e)^{-1} r^e.  When ``behavior_policy`` is given the
    occupancy ratio w(s) = d^e(s) / P_b(s) is computed against the behavior
    state law over harvested tuples; otherwise it is returned as NaN.
    """
    if not isinstance(env, TabularPOMDP):
        raise ValidationError("exact_tabular_value needs a tabular model")
    gamma = env.discount
    pi_t = marginal_target_policy(env, target_policy)
    pe = np.einsum("sa,sap->sp", pi_t, env.transition)
    re = (pi_t * env.reward).sum(axis=1)
    eye = np.eye(env.num_states)
    v = np.linalg.solve(eye - gamma * pe, re)
    J = float(env.init_dist @ v)
    q = env.reward.T + gamma * np.einsum("sap,p->as", env.transition, v)
    d_e = np.linalg.solve(eye - gamma * pe.T, env.init_dist)
    if behavior_policy is None:
        d_b = np.full(env.num_states, np.nan)
        ratio = np.full(env.num_states, np.nan)
    else:
        d_b = behavior_occupancy(env, behavior_policy, horizon)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d_b > 0, d_e / np.where(d_b > 0, d_b, 1.0), np.inf)
        if np.any(np.isinf(ratio)):
            warnings.warn("behavior occupancy has zero mass on some states; coverage fails",
                          RuntimeWarning, stacklevel=2)
    return ExactValue(J, q, ratio, v, d_e, d_b)


def exact_value_estimate(env, target_policy):
    res = exact_tabular_value(env, target_policy)
    return ValueEstimate(res.J, "oracle_exact", 0, 0.0)


def population_tuples(env, behavior_policy, horizon=100, env_id=""):
    """Exact law of harvested tuples as a weighted dataset.

    Enumerates (S-, S, A, S+) and (O-, O, O+) with the time-averaged pair
    law of (S_{t-1}, S_t) over t = 1..T-2, then merges identical observable
    rows.  Estimators averaging with these weights see population moments.
    """
    if not isinstance(env, TabularPOMDP):
        raise ValidationError("population tuples need a tabular model")
    if horizon < 3:
        raise ValidationError("horizon must be >= 3")
    marg, pb = behavior_state_marginals(env, behavior_policy, horizon)
    prev = marg[0:horizon - 2].mean(axis=0)
    pair = prev[:, None] * pb  # (s-, s)
    S, A, O = env.num_states, env.num_actions, env.num_obs
    Z = env.obs_kernel
    # joint over (s-, s, a, s+)
    w_lat = pair[:, :, None, None] * behavior_policy.table[None, :, :, None] * env.transition[None]
    # observable joint (o-, o, a, r-index via s, o+) with reward determined by (s, a)
    joint = np.einsum("xsap,xi,sj,pk->ijask", w_lat, Z, Z, Z)  # (o-, o, a, s, o+)
    idx = np.nonzero(joint > 0)
    om, o, a, s, op = idx
    r = env.reward[s, a]
    w = joint[idx]
    rows = np.stack([om, o, a, op], axis=1).astype(float)
    key = np.concatenate([rows, r[:, None]], axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    weights = np.bincount(inv, weights=w, minlength=uniq.shape[0])
    return TupleDataset(
        o_minus=uniq[:, 0].astype(int),
        o=uniq[:, 1].astype(int),
        a=uniq[:, 2].astype(int),
        r=uniq[:, 4],
        o_plus=uniq[:, 3].astype(int),
        init_obs=np.arange(O),
        init_weights=env.obs_init_dist,
        weights=weights,
        discrete=True,
        num_actions=A,
        num_obs=O,
        env_id=env_id,
        gamma=env.discount,
        meta={"population": True, "horizon": horizon},
    )


def preobs_given_state(env, behavior_policy, horizon=100):
    """Pr(O- = o | S = s) under the harvested tuple law, shape (S, O)."""
    marg, pb = behavior_state_marginals(env, behavior_policy, horizon)
    prev = marg[0:horizon - 2].mean(axis=0)
    pair = prev[:, None] * pb
    ps = pair.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(ps[None, :] > 0, pair / np.where(ps > 0, ps, 1.0)[None, :], 0.0)  # (s-, s)
    return cond.T @ env.obs_kernel


def latent_bridges(env, behavior_policy, target_policy, horizon=100):
    """Value and weight bridges solved from the latent model.

    Returns arrays (A, O): b_V with sum_o Z(o|s) b_V(a, o) = q(a, s) pi~(a|s)
    and b_W with sum_o Pr(o-|s) b_W(a, o-) = (1 - gamma) w(s) / pi_b(a|s), each
    solved by minimum-norm least squares.  The (1 - gamma) factor normalises
    the discounted occupancy to a distribution, matching the weight moment
    equation and the 1 / (1 - gamma) of the importance-sampling estimator.
    """
    ex = exact_tabular_value(env, target_policy, behavior_policy, horizon)
    pi_t = marginal_target_policy(env, target_policy)
    Z = env.obs_kernel
    Zm = preobs_given_state(env, behavior_policy, horizon)
    bv = np.empty((env.num_actions, env.num_obs))
    bw = np.empty((env.num_actions, env.num_obs))
    for a in range(env.num_actions):
        bv[a] = np.linalg.lstsq(Z, ex.latent_q[a] * pi_t[:, a], rcond=None)[0]
        target = (1 - env.discount) * ex.occupancy_ratio / behavior_policy.table[:, a]
        bw[a] = np.linalg.lstsq(Zm, target, rcond=None)[0]
    return bv, bw


CSV_COLUMNS = ("o_minus", "o", "a", "r", "o_plus")


def save_dataset(data, path):
    """Write tuples to ``path`` as CSV plus a ``path.json`` metadata sidecar."""
    if not data.discrete and np.ndim(data.o) > 1:
        raise ValidationError("CSV export supports scalar observations only")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in zip(data.o_minus, data.o, data.a, data.r, data.o_plus):
            w.writerow([repr(v.item()) if hasattr(v, "item") else repr(v) for v in row])
    meta = {
        "env_id": data.env_id,
        "seed": data.seed,
        "n": data.n,
        "gamma": data.gamma,
        "discrete": data.discrete,
        "num_actions": data.num_actions,
        "num_obs": data.num_obs,
        "init_obs": np.asarray(data.init_obs).tolist(),
        "init_weights": None if data.init_weights is None else np.asarray(data.init_weights).tolist(),
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2)


def load_dataset(path):
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValidationError(f"unexpected CSV header {header}")
        rows = [[float(x) for x in r] for r in reader if r]
    arr = np.array(rows, dtype=float).reshape(-1, 5)
    if arr.shape[0] != meta["n"]:
        raise ValidationError("row count disagrees with metadata")
    return TupleDataset(
        o_minus=arr[:, 0], o=arr[:, 1], a=arr[:, 2].astype(int), r=arr[:, 3], o_plus=arr[:, 4],
        init_obs=np.asarray(meta["init_obs"]),
        init_weights=meta["init_weights"],
        discrete=meta["discrete"],
        num_actions=meta["num_actions"],
        num_obs=meta["num_obs"],
        env_id=meta["env_id"],
        seed=meta["seed"],
        gamma=meta["gamma"],
    )
