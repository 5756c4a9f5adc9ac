"""Constructors for the simulation environments used in the experiments."""

import numpy as np

from .core import (
    OBSERVATION,
    STATE,
    Continuous1DProcess,
    SigmoidPolicy,
    TabularPOMDP,
    TabularPolicy,
    ValidationError,
    uniform_policy,
)

ENV_IDS = ("binary-toy", "dyn1d", "random-bandit")

RANK_TOL = 1e-8
MAX_REJECTIONS = 1000


def make_binary_confounded_pomdp(epsilon, obs_flip_prob=0.3, discount=0.95, stay_prob=0.8):
    """Two-state toy where the behavior action tracks the hidden state.

    The behavior policy picks a = s with probability 1 - epsilon.  The next
    state copies the action with probability ``stay_prob``; the reward is
    1{a = s}.  Observations flip the state with probability ``obs_flip_prob``.
    Returns (model, behavior, target) with a uniform target policy.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 0.0 <= obs_flip_prob < 0.5:
        raise ValidationError(f"obs_flip_prob must lie in [0, 0.5), got {obs_flip_prob}")
    if not 0.0 <= stay_prob <= 1.0:
        raise ValidationError("stay_prob must lie in [0, 1]")
    transition = np.empty((2, 2, 2))
    for s in range(2):
        for a in range(2):
            transition[s, a, a] = stay_prob
            transition[s, a, 1 - a] = 1.0 - stay_prob
    reward = np.eye(2)
    q = obs_flip_prob
    obs = np.array([[1 - q, q], [q, 1 - q]])
    model = TabularPOMDP(
        init_dist=np.array([0.5, 0.5]),
        transition=transition,
        reward=reward,
        obs_kernel=obs,
        discount=discount,
        r_max=1.0,
    )
    e = epsilon
    behavior = TabularPolicy(np.array([[1 - e, e], [e, 1 - e]]), input_kind=STATE)
    target = uniform_policy(2, 2, OBSERVATION)
    return model, behavior, target


def make_1d_process(sigma_o, gamma=0.95):
    if sigma_o < 0:
        raise ValidationError(f"sigma_o must be >= 0, got {sigma_o}")
    return Continuous1DProcess(obs_noise_std=float(sigma_o), discount=float(gamma))


def behavior_sigmoid():
    """pi_b(1 | s) = 1 / (1 + exp(s + 1))."""
    return SigmoidPolicy(weight=1.0, bias=1.0, input_kind=STATE)


def target_sigmoid(w):
    """pi_e(1 | o) = 1 / (1 + exp(w o + 1))."""
    return SigmoidPolicy(weight=float(w), bias=1.0, input_kind=OBSERVATION)


def numerical_rank(mat, tol=RANK_TOL):
    sv = np.linalg.svd(np.atleast_2d(mat), compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def _dirichlet_rows(rng, rows, cols):
    return rng.dirichlet(np.ones(cols), size=rows)


def make_random_bandit_pomdp(num_states, num_obs, num_actions, seed, obs_kernel=None,
                             preobs_kernel=None, tol=RANK_TOL):
    """Random partially observable bandit with full-rank observation kernels.

    Observation kernels Z (for O_0) and Z- (for O_{-1}) are drawn with
    Dirichlet(1) rows and redrawn until both have rank ``num_states``.
    Passing a fixed kernel pins it, so a degenerate kernel makes the
    rejection loop fail.  Rewards are deterministic per (s, a) on a
    three-decimal grid in [0, 1].
    """
    if min(num_states, num_obs, num_actions) < 1:
        raise ValidationError("sizes must be positive")
    if num_obs < num_states:
        raise ValidationError("num_obs must be >= num_states")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_REJECTIONS):
        z = _dirichlet_rows(rng, num_states, num_obs) if obs_kernel is None else np.asarray(obs_kernel, float)
        zm = (_dirichlet_rows(rng, num_states, num_obs) if preobs_kernel is None
              else np.asarray(preobs_kernel, float))
        if numerical_rank(z, tol) == num_states and numerical_rank(zm, tol) == num_states:
            break
    else:
        raise ValidationError("could not satisfy rank condition")
    init = rng.dirichlet(np.ones(num_states))
    reward = np.round(rng.random((num_states, num_actions)), 3)
    transition = np.broadcast_to(init, (num_states, num_actions, num_states)).copy()
    model = TabularPOMDP(
        init_dist=init,
        transition=transition,
        reward=reward,
        obs_kernel=z,
        discount=0.0,
        r_max=1.0,
        preobs_kernel=zm,
    )
    # strictly positive behavior: mix a Dirichlet draw with uniform
    raw = rng.dirichlet(np.ones(num_actions), size=num_states)
    behavior = TabularPolicy(0.8 * raw + 0.2 / num_actions, input_kind=STATE)
    target = TabularPolicy(rng.dirichlet(np.ones(num_actions), size=num_obs), input_kind=OBSERVATION)
    return model, behavior, target


def sample_bandit(model, behavior, n, rng):
    """Draw S_0 ~ nu, O_{-1} ~ Z-(.|S_0), A_0 ~ pi_b(.|S_0), O_0 ~ Z(.|S_0), R_0 = r(S_0, A_0)."""
    from .core import BanditDataset

    if model.preobs_kernel is None:
        raise ValidationError("bandit sampling needs a preobs_kernel")
    s = _categorical(rng, np.broadcast_to(model.init_dist, (n, model.num_states)))
    om = _categorical(rng, model.preobs_kernel[s])
    a = behavior.sample(s, rng)
    o = _categorical(rng, model.obs_kernel[s])
    r = model.reward[s, a]
    return BanditDataset(om, a, o, r, num_obs=model.num_obs, num_actions=model.num_actions,
                         num_preobs=model.preobs_kernel.shape[1])


def _categorical(rng, probs):
    probs = np.asarray(probs)
    u = rng.random(probs.shape[0])
    return (u[:, None] > np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1)
