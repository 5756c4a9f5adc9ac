import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import linear_solve_value
from pomdp_ope.core import STATE, SigmoidPolicy, ValidationError
from pomdp_ope.environments import (
    behavior_sigmoid,
    make_1d_process,
    make_binary_confounded_pomdp,
    make_random_bandit_pomdp,
    numerical_rank,
    sample_bandit,
    target_sigmoid,
)
from pomdp_ope.rng import derive_stream
from pomdp_ope.simulation import exact_tabular_value, monte_carlo_value, rollout_behavior

# J for sigma_o = 1, w = 1, gamma = 0.95: 1e6 Monte Carlo rollouts,
# stream derive_stream(0, "truth", 1, 1000), horizon 260.
DYN1D_W1_VALUE = -12.06877
DYN1D_W1_SE = 0.00516


def test_toy_behavior_tables():
    _, b, t = make_binary_confounded_pomdp(0.5)
    np.testing.assert_array_equal(b.table, [[0.5, 0.5], [0.5, 0.5]])
    _, b, t = make_binary_confounded_pomdp(0.25)
    assert b.table[1, 1] == 0.75 and b.table[0, 1] == 0.25
    np.testing.assert_array_equal(t.table, np.full((2, 2), 0.5))
    assert b.input_kind == STATE


def test_toy_dynamics_choice():
    m, _, _ = make_binary_confounded_pomdp(0.25)
    assert m.discount == 0.95
    assert m.transition[0, 1, 1] == 0.8 and m.transition[1, 0, 1] == pytest.approx(0.2)
    np.testing.assert_array_equal(m.reward, np.eye(2))
    np.testing.assert_allclose(m.obs_kernel, [[0.7, 0.3], [0.3, 0.7]])


@pytest.mark.parametrize("eps,flip", [(0.0, 0.3), (1.0, 0.3), (0.3, 0.5), (0.3, -0.1)])
def test_toy_rejects_out_of_range(eps, flip):
    with pytest.raises(ValidationError):
        make_binary_confounded_pomdp(eps, flip)


@pytest.mark.parametrize("eps", [0.25, 0.5, 0.75])
def test_toy_exact_value_matches_elimination_oracle(eps):
    m, b, t = make_binary_confounded_pomdp(eps, 0.3)
    assert exact_tabular_value(m, t, b).J == pytest.approx(linear_solve_value(m, t), abs=1e-10)


def test_toy_state_action_independent_at_half():
    m, b, _ = make_binary_confounded_pomdp(0.5)
    tr = rollout_behavior(m, b, 100, derive_stream(3, "mi"), num_trajectories=1000)
    s, a = tr.states.ravel(), tr.actions.ravel()
    joint = np.histogram2d(s, a, bins=[2, 2])[0] / s.size
    ps, pa = joint.sum(1), joint.sum(0)
    mi = float(np.sum(joint * np.log(joint / np.outer(ps, pa))))
    assert mi <= 0.005


def test_1d_zero_noise_observes_state():
    env = make_1d_process(0.0)
    tr = rollout_behavior(env, behavior_sigmoid(), 50, derive_stream(0, "s0"), 20)
    assert np.array_equal(tr.obs, tr.states)


def test_1d_obs_noise_variance():
    env = make_1d_process(1.0)
    rng = np.random.default_rng(11)
    s = rng.normal(size=100000)
    resid = env.sample_obs(s, rng) - s
    se = np.sqrt(2.0 / resid.size)
    assert abs(resid.var() - 1.0) <= 3 * se


def test_1d_negative_sigma_rejected():
    with pytest.raises(ValidationError):
        make_1d_process(-0.1)


def test_1d_policy_input_irrelevant_when_noiseless():
    env = make_1d_process(0.0)
    tr = rollout_behavior(env, behavior_sigmoid(), 30, derive_stream(5, "x"), 50)
    # same stream, but the policy reads the observation
    rng = derive_stream(5, "x")
    pol = SigmoidPolicy(1.0, 1.0)
    s = env.sample_init_states(50, rng)
    for t in range(30):
        o = env.sample_obs(s, rng)
        a = pol.sample(o, rng)
        assert np.array_equal(o, tr.obs[:, t]) and np.array_equal(a, tr.actions[:, t])
        s = env.step(s, a, rng)


def test_1d_frozen_value():
    # a fresh independent run must agree with the stored high-precision constant
    est = monte_carlo_value(make_1d_process(1.0), target_sigmoid(1.0), 100000, stream=derive_stream(9, "frozen"))
    assert abs(est.estimate - DYN1D_W1_VALUE) <= 3 * np.hypot(est.std_error, DYN1D_W1_SE)


@pytest.mark.slow
def test_1d_frozen_value_reproduces():
    est = monte_carlo_value(make_1d_process(1.0), target_sigmoid(1.0), 1000000, stream=derive_stream(0, "truth", 1, 1000))
    assert est.estimate == pytest.approx(DYN1D_W1_VALUE, abs=1e-4)
    assert est.std_error == pytest.approx(DYN1D_W1_SE, abs=1e-4)


def test_random_bandit_trivial_sizes():
    m, b, t = make_random_bandit_pomdp(1, 1, 2, seed=0)
    np.testing.assert_array_equal(m.obs_kernel, [[1.0]])
    np.testing.assert_array_equal(m.preobs_kernel, [[1.0]])


def test_random_bandit_full_rank():
    m, b, _ = make_random_bandit_pomdp(3, 3, 2, seed=7)
    assert numerical_rank(m.obs_kernel) == 3 and numerical_rank(m.preobs_kernel) == 3
    assert np.all(b.table > 0)


def test_random_bandit_degenerate_kernel_rejected():
    with pytest.raises(ValidationError, match="could not satisfy rank condition"):
        make_random_bandit_pomdp(2, 2, 2, seed=0, obs_kernel=[[0.5, 0.5], [0.5, 0.5]])


def test_random_bandit_needs_enough_observations():
    with pytest.raises(ValidationError):
        make_random_bandit_pomdp(3, 2, 2, seed=0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_random_bandit_deterministic(seed):
    a = make_random_bandit_pomdp(3, 4, 2, seed)
    b = make_random_bandit_pomdp(3, 4, 2, seed)
    assert a[0].obs_kernel.tobytes() == b[0].obs_kernel.tobytes()
    assert a[0].reward.tobytes() == b[0].reward.tobytes()
    assert a[1].table.tobytes() == b[1].table.tobytes()
    assert a[2].table.tobytes() == b[2].table.tobytes()


def test_bandit_sampling_marginals():
    m, b, _ = make_random_bandit_pomdp(2, 3, 2, seed=1)
    data = sample_bandit(m, b, 50000, np.random.default_rng(0))
    expected = m.obs_kernel.T @ m.init_dist
    freq = np.bincount(data.o, minlength=3) / data.n
    assert np.max(np.abs(freq - expected)) < 0.01
