"""Kernel minimax losses with an RKHS discriminator, gradient-descent training and the residual certificate.

The discriminator kernel on (action, observation) pairs is action-blocked,
K((a, x), (a', y)) = 1{a = a'} k(x, y), so a point may carry a distribution
p over actions instead of a single action and K(p at x; q at y) = (p . q) k(x, y).
This gives the exact action expectations K(O+, pi_e; ...) of the losses.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import NumericalError, ValidationError, ValueEstimate
from .linear import VALUE, WEIGHT, BridgeFunction

KINDS = ("pomql", "pomwl", "mql", "mwl")
VALUE_KINDS = ("pomql", "mql")
WEIGHT_DIVISOR = 2.0
VALUE_DIVISOR = 5.0
MEDIAN_SUBSAMPLE = 1000
OPTIMIZERS = ("gd", "adam", "precond")
PRECOND_JITTER = 1e-6


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim <= 1 else x


def pairwise_distances(x, y):
    x, y = _as_points(x), _as_points(y)
    d2 = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.sqrt(np.maximum(d2, 0.0))


def median_heuristic(points, divisor):
    """Lower-middle median of the pairwise Euclidean distances, divided by ``divisor``."""
    if divisor <= 0:
        raise ValidationError("divisor must be positive")
    x = _as_points(points)
    if x.shape[0] < 2:
        raise ValidationError("median heuristic needs at least 2 points")
    iu = np.triu_indices(x.shape[0], k=1)
    d = pairwise_distances(x, x)[iu]
    med = np.partition(d, (d.size - 1) // 2)[(d.size - 1) // 2]
    if med <= 0:
        warnings.warn("all points identical; falling back to bandwidth 1.0", RuntimeWarning, stacklevel=2)
        return 1.0
    return float(med / divisor)


def rbf_kernel(x, y, beta, squared=False):
    """exp(-|x - y| / (2 beta^2)); ``squared`` uses |x - y|^2 in the exponent."""
    if beta <= 0:
        raise ValidationError("bandwidth must be positive")
    d = pairwise_distances(x, y)
    if squared:
        d = d * d
    out = np.exp(-d / (2.0 * beta * beta))
    if np.ndim(x) <= 1 and np.ndim(y) <= 1 and np.size(x) == 1 and np.size(y) == 1:
        return float(out[0, 0])
    return out


def obs_embedding(obs, discrete, num_obs=None):
    """Points the kernel sees: one-hot rows for discrete observations, raw values otherwise."""
    if discrete:
        idx = np.asarray(obs, dtype=int).reshape(-1)
        out = np.zeros((idx.size, int(num_obs)))
        out[np.arange(idx.size), idx] = 1.0
        return out
    return _as_points(obs)


def _onehot(actions, num_actions):
    a = np.asarray(actions, dtype=int).reshape(-1)
    out = np.zeros((a.size, num_actions))
    out[np.arange(a.size), a] = 1.0
    return out


@dataclass
class LossBatch:
    """Everything the four losses need from a batch of tuples, with exact action expectations."""

    r: np.ndarray
    pi_a: np.ndarray  # pi_e(A_i | O_i)
    act: np.ndarray  # one-hot A_i
    pi_next: np.ndarray  # pi_e(. | O+_i)
    pi_init: np.ndarray  # pi_e(. | O0_k)
    x_minus: np.ndarray
    x_cur: np.ndarray
    x_plus: np.ndarray
    x_init: np.ndarray
    phi_minus: np.ndarray  # phi(A_i, O-_i)
    phi_cur: np.ndarray  # phi(A_i, O_i)
    phi_next_pi: np.ndarray  # sum_a pi_e(a|O+_i) phi(a, O+_i)
    phi_init_pi: np.ndarray  # sum_a pi_e(a|O0_k) phi(a, O0_k)
    weights: np.ndarray = None  # row weights summing to 1
    init_weights: np.ndarray = None


def make_batch(data, idx, fm, target_policy, init_idx=None):
    idx = np.asarray(idx)
    nA = fm.num_actions
    o_m, o, o_p, a = data.o_minus[idx], data.o[idx], data.o_plus[idx], data.a[idx]
    init = data.init_obs if init_idx is None else data.init_obs[np.asarray(init_idx)]
    pi_cur = target_policy.probs(o)
    pi_next = target_policy.probs(o_p)
    pi_init = target_policy.probs(init)
    psi_p, psi_0 = fm.block(o_p), fm.block(init)
    phi_next = (pi_next[:, :, None] * psi_p[:, None, :]).reshape(len(idx), fm.dim)
    phi_init = (pi_init[:, :, None] * psi_0[:, None, :]).reshape(len(init), fm.dim)
    emb = lambda x: obs_embedding(x, data.discrete, data.num_obs)  # noqa: E731
    if data.weights is not None:
        w = data.weights[idx] / data.weights[idx].sum()
    else:
        w = np.full(len(idx), 1.0 / len(idx))
    if data.init_weights is not None:
        iw = data.init_weights if init_idx is None else data.init_weights[np.asarray(init_idx)]
        iw = iw / iw.sum()
    else:
        iw = np.full(len(init), 1.0 / len(init))
    return LossBatch(
        r=data.r[idx],
        pi_a=pi_cur[np.arange(len(idx)), a],
        act=_onehot(a, nA),
        pi_next=pi_next,
        pi_init=pi_init,
        x_minus=emb(o_m),
        x_cur=emb(o),
        x_plus=emb(o_p),
        x_init=emb(init),
        phi_minus=fm(a, o_m),
        phi_cur=fm(a, o),
        phi_next_pi=phi_next,
        phi_init_pi=phi_init,
        weights=w,
        init_weights=iw,
    )


def _k(x, p, y, q, beta, squared):
    """Mixed kernel matrix K(p at x; q at y) = (p_i . q_j) k(x_i, y_j)."""
    return (p @ q.T) * rbf_kernel(x, y, beta, squared) if len(x) and len(y) else np.zeros((len(x), len(y)))


@dataclass
class QuadraticForm:
    """loss(theta) = theta^T Q theta + 2 q^T theta + c0."""

    Q: np.ndarray
    q: np.ndarray
    c0: float

    def value(self, theta):
        return float(theta @ self.Q @ theta + 2.0 * self.q @ theta + self.c0)

    def grad(self, theta):
        return 2.0 * (self.Q @ theta + self.q)


def loss_quadratic(kind, batch, gamma, beta, squared=False, ustat=False):
    """Exact quadratic-in-theta form of the V-statistic loss over all ordered pairs.

    With ``ustat`` the i == j pairs are dropped, which removes the plain
    squared-residual term that dominates small minibatches.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown loss kind {kind!r}")
    w = batch.weights
    if kind in VALUE_KINDS:
        # residual e = c + H theta, loss = (w e)^T K (w e)
        if kind == "pomql":
            pa = batch.pi_a[:, None]
            H = gamma * pa * batch.phi_next_pi - pa * batch.phi_cur
            c = batch.pi_a * batch.r
            K = _k(batch.x_minus, batch.act, batch.x_minus, batch.act, beta, squared)
        else:
            H = gamma * batch.phi_next_pi - batch.phi_cur
            c = batch.r.copy()
            K = _k(batch.x_cur, batch.act, batch.x_cur, batch.act, beta, squared)
        if ustat:
            np.fill_diagonal(K, 0.0)
        Hw = H * w[:, None]
        cw = c * w
        return QuadraticForm(Hw.T @ K @ Hw, Hw.T @ K @ cw, float(cw @ K @ cw))
    # weight losses: u = G theta
    if kind == "pomwl":
        G = batch.pi_a[:, None] * batch.phi_minus
    else:
        G = batch.phi_cur
    m, m0 = len(batch.r), len(batch.init_weights)
    # one kernel over the stacked points (O, A), (O+, pi_e), (O0, pi_e)
    pts = np.vstack([batch.x_cur, batch.x_plus, batch.x_init])
    acts = np.vstack([batch.act, batch.pi_next, batch.pi_init])
    big = _k(pts, acts, pts, acts, beta, squared)
    cur, nxt, ini = slice(0, m), slice(m, 2 * m), slice(2 * m, 2 * m + m0)
    w0 = batch.init_weights
    Kqq = (gamma**2 * big[nxt, nxt] + big[cur, cur] - gamma * big[nxt, cur] - gamma * big[cur, nxt])
    K00 = big[ini, ini]
    if ustat:
        np.fill_diagonal(Kqq, 0.0)
        K00 = K00.copy()
        np.fill_diagonal(K00, 0.0)
    kq0 = (1 - gamma) * (gamma * big[nxt, ini] - big[cur, ini]) @ w0
    c0 = (1 - gamma) ** 2 * float(w0 @ K00 @ w0)
    Gw = G * w[:, None]
    return QuadraticForm(Gw.T @ Kqq @ Gw, Gw.T @ kq0, c0)


def kernel_loss(kind, theta, batch, gamma, beta, squared=False):
    return loss_quadratic(kind, batch, gamma, beta, squared).value(np.asarray(theta, float))


def kernel_loss_grad(kind, theta, batch, gamma, beta, squared=False):
    return loss_quadratic(kind, batch, gamma, beta, squared).grad(np.asarray(theta, float))


def bridge_from_theta(kind, fm, theta, target_policy):
    if kind in VALUE_KINDS:
        # both value losses parametrise b(a, o) = pi_e(a|o) theta^T phi(a, o)
        return BridgeFunction(fm, theta, VALUE, reparam=True, target_policy=target_policy)
    return BridgeFunction(fm, theta, WEIGHT)


def kernel_value_estimate(kind, bridge, data, target_policy, gamma=None):
    """Plug-in value for a bridge trained with ``kind``."""
    gamma = data.gamma if gamma is None else gamma
    if kind in VALUE_KINDS:
        vals = bridge.all_actions(data.init_obs).sum(axis=1)
        return ValueEstimate(float(data.init_mean(vals)), kind, data.n, 0.0)
    if kind == "pomwl":
        vals = bridge(data.a, data.o_minus) * data.r * target_policy.prob_of(data.a, data.o) / (1 - gamma)
    else:
        vals = bridge(data.a, data.o) * data.r / (1 - gamma)
    se = 0.0 if data.weights is not None else float(vals.std(ddof=1) / math.sqrt(vals.size))
    return ValueEstimate(float(data.mean(vals)), kind, data.n, se)


def default_bandwidth(kind, data, rng=None, max_points=MEDIAN_SUBSAMPLE):
    """med/5 over (A, O-) for PO-MQL or (A, O) for MQL, med/2 over (A, O) for weight losses.

    Points are the featurized pairs [one-hot(a), embedding(o)], so ties in
    a small observation space do not collapse the median to zero.
    """
    obs = data.o_minus if kind == "pomql" else data.o
    act = data.a
    if obs.shape[0] > max_points:
        rng = np.random.default_rng(0) if rng is None else rng
        pick = rng.choice(obs.shape[0], max_points, replace=False)
        obs, act = obs[pick], act[pick]
    divisor = VALUE_DIVISOR if kind in VALUE_KINDS else WEIGHT_DIVISOR
    pts = np.hstack([_onehot(act, data.num_actions), obs_embedding(obs, data.discrete, data.num_obs)])
    return median_heuristic(pts, divisor)


@dataclass
class TrainingTrace:
    iterations: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    thetas: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "value_estimate"])
            for row in zip(self.iterations, self.losses, self.estimates):
                w.writerow(row)


def train_bridge_kernel(data, kind, fm, target_policy, gamma=None, lr=5e-3, iters=10000, batch_size=256,
                        eval_every=100, avg_last=10, stream=None, beta=None, squared=False,
                        optimizer="gd", eval_size=1024, theta0=None, ustat=False,
                        precond_jitter=PRECOND_JITTER):
    """Minibatch descent on the kernel loss of a linear-in-features bridge.

    Each iteration draws ``batch_size`` tuples (and as many initial
    observations) and steps along the exact gradient of the V-statistic.
    Every ``eval_every`` iterations the loss on a fixed evaluation batch and
    the plug-in value are recorded; the returned bridge averages the
    coefficients of the last ``avg_last`` records.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown loss kind {kind!r}")
    if batch_size < 2 or iters < 1 or eval_every < 1 or avg_last < 1 or lr <= 0:
        raise ValidationError("invalid training hyper-parameters")
    if optimizer not in OPTIMIZERS:
        raise ValidationError(f"unknown optimizer {optimizer!r}")
    gamma = data.gamma if gamma is None else gamma
    rng = np.random.default_rng(0) if stream is None else stream
    if beta is None:
        beta = default_bandwidth(kind, data, rng)
    n, n0 = data.n, data.init_obs.shape[0]
    p = None if data.weights is None else data.weights
    p0 = None if data.init_weights is None else data.init_weights
    eval_idx = rng.choice(n, eval_size, replace=True, p=p)
    eval_init = rng.choice(n0, eval_size, replace=True, p=p0)
    eval_q = loss_quadratic(kind, _sampled_batch(data, eval_idx, eval_init, fm, target_policy), gamma, beta, squared)
    theta = np.zeros(fm.dim) if theta0 is None else np.array(theta0, dtype=float)
    if optimizer == "precond":
        # fixed preconditioner: inverse Hessian of the evaluation-batch loss
        H = eval_q.Q + precond_jitter * np.trace(eval_q.Q) / fm.dim * np.eye(fm.dim)
        precond = np.linalg.inv(H)
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    trace = TrainingTrace()
    for it in range(1, iters + 1):
        idx = rng.choice(n, batch_size, replace=True, p=p)
        init_idx = rng.choice(n0, batch_size, replace=True, p=p0)
        q = loss_quadratic(kind, _sampled_batch(data, idx, init_idx, fm, target_policy), gamma, beta, squared,
                           ustat=ustat)
        g = q.grad(theta)
        if optimizer == "gd":
            theta = theta - lr * g
        elif optimizer == "precond":
            theta = theta - lr * (precond @ g)
        else:
            m1 = 0.9 * m1 + 0.1 * g
            m2 = 0.999 * m2 + 0.001 * g * g
            theta = theta - lr * (m1 / (1 - 0.9**it)) / (np.sqrt(m2 / (1 - 0.999**it)) + 1e-8)
        if it % eval_every == 0:
            loss = eval_q.value(theta)
            if not np.isfinite(loss) or not np.all(np.isfinite(theta)):
                raise NumericalError(f"loss diverged at iteration {it} (lr={lr} too large?)")
            est = kernel_value_estimate(kind, bridge_from_theta(kind, fm, theta, target_policy), data,
                                        target_policy, gamma).estimate
            trace.iterations.append(it)
            trace.losses.append(loss)
            trace.estimates.append(est)
            trace.thetas.append(theta.copy())
    if not trace.thetas:
        trace.thetas.append(theta.copy())
    theta_avg = np.mean(trace.thetas[-avg_last:], axis=0)
    return bridge_from_theta(kind, fm, theta_avg, target_policy), trace


def _sampled_batch(data, idx, init_idx, fm, target_policy):
    # sampling already follows the row weights, so the batch is equally weighted
    batch = make_batch(data, idx, fm, target_policy, init_idx)
    batch.weights = np.full(len(idx), 1.0 / len(idx))
    batch.init_weights = np.full(len(init_idx), 1.0 / len(init_idx))
    return batch


def _laplace_matvec_1d(x, v, scale):
    """sum_j exp(-|x_i - x_j| / scale) v_j for scalar points in O(n log n)."""
    order = np.argsort(x, kind="stable")
    xs = x[order].tolist()
    vs = v[order].tolist()
    n = len(xs)
    left = [0.0] * n
    right = [0.0] * n
    acc = 0.0
    for j in range(1, n):
        acc = math.exp(-(xs[j] - xs[j - 1]) / scale) * (acc + vs[j - 1])
        left[j] = acc
    acc = 0.0
    for j in range(n - 2, -1, -1):
        acc = math.exp(-(xs[j + 1] - xs[j]) / scale) * (acc + vs[j + 1])
        right[j] = acc
    out = np.empty(n)
    out[order] = np.asarray(vs) + np.asarray(left) + np.asarray(right)
    return out


def _quad_form_blocked(x, actions, v, beta, squared, num_actions, chunk=2048):
    """v^T K v for the action-blocked kernel on points (actions_i, x_i)."""
    total = 0.0
    for a in range(num_actions):
        sel = actions == a
        xa, va = x[sel], v[sel]
        if va.size == 0:
            continue
        if xa.shape[1] == 1 and not squared:
            total += float(va @ _laplace_matvec_1d(xa[:, 0], va, 2.0 * beta * beta))
            continue
        for s in range(0, va.size, chunk):
            total += float(va[s:s + chunk] @ rbf_kernel(xa[s:s + chunk], xa, beta, squared) @ va)
    return total


def bellman_residual_certificate(bridge, data, target_policy, gamma=None, beta=None, squared=False):
    """PO-MQL loss of a value bridge over the full dataset.

    Residual e_i = R_i pi_i + gamma pi_i sum_a b(a, O+_i) - b(A_i, O_i) with
    pi_i = pi_e(A_i | O_i), weighted by the kernel on (A, O-).
    """
    if bridge.role != VALUE:
        raise ValidationError("certificate needs a value bridge")
    gamma = data.gamma if gamma is None else gamma
    beta = default_bandwidth("pomql", data) if beta is None else beta
    pi = target_policy.prob_of(data.a, data.o)
    resid = data.r * pi + gamma * pi * bridge.all_actions(data.o_plus).sum(axis=1) - bridge(data.a, data.o)
    w = np.full(data.n, 1.0 / data.n) if data.weights is None else data.weights
    v = resid * w
    if data.discrete:
        # aggregate by (a, o-) cell, then a tiny kernel matrix per action
        nO = data.num_obs
        cells = np.zeros((data.num_actions, nO))
        np.add.at(cells, (data.a, data.o_minus), v)
        emb = obs_embedding(np.arange(nO), True, nO)
        k = rbf_kernel(emb, emb, beta, squared)
        return float(sum(c @ k @ c for c in cells))
    x = _as_points(data.o_minus)
    return _quad_form_blocked(x, data.a, v, beta, squared, data.num_actions)
