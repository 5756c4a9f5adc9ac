"""Action-blocked feature maps phi(a, o)."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ValidationError

ONE_HOT = "one-hot"
RFF = "random-fourier"


@dataclass(frozen=True)
class FeatureMap:
    """phi(a, o) places a per-observation block psi(o) in slot a of A blocks."""

    kind: str
    block_dim: int
    num_actions: int
    num_obs: Optional[int] = None
    obs_dim: Optional[int] = None
    freqs: Optional[np.ndarray] = None
    phases: Optional[np.ndarray] = None
    kernel_gamma: Optional[float] = None
    seed: Optional[int] = None

    @property
    def dim(self):
        return self.num_actions * self.block_dim

    def block(self, obs):
        """psi(o) for a batch of observations, shape (n, block_dim)."""
        if self.kind == ONE_HOT:
            idx = np.asarray(obs, dtype=int).reshape(-1)
            if idx.size and (idx.min() < 0 or idx.max() >= self.num_obs):
                raise ValidationError("observation index out of range")
            out = np.zeros((idx.size, self.block_dim))
            out[np.arange(idx.size), idx] = 1.0
            return out
        x = np.asarray(obs, dtype=float)
        if x.ndim <= 1:
            x = x.reshape(-1, 1)
        if x.shape[1] != self.obs_dim:
            raise ValidationError(f"observation dimension {x.shape[1]} != {self.obs_dim}")
        return np.sqrt(2.0 / self.block_dim) * np.cos(x @ self.freqs + self.phases)

    def __call__(self, actions, obs):
        """Full features phi(a_i, o_i), shape (n, dim)."""
        psi = self.block(obs)
        a = np.asarray(actions, dtype=int).reshape(-1)
        if a.size and (a.min() < 0 or a.max() >= self.num_actions):
            raise ValidationError("action index out of range")
        n, D = psi.shape
        out = np.zeros((n, self.num_actions, D))
        out[np.arange(n), a] = psi
        return out.reshape(n, self.dim)

    def all_actions(self, obs):
        """phi(a, o_i) for every action, shape (n, A, dim)."""
        psi = self.block(obs)
        n, D = psi.shape
        out = np.zeros((n, self.num_actions, self.num_actions, D))
        for a in range(self.num_actions):
            out[:, a, a] = psi
        return out.reshape(n, self.num_actions, self.dim)


def one_hot_features(num_actions, num_obs):
    if num_actions < 1 or num_obs < 1:
        raise ValidationError("num_actions and num_obs must be positive")
    return FeatureMap(ONE_HOT, block_dim=int(num_obs), num_actions=int(num_actions), num_obs=int(num_obs))


def sample_rff(obs_dim=1, num_features=100, kernel_gamma=5.0, num_actions=2, seed=0):
    """Random Fourier features for k(o, o') = exp(-kernel_gamma |o - o'|^2).

    With w ~ N(0, 2 gamma I) and b ~ U[0, 2 pi), E[2 cos(w.x + b) cos(w.y + b)]
    = E[cos(w.(x - y))] = exp(-|x - y|^2 2 gamma / 2), the Gaussian
    characteristic function, so the scaled inner product is unbiased.
    """
    if num_features < 1:
        raise ValidationError("num_features must be >= 1")
    if kernel_gamma <= 0:
        raise ValidationError("kernel_gamma must be positive")
    rng = np.random.default_rng(seed)
    freqs = rng.normal(0.0, np.sqrt(2.0 * kernel_gamma), size=(obs_dim, num_features))
    phases = rng.uniform(0.0, 2 * np.pi, size=num_features)
    freqs.setflags(write=False)
    phases.setflags(write=False)
    return FeatureMap(RFF, block_dim=int(num_features), num_actions=int(num_actions), obs_dim=int(obs_dim),
                      freqs=freqs, phases=phases, kernel_gamma=float(kernel_gamma), seed=seed)


def featurize(fm, action, obs):
    """Feature vector of a single (action, observation) pair."""
    if not 0 <= int(action) < fm.num_actions:
        raise ValidationError("action out of range")
    if fm.kind == RFF:
        x = np.asarray(obs, dtype=float).reshape(1, -1)
        if x.shape[1] != fm.obs_dim:
            raise ValidationError(f"observation dimension {x.shape[1]} != {fm.obs_dim}")
    else:
        x = np.asarray([obs])
    return fm(np.array([action]), x)[0]
