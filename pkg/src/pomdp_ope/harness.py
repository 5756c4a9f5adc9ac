"""Experiment orchestration: the binary toy table and the 1D noise/sample-size sweep."""

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import ValidationError
from .environments import behavior_sigmoid, make_1d_process, make_binary_confounded_pomdp, target_sigmoid
from .features import one_hot_features, sample_rff
from .linear import (
    estimate_value,
    fit_value_bridge_linear,
    fit_weight_bridge_linear,
    lstdq_baseline,
    obs_features,
)
from .metrics import ci_halfwidth, relative_bias, relative_mse
from .rng import derive_seed, derive_stream
from .simulation import exact_tabular_value, monte_carlo_value, simulate_dataset

log = logging.getLogger(__name__)

PROPOSED = "vm_linear"
NAIVE = "lstdq_naive"
RAW_COLUMNS = ("env", "sigma_o", "w", "n", "replication", "method", "estimate", "truth", "error")
SUMMARY_COLUMNS = ("sigma_o", "w", "n", "method", "replications", "rel_bias", "rel_mse", "ci_halfwidth")


@dataclass
class ToyConfig:
    epsilon_list: tuple = (0.25, 0.5, 0.75)
    num_trajectories: int = 10000
    horizon: int = 100
    obs_flip_prob: float = 0.3
    master_seed: int = 0


def run_toy_table(config=None):
    """Exact value, proposed one-hot estimators and naive LSTDQ for each epsilon."""
    config = ToyConfig() if config is None else config
    rows = []
    for i, eps in enumerate(config.epsilon_list):
        model, behavior, target = make_binary_confounded_pomdp(eps, config.obs_flip_prob)
        truth = exact_tabular_value(model, target, behavior, config.horizon).J
        data = simulate_dataset(model, behavior, config.num_trajectories, config.horizon,
                                derive_stream(config.master_seed, "toy", i), env_id="binary-toy",
                                seed=config.master_seed)
        fm = one_hot_features(model.num_actions, model.num_obs)
        vm = estimate_value("vm", fit_value_bridge_linear(data, target, fm), data, target).estimate
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            is_ = estimate_value("is", fit_weight_bridge_linear(data, target, fm), data, target).estimate
        naive = lstdq_baseline(data, target, fm).estimate
        rows.append({"epsilon": eps, "truth": truth, "proposed": vm, "proposed_is": is_, "naive": naive,
                     "n": data.n})
    return rows


@dataclass
class RFFConfig:
    gamma_k: float = 5.0
    D: int = 100
    seeds: int = 5


@dataclass
class SweepConfig:
    sigma_o_list: list = field(default_factory=lambda: [0.5, 1.0, 1.5])
    w_list: list = field(default_factory=lambda: [-3, -2, 1, 2])
    n_list: list = field(default_factory=lambda: [200000])
    replications: int = 10
    master_seed: int = 0
    rff: RFFConfig = field(default_factory=RFFConfig)
    gamma: float = 0.95
    horizon: int = 100
    truth_rollouts: int = 1000000

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "rff" in d:
            rff = d["rff"]
            rknown = {f.name for f in fields(RFFConfig)}
            if set(rff) - rknown:
                raise ValidationError(f"unknown rff keys: {sorted(set(rff) - rknown)}")
            d["rff"] = RFFConfig(**rff)
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self):
        if self.replications < 1 or self.horizon < 3:
            raise ValidationError("replications must be >= 1 and horizon >= 3")
        if any(n < self.horizon for n in self.n_list):
            raise ValidationError("every n must cover at least one trajectory")
        if any(s < 0 for s in self.sigma_o_list):
            raise ValidationError("sigma_o must be >= 0")
        if self.rff.D < 1 or self.rff.seeds < 1 or self.rff.gamma_k <= 0:
            raise ValidationError("invalid rff settings")

    def to_dict(self):
        return asdict(self)

    def trajectories(self, n):
        """n counts time points: n = trajectories x horizon."""
        return max(1, int(round(n / self.horizon)))


def sweep_truth(config, sigma_index, w):
    env = make_1d_process(config.sigma_o_list[sigma_index], config.gamma)
    stream = derive_stream(config.master_seed, "truth", sigma_index, int(round(w * 1000)))
    return monte_carlo_value(env, target_sigmoid(w), config.truth_rollouts, stream=stream).estimate


def run_cell(config, sigma_index, n, replication, truths):
    """All rows of one (sigma_o, n, replication) cell; the dataset is shared across w."""
    sigma = config.sigma_o_list[sigma_index]
    env = make_1d_process(sigma, config.gamma)
    data = simulate_dataset(env, behavior_sigmoid(), config.trajectories(n), config.horizon,
                            derive_stream(config.master_seed, "dataset", sigma_index, n, replication),
                            env_id="dyn1d")
    per = {(w, m): [] for w in config.w_list for m in (PROPOSED, NAIVE)}
    errors = {}
    for s in range(config.rff.seeds):
        seed = derive_seed(config.master_seed, "rff", sigma_index, n, replication, s)
        fm = sample_rff(1, config.rff.D, config.rff.gamma_k, 2, seed)
        feats = obs_features(fm, data)
        for w in config.w_list:
            target = target_sigmoid(w)
            try:
                bridge = fit_value_bridge_linear(data, target, fm, reparam=True, feats=feats)
                per[(w, PROPOSED)].append(estimate_value("vm", bridge, data, target).estimate)
            except Exception as exc:  # flagged rows rather than an aborted sweep
                errors[(w, PROPOSED)] = repr(exc)
            try:
                per[(w, NAIVE)].append(lstdq_baseline(data, target, fm, feats=feats).estimate)
            except Exception as exc:
                errors[(w, NAIVE)] = repr(exc)
        del feats
    rows = []
    for w in config.w_list:
        for m in (PROPOSED, NAIVE):
            err = errors.get((w, m), "")
            est = float(np.mean(per[(w, m)])) if per[(w, m)] and not err else float("nan")
            rows.append({"env": "dyn1d", "sigma_o": sigma, "w": w, "n": n, "replication": replication,
                         "method": m, "estimate": est, "truth": truths[(sigma_index, w)], "error": err})
    return rows


def _row_key(r):
    return (r["sigma_o"], r["w"], r["n"], r["method"], r["replication"])


def summarize(raw_rows):
    groups = {}
    for r in raw_rows:
        groups.setdefault((r["sigma_o"], r["w"], r["n"], r["method"]), []).append(r)
    out = []
    for key in sorted(groups):
        rows = [r for r in groups[key] if not r["error"] and np.isfinite(r["estimate"])]
        if not rows:
            continue
        truth = rows[0]["truth"]
        est = [r["estimate"] for r in rows]
        out.append({"sigma_o": key[0], "w": key[1], "n": key[2], "method": key[3], "replications": len(rows),
                    "rel_bias": relative_bias(est, truth), "rel_mse": relative_mse(est, truth),
                    "ci_halfwidth": ci_halfwidth(np.asarray(est) / truth)})
    return out


def run_1d_sweep(config=None, truths=None, progress=None):
    """Raw per-replication rows and their summary.

    ``truths`` may map (sigma_index, w) to a precomputed value; missing
    entries come from Monte Carlo with ``truth_rollouts`` rollouts.
    """
    config = SweepConfig() if config is None else config
    config.validate()
    truths = dict(truths or {})
    for i in range(len(config.sigma_o_list)):
        for w in config.w_list:
            if (i, w) not in truths:
                truths[(i, w)] = sweep_truth(config, i, w)
    raw = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for i in range(len(config.sigma_o_list)):
            for n in config.n_list:
                for rep in range(config.replications):
                    raw.extend(run_cell(config, i, n, rep, truths))
                    if progress is not None:
                        progress(i, n, rep)
    raw.sort(key=_row_key)
    return raw, summarize(raw)


def write_csv(rows, path, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
