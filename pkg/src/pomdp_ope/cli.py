"""Command line entry point: ``pomdp-ope <subcommand>``."""

import argparse
import csv
import json
import logging
import sys
import warnings

import numpy as np

from .core import BanditDataset, NumericalError, TabularPolicy, ValidationError, uniform_policy
from .dr import cross_fit_dr, dr_estimate, linear_fit_procedure
from .environments import (
    behavior_sigmoid,
    make_1d_process,
    make_binary_confounded_pomdp,
    make_random_bandit_pomdp,
    sample_bandit,
    target_sigmoid,
)
from .features import one_hot_features, sample_rff
from .harness import (
    RAW_COLUMNS,
    SUMMARY_COLUMNS,
    SweepConfig,
    ToyConfig,
    run_1d_sweep,
    run_toy_table,
    write_csv,
)
from .kernel import KINDS, OPTIMIZERS, kernel_value_estimate, train_bridge_kernel
from .linear import (
    average_over_seeds,
    estimate_value,
    fit_value_bridge_linear,
    fit_weight_bridge_linear,
    lstdq_baseline,
)
from .rng import derive_seed, derive_stream
from .simulation import exact_value_estimate, load_dataset, monte_carlo_value, save_dataset, simulate_dataset
from .tabular_id import check_rank_conditions, estimate_bandit_matrices

log = logging.getLogger("pomdp_ope")

ENVS = ("binary-toy", "dyn1d", "random-bandit")
EVAL_METHODS = ("vm", "is", "dr", "dr-crossfit", "lstdq") + KINDS
BANDIT_COLUMNS = ("o_minus", "a", "o", "r")


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _make_env(args):
    """(env, behavior, target) for the requested environment."""
    if args.env == "binary-toy":
        return make_binary_confounded_pomdp(args.epsilon)
    if args.env == "dyn1d":
        return make_1d_process(args.sigma_o), behavior_sigmoid(), target_sigmoid(args.policy_w)
    return make_random_bandit_pomdp(args.num_states, args.num_obs, 2, args.seed)


def cmd_oracle(args):
    env, _, target = _make_env(args)
    stream = derive_stream(args.seed, "oracle")
    est = monte_carlo_value(env, target, args.rollouts, horizon_trunc=args.horizon, stream=stream)
    out = est.to_dict()
    if args.exact and env.discrete:
        out["exact"] = exact_value_estimate(env, target).estimate
    _print_json(out)


def cmd_simulate(args):
    env, behavior, _ = _make_env(args)
    stream = derive_stream(args.seed, "simulate")
    if args.env == "random-bandit":
        data = sample_bandit(env, behavior, args.n, stream)
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(BANDIT_COLUMNS)
            w.writerows(zip(data.o_minus.tolist(), data.a.tolist(), data.o.tolist(), data.r.tolist()))
    else:
        data = simulate_dataset(env, behavior, args.trajectories, args.horizon, stream,
                                env_id=args.env, seed=args.seed)
        save_dataset(data, args.out)
    log.info("wrote %d rows to %s", data.n, args.out)


def cmd_toy_table(args):
    cfg = ToyConfig(epsilon_list=tuple(args.epsilon_list), num_trajectories=args.trajectories,
                    master_seed=args.seed)
    rows = run_toy_table(cfg)
    write_csv(rows, args.out, ("epsilon", "truth", "proposed", "proposed_is", "naive", "n"))
    _print_json(rows)


def cmd_sweep_1d(args):
    cfg = SweepConfig.from_json(args.config)
    raw, summary = run_1d_sweep(cfg, progress=lambda i, n, r: log.info("sigma #%d n=%d rep=%d done", i, n, r))
    write_csv(raw, args.out, RAW_COLUMNS)
    write_csv(summary, args.summary, SUMMARY_COLUMNS)


def _target_for(data, args):
    if not data.discrete:
        return target_sigmoid(args.target_w)
    if args.target_table:
        with open(args.target_table) as fh:
            return TabularPolicy(np.asarray(json.load(fh), float))
    return uniform_policy(data.num_obs, data.num_actions)


def _feature_maps(data, args):
    if data.discrete:
        return [one_hot_features(data.num_actions, data.num_obs)]
    return [sample_rff(1, args.rff_d, args.rff_gamma, data.num_actions, derive_seed(args.seed, "rff", s))
            for s in range(args.rff_seeds)]


def _evaluate_one(method, data, target, fm, args):
    gamma = args.gamma
    if method == "vm":
        bridge = fit_value_bridge_linear(data, target, fm, reparam=not data.discrete)
        return estimate_value("vm", bridge, data, target, gamma)
    if method == "is":
        return estimate_value("is", fit_weight_bridge_linear(data, target, fm), data, target, gamma)
    if method == "lstdq":
        return lstdq_baseline(data, target, fm)
    if method in ("dr", "dr-crossfit"):
        proc = linear_fit_procedure(target, fm, reparam=not data.discrete)
        if method == "dr":
            return dr_estimate(*proc(data), data, target, gamma)
        return cross_fit_dr(data, proc, derive_seed(args.seed, "split"), target, gamma)
    bridge, _ = train_bridge_kernel(data, method, fm, target, gamma, lr=args.lr, iters=args.iters,
                                   optimizer=args.optimizer, stream=derive_stream(args.seed, "train"))
    return kernel_value_estimate(method, bridge, data, target, gamma)


def cmd_evaluate(args):
    data = load_dataset(args.data)
    if args.gamma is None:
        args.gamma = data.gamma
    elif abs(args.gamma - data.gamma) > 1e-12:
        data.gamma = args.gamma
    target = _target_for(data, args)
    ests = [_evaluate_one(args.method, data, target, fm, args) for fm in _feature_maps(data, args)]
    est = ests[0] if len(ests) == 1 else average_over_seeds(ests)
    _print_json(est.to_dict())


def read_bandit_csv(path, num_obs=None, num_actions=None):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != BANDIT_COLUMNS:
            raise ValidationError(f"expected header {','.join(BANDIT_COLUMNS)}")
        rows = np.array([[float(x) for x in r] for r in reader if r], dtype=float).reshape(-1, 4)
    if rows.shape[0] == 0:
        raise ValidationError("empty bandit file")
    om, a, o = (rows[:, k].astype(int) for k in range(3))
    n_obs = int(max(om.max(), o.max()) + 1) if num_obs is None else num_obs
    n_act = int(a.max() + 1) if num_actions is None else num_actions
    return BanditDataset(om, a, o, rows[:, 3], num_obs=n_obs, num_actions=n_act)


def cmd_rank_check(args):
    data = read_bandit_csv(args.data, args.num_obs, args.num_actions)
    mats = estimate_bandit_matrices(data, smooth=args.smooth)
    diag = check_rank_conditions(mats, args.tol, num_states=args.num_states)
    _print_json({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in diag.items()})


def _env_args(p, with_seed=True):
    p.add_argument("--env", choices=ENVS, required=True)
    p.add_argument("--epsilon", type=float, default=0.25, help="binary-toy confounding strength")
    p.add_argument("--sigma-o", type=float, default=1.0, help="dyn1d observation noise")
    p.add_argument("--policy-w", type=float, default=1.0, help="dyn1d target policy weight")
    p.add_argument("--num-states", type=int, default=3, help="random-bandit latent states")
    p.add_argument("--num-obs", type=int, default=3, help="random-bandit observations")
    if with_seed:
        p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="pomdp-ope", description="Off-policy evaluation in confounded POMDPs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("oracle", help="Monte Carlo value of the target policy")
    _env_args(p)
    p.add_argument("--rollouts", type=int, default=100000)
    p.add_argument("--horizon", type=int, default=None, help="truncation horizon (default: from tail bound)")
    p.add_argument("--exact", action="store_true", help="also report the exact tabular value")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("simulate", help="behavior-policy dataset as CSV")
    _env_args(p)
    p.add_argument("--trajectories", type=int, default=1000)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--n", type=int, default=10000, help="random-bandit sample size")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("toy-table", help="exact, proposed and naive values on the binary toy")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon-list", type=float, nargs="+", default=[0.25, 0.5, 0.75])
    p.add_argument("--trajectories", type=int, default=10000)
    p.set_defaults(func=cmd_toy_table)

    p = sub.add_parser("sweep-1d", help="noise and sample-size sweep on the 1D process")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary", required=True)
    p.set_defaults(func=cmd_sweep_1d)

    p = sub.add_parser("evaluate", help="estimate a target policy value from a tuple CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=EVAL_METHODS, required=True)
    p.add_argument("--target-w", type=float, default=1.0)
    p.add_argument("--target-table", default=None, help="JSON (O, A) table for discrete data")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--rff-d", type=int, default=100)
    p.add_argument("--rff-gamma", type=float, default=5.0)
    p.add_argument("--rff-seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--optimizer", choices=OPTIMIZERS, default="gd")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rank-check", help="rank diagnostics for a bandit CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--smooth", type=float, default=0.0)
    p.add_argument("--num-states", type=int, default=None)
    p.add_argument("--num-obs", type=int, default=None)
    p.add_argument("--num-actions", type=int, default=None)
    p.set_defaults(func=cmd_rank_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
