"""Command line front end.

Subcommands: calibrate, route, evaluate, simulate, cluster.  Outputs are
deterministic for a fixed seed and are written atomically.  Exit codes:

    0  success
    2  unreadable or invalid input data (also argparse usage errors)
    3  no usable records (nothing resolves to any group)
    4  invalid tolerance or other invalid parameter
    5  policy file with an unsupported schema version
    6  --stp requested but token counts are missing
    7  invalid synthetic spec
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .calibration import (
    LabelAssigner,
    PolicyVersionError,
    TrivialAssigner,
    calibrate_gpac,
    load_policy,
    route,
    save_policy,
)
from .clustering import ClusterConfig, calibrate_cpac, kmeans_1d
from .estimator import EstimatorConfig
from .evaluation import evaluate
from .io import atomic_write_json, atomic_write_text, load_records
from .records import LossSpec, default_loss_spec, resolve_loss
from .simulation import coverage_experiment, load_spec

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_RECORDS = 3
EXIT_BAD_PARAM = 4
EXIT_POLICY_VERSION = 5
EXIT_MISSING_TOKENS = 6
EXIT_BAD_SPEC = 7


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str) -> _CliError:
    return _CliError(code, message)


def _check_params(args) -> None:
    if getattr(args, "epsilon", None) is not None and not args.epsilon > 0:
        raise _fail(EXIT_BAD_PARAM, f"invalid tolerance: epsilon must be positive, got {args.epsilon}")
    if getattr(args, "alpha", None) is not None and not 0.0 < args.alpha < 1.0:
        raise _fail(EXIT_BAD_PARAM, f"alpha must lie in (0, 1), got {args.alpha}")
    if getattr(args, "pi", None) is not None and not 0.0 < args.pi <= 1.0:
        raise _fail(EXIT_BAD_PARAM, f"pi must lie in (0, 1], got {args.pi}")
    if getattr(args, "m", None) is not None and args.m < 1:
        raise _fail(EXIT_BAD_PARAM, f"m must be positive, got {args.m}")
    if getattr(args, "bound_b", None) is not None and not args.bound_b > 0:
        raise _fail(EXIT_BAD_PARAM, f"loss bound B must be positive, got {args.bound_b}")
    if getattr(args, "n_min", None) is not None and args.n_min < 0:
        raise _fail(EXIT_BAD_PARAM, f"n-min must be non-negative, got {args.n_min}")
    if getattr(args, "k", None) is not None and args.k < 1:
        raise _fail(EXIT_BAD_PARAM, f"k must be at least 1, got {args.k}")
    if getattr(args, "split_fraction", None) is not None and not 0.0 < args.split_fraction < 1.0:
        raise _fail(EXIT_BAD_PARAM, f"split-fraction must lie in (0, 1), got {args.split_fraction}")
    if getattr(args, "joint_slack", None) is not None and args.joint_slack < 0:
        raise _fail(EXIT_BAD_PARAM, f"joint-slack must be non-negative, got {args.joint_slack}")
    if getattr(args, "trials", None) is not None and args.trials < 1:
        raise _fail(EXIT_BAD_PARAM, f"trials must be at least 1, got {args.trials}")


def _loss_spec(args) -> LossSpec:
    if args.bound_b is None:
        return default_loss_spec(args.loss_kind)
    try:
        return LossSpec(kind=args.loss_kind, bound_B=args.bound_b)
    except ValueError as exc:
        raise _fail(EXIT_BAD_PARAM, str(exc)) from exc


def _read_records(args):
    try:
        records, ignored = load_records(args.records, args.format)
    except (OSError, ValueError) as exc:
        raise _fail(EXIT_INPUT, f"cannot read records: {exc}") from exc
    if ignored:
        print(f"warning: ignored {ignored} unknown field(s) in {args.records}", file=sys.stderr)
    if not records:
        raise _fail(EXIT_NO_RECORDS, f"no records found in {args.records}")
    return records


def _resolve_all(records, spec: LossSpec):
    try:
        return [resolve_loss(r, spec) for r in records]
    except ValueError as exc:
        raise _fail(EXIT_INPUT, f"cannot resolve losses: {exc}") from exc


def _load_policy(path):
    try:
        return load_policy(path)
    except PolicyVersionError as exc:
        raise _fail(EXIT_POLICY_VERSION, str(exc)) from exc
    except (OSError, ValueError, KeyError) as exc:
        raise _fail(EXIT_INPUT, f"cannot read policy: {exc}") from exc


def _estimator_config(args) -> EstimatorConfig:
    spec = _loss_spec(args) if hasattr(args, "loss_kind") else default_loss_spec("precomputed")
    bound = args.bound_b if args.bound_b is not None else spec.bound_B
    return EstimatorConfig(
        method=args.method, alpha=args.alpha, pi=args.pi,
        m=args.m, seed=args.seed, bound_B=bound,
    )


def cmd_calibrate(args) -> int:
    _check_params(args)
    records = _resolve_all(_read_records(args), _loss_spec(args))
    config = _estimator_config(args)
    try:
        if args.mode == "cpac":
            if args.k is None:
                raise _fail(EXIT_BAD_PARAM, "cpac calibration needs --k")
            cluster = ClusterConfig(
                k=args.k, mode=args.cluster_mode, split_fraction=args.split_fraction,
                joint_slack=args.joint_slack, seed=args.seed,
            )
            policy, report = calibrate_cpac(records, cluster, args.epsilon, config, n_min=args.n_min)
        else:
            assigner = TrivialAssigner() if args.mode == "marginal" else LabelAssigner()
            policy, report = calibrate_gpac(
                records, assigner, args.epsilon, config, mode=args.mode, n_min=args.n_min
            )
    except ValueError as exc:
        message = str(exc)
        if "resolves" in message:
            raise _fail(EXIT_NO_RECORDS, message) from exc
        raise _fail(EXIT_BAD_PARAM, message) from exc
    save_policy(policy, args.out)
    if args.report:
        atomic_write_json(report.to_dict(), args.report)
    for t in policy.thresholds:
        shown = "always_think" if t.always_think else f"{t.threshold:.6g}"
        print(f"group {t.group_key}: threshold {shown} (n={t.n_calibration})")
    if report.n_unresolved:
        print(f"excluded {report.n_unresolved} record(s) with unresolvable group")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_route(args) -> int:
    policy = _load_policy(args.policy)
    records = _read_records(args)
    try:
        decisions = [route(policy, r.group_label, r.uncertainty, record_id=r.id) for r in records]
    except ValueError as exc:
        raise _fail(EXIT_INPUT, str(exc)) from exc
    atomic_write_text(
        "".join(json.dumps(d.to_dict()) + "\n" for d in decisions), args.out
    )
    cheap = sum(d.action == "cheap" for d in decisions)
    unresolved = sum(d.group_key is None for d in decisions)
    print(f"cheap {cheap} think {len(decisions) - cheap} (unresolved group {unresolved})")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _check_params(args)
    policy = _load_policy(args.policy)
    records = _resolve_all(_read_records(args), _loss_spec(args))
    try:
        report = evaluate(
            records, policy, trials=args.trials, seed=args.seed, stp_variant=args.stp
        )
    except ValueError as exc:
        message = str(exc)
        if "tokens" in message or "STP" in message:
            raise _fail(EXIT_MISSING_TOKENS, message) from exc
        raise _fail(EXIT_INPUT, message) from exc
    atomic_write_json(report.to_dict(), args.out)
    print(f"error {report.error:.6g} gap {report.error_gap:.6g}")
    if report.stp is not None:
        print(f"stp[{report.stp_variant}] {100.0 * report.stp:.2f}%")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    _check_params(args)
    try:
        spec = load_spec(args.spec)
    except (OSError, ValueError, KeyError) as exc:
        raise _fail(EXIT_BAD_SPEC, f"invalid synthetic spec: {exc}") from exc
    config = EstimatorConfig(
        method=args.ucb, alpha=args.alpha, pi=args.pi, m=args.m,
        seed=args.seed, bound_B=args.bound_b if args.bound_b is not None else 1.0,
    )
    cluster = None
    if args.sim_method == "cpac":
        if args.k is None:
            raise _fail(EXIT_BAD_PARAM, "cpac simulation needs --k")
        cluster = ClusterConfig(
            k=args.k, mode=args.cluster_mode, split_fraction=args.split_fraction,
            joint_slack=args.joint_slack, seed=args.seed,
        )
    try:
        report = coverage_experiment(
            spec, args.n_cal, args.trials, args.epsilon, args.alpha,
            args.sim_method, config, cluster,
        )
    except ValueError as exc:
        raise _fail(EXIT_BAD_PARAM, str(exc)) from exc
    atomic_write_json(report.to_dict(), args.out)
    worst = min(report.per_group_coverage.values())
    print(f"coverage(min) {worst:.4f} efficiency {report.efficiency:.4f} over {report.trials} trials")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    _check_params(args)
    records = _read_records(args)
    try:
        partition = kmeans_1d([r.uncertainty for r in records], args.k)
    except ValueError as exc:
        raise _fail(EXIT_BAD_PARAM, str(exc)) from exc
    atomic_write_json(partition.to_dict(), args.out)
    centroids = " ".join(f"{c:.6g}" for c in partition.centroids)
    print(f"centroids {centroids}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _add_records_arguments(parser) -> None:
    parser.add_argument("--records", required=True, help="records file (JSONL or CSV)")
    parser.add_argument("--format", choices=("jsonl", "csv"), default=None,
                        help="records format; default follows the file extension")


def _add_loss_arguments(parser) -> None:
    parser.add_argument("--loss-kind", choices=("precomputed", "binary", "cosine"),
                        default="precomputed", help="how to obtain each record's loss")
    parser.add_argument("--bound-b", type=float, default=None,
                        help="a-priori loss bound B; defaults to 1 (2 for cosine)")


def _add_estimator_arguments(parser) -> None:
    parser.add_argument("--alpha", type=float, default=0.05, help="confidence level of the bound")
    parser.add_argument("--pi", type=float, default=0.5, help="importance-sampling keep probability")
    parser.add_argument("--m", type=int, default=None,
                        help="importance draws per group; default ceil(n / pi)")
    parser.add_argument("--seed", type=int, default=0, help="master seed for all randomness")


def _add_cluster_arguments(parser, *, required_k: bool) -> None:
    parser.add_argument("--k", type=int, default=None, required=required_k,
                        help="number of learned groups")
    parser.add_argument("--cluster-mode", choices=("split", "joint"), default="split",
                        help="fit groups on a held-out split, or reuse all records with slack")
    parser.add_argument("--split-fraction", type=float, default=0.5,
                        help="fraction of records used for clustering in split mode")
    parser.add_argument("--joint-slack", type=float, default=0.0,
                        help="bound inflation paid for data reuse in joint mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pac-route",
        description="Calibrate, apply, and verify risk-controlled routing between "
        "a thinking and a non-thinking model.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="learn per-group thresholds from calibration records")
    _add_records_arguments(p)
    _add_loss_arguments(p)
    p.add_argument("--mode", choices=("marginal", "gpac", "cpac"), default="gpac",
                   help="one pooled group, labeled groups, or learned score clusters")
    p.add_argument("--epsilon", type=float, required=True, help="loss tolerance per group")
    p.add_argument("--method", choices=("clt", "hoeffding"), default="clt",
                   help="upper confidence bound construction")
    _add_estimator_arguments(p)
    p.add_argument("--n-min", type=int, default=10,
                   help="groups below this size always route to the thinking model")
    _add_cluster_arguments(p, required_k=False)
    p.add_argument("--out", required=True, help="policy JSON output path")
    p.add_argument("--report", default=None, help="optional per-group diagnostics JSON")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("route", help="apply a policy to records")
    p.add_argument("--policy", required=True, help="policy JSON from calibrate")
    _add_records_arguments(p)
    p.add_argument("--out", required=True, help="decisions JSONL output path")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("evaluate", help="score a policy on held-out records")
    p.add_argument("--policy", required=True, help="policy JSON from calibrate")
    _add_records_arguments(p)
    _add_loss_arguments(p)
    p.add_argument("--stp", choices=("cascade", "router"), default=None,
                   help="also report saved thinking percentage under this accounting")
    p.add_argument("--trials", type=int, default=1,
                   help="bootstrap resamples for trial-averaged group errors")
    p.add_argument("--seed", type=int, default=0, help="seed for the resamples")
    p.add_argument("--out", required=True, help="metrics JSON output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="Monte Carlo coverage check on a synthetic spec")
    p.add_argument("--spec", required=True, help="synthetic population spec JSON")
    p.add_argument("--method", dest="sim_method", choices=("marginal", "gpac", "cpac"),
                   default="gpac", help="calibration scheme under test")
    p.add_argument("--n-cal", type=int, required=True, help="calibration records per trial")
    p.add_argument("--trials", type=int, default=500, help="number of Monte Carlo trials")
    p.add_argument("--epsilon", type=float, required=True, help="loss tolerance per group")
    p.add_argument("--ucb", choices=("clt", "hoeffding"), default="clt",
                   help="upper confidence bound construction")
    _add_estimator_arguments(p)
    _add_cluster_arguments(p, required_k=False)
    p.add_argument("--out", required=True, help="coverage report JSON output path")
    p.set_defaults(func=cmd_simulate)
    p.add_argument("--bound-b", type=float, default=None, help="a-priori loss bound B")

    p = sub.add_parser("cluster", help="fit a k-group partition of the uncertainty axis")
    _add_records_arguments(p)
    p.add_argument("--k", type=int, required=True, help="number of clusters")
    p.add_argument("--out", required=True, help="partition JSON output path")
    p.set_defaults(func=cmd_cluster)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
