"""Single-executable batch harness.

Subcommands: synth | priors | mech | audit | sweep | stats-corr | stats-density.
Exit codes: 0 success, 1 audit failure, 2 I/O or config error, 3 solver
non-optimal. Flags may be seeded from an optional key=value config file
(explicit flags win); the ``CTXMDP_WORKERS`` env var caps sweep concurrency.
"""

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import audit as audit_mod
from . import stats as stats_mod
from .geo import (
    LocationDomain,
    format_key,
    key_metric,
    load_locations,
    metric_id,
    parse_metric_id,
    plain_key,
)
from .lp import build_cmdp_reduced_lp, build_mdp_lp, export_lp
from .mechanisms import load_matrix, save_matrix
from .priors import estimate_priors, load_trajectories, task_prior
from .roadnet import load_graph
from .sweep import (
    MECHANISMS,
    ExperimentConfig,
    build_mechanism,
    prepare_context,
    run_sweep,
    write_sweep,
)
from .synth import SynthConfig, write_dataset
from .utility import cost_context_blanket, cost_context_free

EXIT_OK = 0
EXIT_AUDIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--gamma", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eta", type=float, default=5.0)
    p.add_argument("--weights-alpha", type=float, default=0.5)
    p.add_argument("--task-prior", default="uniform", choices=("uniform", "empirical"))
    p.add_argument("--train-fraction", type=float, default=0.8)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="ctxmdp",
        description="Build, audit, and sweep context-aware metric-DP "
        "perturbation mechanisms on road-network location domains.",
    )
    parser.add_argument("--config", help="optional key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    p = commands["synth"] = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--outdir", required=True)
    p.add_argument("--grid-rows", type=int, default=4)
    p.add_argument("--grid-cols", type=int, default=4)
    p.add_argument("--spacing-km", type=float, default=1.5)
    p.add_argument("--trajectories", type=int, default=60)
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--order", type=int, default=2, choices=(1, 2))
    p.add_argument("--seed", type=int, default=0)

    p = commands["priors"] = sub.add_parser("priors", help="estimate and export prior statistics")
    _add_data_args(p)
    p.add_argument("--outdir", required=True)

    p = commands["mech"] = sub.add_parser("mech", help="build one mechanism and write its matrix")
    _add_data_args(p)
    p.add_argument("--mechanism", required=True, choices=MECHANISMS)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--export-lp", dest="export_lp_path")
    p.add_argument("--engine", default="highs", choices=("highs", "bland"))

    p = commands["audit"] = sub.add_parser("audit", help="audit a serialized matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--eta", type=float, help="override the matrix header eta")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", help="report file (default: stdout summary only)")

    p = commands["sweep"] = sub.add_parser("sweep", help="mechanism x epsilon sweep with audits")
    _add_data_args(p)
    p.add_argument("--outdir", required=True)
    p.add_argument("--eps-list", default="0.1,0.2,0.3,0.4,0.5")
    p.add_argument("--mechanisms", default=",".join(MECHANISMS))
    p.add_argument("--engine", default="highs", choices=("highs", "bland"))
    p.add_argument("--workers", type=int, default=0)
    p.add_argument(
        "--timings",
        action="store_true",
        help="record wall-clock build/solve seconds (breaks byte-level "
        "determinism of the output; cells read NA otherwise)",
    )

    p = commands["stats-corr"] = sub.add_parser("stats-corr", help="feature vs p-value correlations")
    p.add_argument("--table", required=True, help="delimited table with a p_value column")
    p.add_argument("--out", required=True)

    p = commands["stats-density"] = sub.add_parser("stats-density", help="neighborhood density statistics")
    p.add_argument("--locations", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--radius-m", type=float, default=100.0)
    p.add_argument("--outdir", required=True)

    return parser, commands


def _apply_config(args, defaults: dict[str, str], actions, argv) -> None:
    """Fill config-file values onto args for flags not given on the line."""
    given: set[str] = set()
    for token in argv:
        if token.startswith("--"):
            given.add(token.split("=", 1)[0])
    for action in actions:
        if action.dest in ("help", "command") or action.dest not in defaults:
            continue
        if any(opt in given for opt in action.option_strings):
            continue
        raw = defaults[action.dest]
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            value = action.type(raw)
        else:
            value = raw
        setattr(args, action.dest, value)


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        rows=args.grid_rows,
        cols=args.grid_cols,
        spacing_km=args.spacing_km,
        n_trajectories=args.trajectories,
        steps=args.steps,
        order=args.order,
        seed=args.seed,
    )
    paths = write_dataset(cfg, args.outdir)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_priors(args) -> int:
    g = load_graph(args.nodes, args.edges)
    trajectory_log = load_trajectories(args.trajectories)
    model = estimate_priors(trajectory_log, g, args.gamma)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "priors_x.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,probability\n")
        for x, p in sorted(model.p_x.items()):
            fh.write(f"{x},{p:.17g}\n")
    with open(outdir / "priors_joint.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("key,probability\n")
        for key, p in sorted(model.p_joint.items()):
            fh.write(f"{format_key(key)},{p:.17g}\n")
    with open(outdir / "task_prior.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,probability\n")
        for n, p in sorted(task_prior(model, args.task_prior).items()):
            fh.write(f"{n},{p:.17g}\n")
    print(
        f"priors: {len(model.p_x)} locations, {len(model.p_joint)} joint keys, "
        f"gamma={args.gamma}"
    )
    return EXIT_OK


def _experiment_config(args, outdir: str, mechanisms=None, eps_list=None) -> ExperimentConfig:
    return ExperimentConfig(
        nodes_file=args.nodes,
        edges_file=args.edges,
        trajectories_file=args.trajectories,
        outdir=outdir,
        gamma=args.gamma,
        eta_km=args.eta,
        weights_alpha=args.weights_alpha,
        seed=args.seed,
        task_prior_mode=args.task_prior,
        train_fraction=args.train_fraction,
        eps_list=eps_list or (0.1, 0.2, 0.3, 0.4, 0.5),
        mechanisms=mechanisms or MECHANISMS,
        engine=getattr(args, "engine", "highs"),
        workers=getattr(args, "workers", 0),
        record_timings=getattr(args, "timings", False),
    )


def cmd_mech(args) -> int:
    cfg = _experiment_config(
        args,
        outdir=str(Path(args.out).parent),
        mechanisms=(args.mechanism,),
        eps_list=(args.eps,),
    )
    ctx = prepare_context(cfg)
    try:
        q, _prior, lags, _build_s, _solve_s = build_mechanism(ctx, args.mechanism, args.eps)
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    save_matrix(q, args.out)
    if args.export_lp_path:
        _export_mechanism_lp(ctx, args, lags)
    print(f"mechanism {args.mechanism} eps={args.eps}: {args.out}")
    return EXIT_OK


def _export_mechanism_lp(ctx, args, lags) -> None:
    lag_w = tuple(ctx.weights.weights[m - 1] for m in lags)
    dist = key_metric(ctx.dom, lag_w)
    if args.mechanism in ("lp", "expmech"):
        cost = cost_context_free(ctx.g, ctx.model, ctx.dom, p_task=ctx.p_task)
        prior = {plain_key(x): ctx.model.p_x[x] for x in ctx.dom.secrets}
        lp = build_mdp_lp(cost, prior, dist, args.eps, args.eta, metric=metric_id(lag_w))
    else:
        keys = ctx.model.transition_keys(lags)
        prior = ctx.model.transition_weights(lags)
        cost = cost_context_blanket(
            ctx.g, ctx.model, ctx.dom, keys, lags=lags, p_task=ctx.p_task,
            smoothing=False,
        )
        lp = build_cmdp_reduced_lp(cost, prior, dist, args.eps, args.eta,
                                   metric=metric_id(lag_w))
    export_lp(lp, args.export_lp_path)


def cmd_audit(args) -> int:
    q = load_matrix(args.matrix)
    locations = load_locations(args.nodes)
    dom = LocationDomain(locations)
    weights = parse_metric_id(q.meta.metric)
    dist = key_metric(dom, weights)
    eta = args.eta if args.eta is not None else q.meta.eta
    # PL is prior-independent through the Bayes cancellation, so a uniform
    # prior keeps the audit self-contained without trajectory data.
    prior = {k: 1.0 / len(q.keys) for k in q.keys}
    report = audit_mod.audit_mechanism(q, dist, prior, q.meta.eps, eta, args.tol)
    if args.out:
        audit_mod.save_report(report, args.out)
    print(
        f"audit: max_violation={report.constraints.max_violation:.3g} "
        f"bound_margin={report.bound.margin:.3g} "
        f"pass={'true' if report.passed else 'false'}"
    )
    return EXIT_OK if report.passed else EXIT_AUDIT_FAIL


def cmd_sweep(args) -> int:
    eps_list = tuple(float(tok) for tok in args.eps_list.split(",") if tok)
    mechanisms = tuple(tok for tok in args.mechanisms.split(",") if tok)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = _experiment_config(args, outdir=str(outdir), mechanisms=mechanisms, eps_list=eps_list)
    cells = run_sweep(cfg)
    out = outdir / "sweep.csv"
    write_sweep(cells, out)
    failures = [c for c in cells if c.error]
    print(
        f"sweep: {len(cells)} cells -> {out}"
        + (f" ({len(failures)} failed)" if failures else "")
    )
    return EXIT_OK


def cmd_stats_corr(args) -> int:
    with open(args.table, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{args.table}: empty table")
    if "p_value" not in rows[0]:
        raise ValueError(f"{args.table}: missing 'p_value' column")
    pvalues = np.array([float(r["p_value"]) for r in rows])
    features = {
        name: np.array([float(r[name]) for r in rows])
        for name in rows[0]
        if name != "p_value"
    }
    table = stats_mod.correlation_table(features, pvalues)

    def fmt(v):
        return "undefined" if v is None else f"{v:.12g}"

    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("feature,pearson,spearman,kendall\n")
        for name, row in table.items():
            fh.write(f"{name},{fmt(row.pearson)},{fmt(row.spearman)},{fmt(row.kendall)}\n")
    print(f"stats-corr: {len(table)} features -> {args.out}")
    return EXIT_OK


def cmd_stats_density(args) -> int:
    points = [p for _i, p in load_locations(args.locations)]
    density = stats_mod.knn_density(points, args.k, args.radius_m)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "knn_distances.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("point_index,rank,distance_km\n")
        for i in range(density.knn_km.shape[0]):
            for r in range(density.knn_km.shape[1]):
                fh.write(f"{i},{r + 1},{density.knn_km[i, r]:.17g}\n")
    with open(outdir / "neighbor_count_ccdf.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("count_threshold,fraction\n")
        for c, frac in density.count_ccdf():
            fh.write(f"{c},{frac:.17g}\n")
    with open(outdir / "mean_knn_hist.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bin_lo_km,bin_hi_km,count\n")
        counts, edges = np.histogram(density.mean_knn_km, bins=20)
        for i, c in enumerate(counts):
            fh.write(f"{edges[i]:.17g},{edges[i + 1]:.17g},{int(c)}\n")
    print(f"stats-density: {len(points)} points -> {outdir}")
    return EXIT_OK


_HANDLERS = {
    "synth": cmd_synth,
    "priors": cmd_priors,
    "mech": cmd_mech,
    "audit": cmd_audit,
    "sweep": cmd_sweep,
    "stats-corr": cmd_stats_corr,
    "stats-density": cmd_stats_density,
}


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            defaults = _read_config_file(args.config)
        except (OSError, ValueError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        _apply_config(args, defaults, commands[args.command]._actions, argv)
    try:
        return _HANDLERS[args.command](args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
