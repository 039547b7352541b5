"""Batch harness: loads data, discovers/predicts blankets, builds every
mechanism across the privacy-budget sweep, audits each, and evaluates all of
them under one common context-keyed loss model.

Mechanisms are compared by lifting each matrix onto the union-lag key set and
scoring it against a tensor built from raw (unsmoothed) transition counts, so
the feasible-set nesting between the LP variants holds exactly.
"""

import math
import os
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import audit as audit_mod
from . import blanket as blanket_mod
from .geo import Key, LocationDomain, ContextWeights, key_metric, metric_id, plain_key
from .lp import LpSolution, build_cmdp_reduced_lp, build_mdp_lp, solve
from .mechanisms import MatrixMeta, PerturbationMatrix, exp_mechanism, expected_loss
from .priors import PriorModel, TrajectoryLog, estimate_priors, load_trajectories, task_prior
from .roadnet import RoadGraph, load_graph
from .utility import CostTensor, cost_context_blanket, cost_context_free

MECHANISMS = ("lp", "expmech", "lp-markov1", "lp-blanket", "lp-blanket-oracle")

WORKERS_ENV = "CTXMDP_WORKERS"


@dataclass(frozen=True)
class ExperimentConfig:
    nodes_file: str
    edges_file: str
    trajectories_file: str
    outdir: str
    gamma: int = 2
    eta_km: float = 5.0
    eps_list: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    weights_alpha: float = 0.5
    mechanisms: tuple[str, ...] = MECHANISMS
    seed: int = 0
    task_prior_mode: str = "uniform"
    train_fraction: float = 0.8
    region_rows: int = 4
    region_cols: int = 5
    tol: float = 1e-8
    engine: str = "highs"
    workers: int = 0  # 0: take CTXMDP_WORKERS, default 1
    record_timings: bool = False
    n_permutations: int = 300

    def __post_init__(self):
        if any(e <= 0.0 for e in self.eps_list):
            raise ValueError("every eps must be > 0")
        if self.eta_km < 0.0:
            raise ValueError("eta must be >= 0")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")
        for mech in self.mechanisms:
            if mech not in MECHANISMS:
                raise ValueError(f"unknown mechanism {mech!r}")

    def effective_workers(self) -> int:
        if self.workers > 0:
            return self.workers
        env = os.environ.get(WORKERS_ENV, "")
        return max(1, int(env)) if env.isdigit() and int(env) > 0 else 1


@dataclass
class SweepContext:
    cfg: ExperimentConfig
    g: RoadGraph
    dom: LocationDomain
    model: PriorModel
    p_task: dict[str, float]
    weights: ContextWeights
    lags_oracle: tuple[int, ...]
    lags_predicted: tuple[int, ...]
    eval_lags: tuple[int, ...]
    eval_keys: list[Key]
    eval_cost: CostTensor
    eval_prior: dict[Key, float]


@dataclass
class SweepCell:
    mechanism: str
    eps: float
    expected_loss_km: float | None
    max_pl: float | None
    passed: bool
    build_s: float | None
    solve_s: float | None
    error: str | None = None
    objective: float | None = None


def _mechanism_lags(ctx: SweepContext, name: str) -> tuple[int, ...]:
    return {
        "lp": (),
        "expmech": (),
        "lp-markov1": (1,),
        "lp-blanket": ctx.lags_predicted,
        "lp-blanket-oracle": ctx.lags_oracle,
    }[name]


def _lag_weights(weights: ContextWeights, lags: tuple[int, ...]) -> tuple[float, ...]:
    return tuple(weights.weights[m - 1] for m in lags)


def discover_blankets(
    cfg: ExperimentConfig,
    g: RoadGraph,
    train: TrajectoryLog,
    evaluation: TrajectoryLog,
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """CI-tested blanket on the pooled training sample, and the decision
    table's majority prediction over the evaluation split's feature bins."""
    pooled = blanket_mod.pooled_ci_sample(train, g, cfg.gamma)
    if cfg.gamma < 1:
        return (), ()
    oracle = blanket_mod.identify_blanket(
        pooled, cfg.gamma, seed=cfg.seed, n_permutations=cfg.n_permutations
    ).lags

    lats = [p.lat for p in g.nodes.values()]
    lons = [p.lon for p in g.nodes.values()]
    pad = 1e-6
    grids = blanket_mod.BinningGrids(
        region_rows=cfg.region_rows,
        region_cols=cfg.region_cols,
        lat_min=min(lats) - pad,
        lat_max=max(lats) + pad,
        lon_min=min(lons) - pad,
        lon_max=max(lons) + pad,
    )
    bins = blanket_mod.partition_dataset(train, g, cfg.gamma, grids)
    labels: list[tuple[blanket_mod.FeatureBin, int, str]] = []
    for i, (fb, sample) in enumerate(bins.items()):
        if not sample.usable:
            continue
        res = blanket_mod.identify_blanket(
            sample,
            cfg.gamma,
            seed=cfg.seed * 7919 + i,
            n_permutations=cfg.n_permutations,
        )
        labels.extend((fb, m, lab) for m, lab in sorted(res.labels.items()))
    predictor = blanket_mod.train_predictor(labels)

    eval_log = evaluation if evaluation.trajectories else train
    eval_bins = blanket_mod.partition_dataset(eval_log, g, cfg.gamma, grids)
    votes: Counter = Counter()
    for fb, sample in eval_bins.items():
        lags = blanket_mod.predict_blanket(
            predictor, fb.time_bin, fb.speed_bin, fb.region_bin, cfg.gamma
        )
        votes[lags] += sample.n
    predicted = sorted(votes.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))[0][0]
    return oracle, predicted


def prepare_context(cfg: ExperimentConfig) -> SweepContext:
    g = load_graph(cfg.nodes_file, cfg.edges_file)
    full_log = load_trajectories(cfg.trajectories_file)
    n_train = max(1, int(round(len(full_log.trajectories) * cfg.train_fraction)))
    train = TrajectoryLog(full_log.trajectories[:n_train])
    evaluation = TrajectoryLog(full_log.trajectories[n_train:])

    model = estimate_priors(train, g, cfg.gamma)
    p_task = task_prior(model, cfg.task_prior_mode)
    weights = ContextWeights.geometric(cfg.gamma, cfg.weights_alpha)

    if cfg.gamma >= 1:
        lags_oracle, lags_predicted = discover_blankets(cfg, g, train, evaluation)
    else:
        lags_oracle, lags_predicted = (), ()

    secrets = sorted({x for (x, _ctx) in model.transition_counts})
    dom = LocationDomain([(x, g.nodes[x]) for x in secrets])

    needed = {"lp-markov1": (1,), "lp-blanket": lags_predicted,
              "lp-blanket-oracle": lags_oracle}
    union: set[int] = set()
    for mech in cfg.mechanisms:
        union.update(needed.get(mech, ()))
    eval_lags = tuple(sorted(union)) if union else ()

    eval_keys = model.transition_keys(eval_lags)
    eval_prior = model.transition_weights(eval_lags)
    eval_cost = cost_context_blanket(
        g, model, dom, eval_keys, lags=eval_lags, p_task=p_task, smoothing=False
    )
    return SweepContext(
        cfg=cfg,
        g=g,
        dom=dom,
        model=model,
        p_task=p_task,
        weights=weights,
        lags_oracle=lags_oracle,
        lags_predicted=lags_predicted,
        eval_lags=eval_lags,
        eval_keys=eval_keys,
        eval_cost=eval_cost,
        eval_prior=eval_prior,
    )


def build_mechanism(
    ctx: SweepContext, name: str, eps: float
) -> tuple[PerturbationMatrix, dict[Key, float], tuple[int, ...], float, float]:
    """Build one mechanism; returns (matrix, its prior, lags, build_s, solve_s)."""
    cfg = ctx.cfg
    lags = _mechanism_lags(ctx, name)
    lag_w = _lag_weights(ctx.weights, lags)
    dist = key_metric(ctx.dom, lag_w)
    t0 = time.perf_counter()
    if name == "expmech":
        q = exp_mechanism(
            [plain_key(x) for x in ctx.dom.secrets],
            list(ctx.dom.outputs),
            lambda k, y: ctx.dom.distance(k[0], y),
            eps,
            eta=cfg.eta_km,
        )
        prior = {plain_key(x): ctx.model.p_x[x] for x in ctx.dom.secrets}
        build_s = time.perf_counter() - t0
        return q, prior, lags, build_s, 0.0
    if name == "lp":
        cost = cost_context_free(ctx.g, ctx.model, ctx.dom, p_task=ctx.p_task)
        prior = {plain_key(x): ctx.model.p_x[x] for x in ctx.dom.secrets}
        lp = build_mdp_lp(cost, prior, dist, eps, cfg.eta_km, metric=metric_id(lag_w))
    else:
        keys = ctx.model.transition_keys(lags)
        prior = ctx.model.transition_weights(lags)
        cost = cost_context_blanket(
            ctx.g, ctx.model, ctx.dom, keys, lags=lags, p_task=ctx.p_task,
            smoothing=False,
        )
        lp = build_cmdp_reduced_lp(
            cost, prior, dist, eps, cfg.eta_km, metric=metric_id(lag_w)
        )
        lp.meta["builder"] = name
    build_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    sol = solve(lp, engine=cfg.engine)
    solve_s = time.perf_counter() - t0
    if sol.status != "optimal":
        raise RuntimeError(f"solver returned {sol.status} for {name} at eps={eps}")
    return sol.matrix, prior, lags, build_s, solve_s


def lift_matrix(
    q: PerturbationMatrix,
    mech_lags: tuple[int, ...],
    eval_lags: tuple[int, ...],
    eval_keys: list[Key],
) -> PerturbationMatrix:
    """Reindex a coarse-keyed matrix onto the union-lag evaluation keys."""
    positions = [eval_lags.index(m) for m in mech_lags]
    rows = np.array(
        [q.row((x, tuple(ctx[p] for p in positions))) for (x, ctx) in eval_keys]
    )
    return PerturbationMatrix(
        eval_keys, q.outputs, rows, replace(q.meta, lags=eval_lags)
    )


def run_cell(ctx: SweepContext, name: str, eps: float) -> SweepCell:
    cfg = ctx.cfg
    try:
        q, prior, lags, build_s, solve_s = build_mechanism(ctx, name, eps)
        dist = key_metric(ctx.dom, _lag_weights(ctx.weights, lags))
        report = audit_mod.audit_mechanism(q, dist, prior, eps, cfg.eta_km, cfg.tol)
        lifted = lift_matrix(q, lags, ctx.eval_lags, ctx.eval_keys)
        loss = expected_loss(lifted, ctx.eval_cost, ctx.eval_prior)
        max_pl = max(report.leakage.pl.values()) if report.leakage.pl else 0.0
        return SweepCell(
            mechanism=name,
            eps=eps,
            expected_loss_km=loss,
            max_pl=max_pl,
            passed=report.passed,
            build_s=build_s if cfg.record_timings else None,
            solve_s=solve_s if cfg.record_timings else None,
        )
    except Exception as exc:  # recorded per cell, the run continues
        return SweepCell(
            mechanism=name,
            eps=eps,
            expected_loss_km=None,
            max_pl=None,
            passed=False,
            build_s=None,
            solve_s=None,
            error=f"{type(exc).__name__}: {exc}",
        )


def run_sweep(cfg: ExperimentConfig, ctx: SweepContext | None = None) -> list[SweepCell]:
    if ctx is None:
        ctx = prepare_context(cfg)
    cells = [(name, eps) for name in cfg.mechanisms for eps in cfg.eps_list]
    workers = ctx.cfg.effective_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: run_cell(ctx, *c), cells))
    else:
        results = [run_cell(ctx, name, eps) for name, eps in cells]
    results.sort(key=lambda cell: (cell.mechanism, cell.eps))
    return results


def _cell_value(value: float | None, fmt: str = "%.12g") -> str:
    if value is None:
        return "NA"
    if math.isinf(value):
        return "inf"
    return fmt % value


def write_sweep(cells: list[SweepCell], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("mechanism,epsilon,expected_loss_km,max_pl,pass,build_s,solve_s\n")
        for cell in cells:
            loss = (
                f"error:{cell.error.split(':')[0]}"
                if cell.error is not None
                else _cell_value(cell.expected_loss_km)
            )
            fh.write(
                f"{cell.mechanism},{cell.eps:.17g},{loss},"
                f"{_cell_value(cell.max_pl)},"
                f"{'true' if cell.passed else 'false'},"
                f"{_cell_value(cell.build_s, '%.3f')},"
                f"{_cell_value(cell.solve_s, '%.3f')}\n"
            )


def read_sweep(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        for line in fh:
            rows.append(dict(zip(header, line.rstrip("\n").split(","))))
    return rows
