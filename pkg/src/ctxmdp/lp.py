"""LP formulations of optimal perturbation design: context-free, fully
context-augmented, blanket-reduced, and marginal-preserving refinement, plus
a pluggable solver contract (HiGHS default, dense Bland simplex reference)."""

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .geo import Key, format_key, neighbor_pairs
from .mechanisms import MatrixMeta, PerturbationMatrix
from .simplex import solve_simplex_bland
from .utility import CostTensor

# exp(eps * d) overflows past this point; such constraints are vacuous for
# probabilities in [0, 1] and are skipped at construction.
_EXP_OVERFLOW = 700.0

# Truncate solver round-off below this magnitude to exact zeros.
_CLIP = 1e-13


@dataclass
class LinearProgram:
    """Sparse LP over variables q[key, output], column index key-major.

    Inequalities mean a.q <= rhs; every variable appears in exactly one
    unit-measure equality row, and the pairwise rows come in swap-symmetric
    pairs (both directions per neighbor pair and output).
    """

    keys: list[Key]
    outputs: list[str]
    obj: np.ndarray
    ineq_rows: np.ndarray  # row index per nonzero
    ineq_cols: np.ndarray
    ineq_vals: np.ndarray
    ineq_rhs: np.ndarray
    eq_rows: np.ndarray
    eq_cols: np.ndarray
    eq_vals: np.ndarray
    eq_rhs: np.ndarray
    pairs: list[tuple[int, int, float]]  # neighbor pairs as key indices
    meta: dict = field(default_factory=dict)
    lb: float = 0.0
    ub: float = 1.0

    @property
    def n_vars(self) -> int:
        return len(self.keys) * len(self.outputs)

    @property
    def n_ineq(self) -> int:
        return int(self.ineq_rhs.size)

    @property
    def n_eq(self) -> int:
        return int(self.eq_rhs.size)

    def col(self, key_idx: int, out_idx: int) -> int:
        return key_idx * len(self.outputs) + out_idx

    def a_ub(self) -> coo_matrix:
        return coo_matrix(
            (self.ineq_vals, (self.ineq_rows, self.ineq_cols)),
            shape=(self.n_ineq, self.n_vars),
        )

    def a_eq(self) -> coo_matrix:
        return coo_matrix(
            (self.eq_vals, (self.eq_rows, self.eq_cols)),
            shape=(self.n_eq, self.n_vars),
        )


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded | error
    objective: float | None
    matrix: PerturbationMatrix | None
    max_primal_infeasibility: float
    engine: str


def _build(
    cost: CostTensor,
    prior: dict[Key, float],
    dist: Callable[[Key, Key], float],
    eps: float,
    eta: float,
    builder: str,
    metric: str,
) -> LinearProgram:
    if eps <= 0.0:
        raise ValueError(f"eps must be > 0, got {eps}")
    keys = list(cost.keys)
    outputs = list(cost.outputs)
    n_out = len(outputs)
    for k in keys:
        if k not in prior:
            raise KeyError(f"prior is missing mass for key {format_key(k)!r}")

    p = np.array([prior[k] for k in keys])
    obj = (p[:, None] * cost.c).reshape(-1)

    index = {k: i for i, k in enumerate(keys)}
    raw_pairs = neighbor_pairs(keys, dist, eta)
    pairs = [(index[a], index[b], d) for a, b, d in raw_pairs]

    ineq_rows, ineq_cols, ineq_vals = [], [], []
    row = 0
    for i, j, d in pairs:
        if eps * d > _EXP_OVERFLOW:
            continue
        factor = math.exp(eps * d)
        for a, b in ((i, j), (j, i)):
            for y in range(n_out):
                ineq_rows.extend((row, row))
                ineq_cols.extend((a * n_out + y, b * n_out + y))
                ineq_vals.extend((1.0, -factor))
                row += 1

    eq_rows, eq_cols, eq_vals = [], [], []
    for ki in range(len(keys)):
        for y in range(n_out):
            eq_rows.append(ki)
            eq_cols.append(ki * n_out + y)
            eq_vals.append(1.0)

    return LinearProgram(
        keys=keys,
        outputs=outputs,
        obj=obj,
        ineq_rows=np.array(ineq_rows, dtype=int),
        ineq_cols=np.array(ineq_cols, dtype=int),
        ineq_vals=np.array(ineq_vals, dtype=float),
        ineq_rhs=np.zeros(row),
        eq_rows=np.array(eq_rows, dtype=int),
        eq_cols=np.array(eq_cols, dtype=int),
        eq_vals=np.array(eq_vals, dtype=float),
        eq_rhs=np.ones(len(keys)),
        pairs=pairs,
        meta={
            "eps": eps,
            "eta": eta,
            "metric": metric,
            "builder": builder,
            "lags": cost.lags,
        },
    )


def build_mdp_lp(
    cost: CostTensor,
    prior: dict[Key, float],
    dist: Callable[[Key, Key], float],
    eps: float,
    eta: float,
    metric: str = "haversine",
) -> LinearProgram:
    """Context-free program: pairwise ratio rows for every neighbor pair
    within eta plus one unit-measure row per key."""
    return _build(cost, prior, dist, eps, eta, "lp", metric)


def build_cmdp_full_lp(
    cost: CostTensor,
    prior: dict[Key, float],
    dist: Callable[[Key, Key], float],
    eps: float,
    eta: float,
    metric: str = "ctx",
) -> LinearProgram:
    """Same construction over fully context-augmented keys under the
    weighted context metric."""
    return _build(cost, prior, dist, eps, eta, "lp-ctx-full", metric)


def build_cmdp_reduced_lp(
    cost: CostTensor,
    prior: dict[Key, float],
    dist: Callable[[Key, Key], float],
    eps: float,
    eta: float,
    metric: str = "ctx",
) -> LinearProgram:
    """Blanket-reduced program; the caller guarantees the blanket metric
    never exceeds the full context metric on consistent projections."""
    return _build(cost, prior, dist, eps, eta, "lp-blanket", metric)


def build_refined_lp(
    cost: CostTensor,
    prior: dict[Key, float],
    dist: Callable[[Key, Key], float],
    eps: float,
    eta: float,
    qstar: PerturbationMatrix,
    project: Callable[[Key], Key],
    metric: str = "ctx",
) -> LinearProgram:
    """Full context program plus marginal-preservation rows: for every
    projected key and output, sum_v p(x,v) q[(x,v),y] = p(x,b) qstar[(x,b),y].
    """
    lp = _build(cost, prior, dist, eps, eta, "lp-ctx-refined", metric)
    if qstar.outputs != lp.outputs:
        raise ValueError("qstar outputs do not match the cost tensor outputs")
    groups: dict[Key, list[int]] = {}
    for ki, key in enumerate(lp.keys):
        groups.setdefault(project(key), []).append(ki)
    n_out = len(lp.outputs)
    rows = list(lp.eq_rows)
    cols = list(lp.eq_cols)
    vals = list(lp.eq_vals)
    rhs = list(lp.eq_rhs)
    row = len(rhs)
    for bkey in sorted(groups):
        members = groups[bkey]
        qi = qstar.key_index(bkey)  # raises for unmatched projections
        pb = sum(prior[lp.keys[ki]] for ki in members)
        for y in range(n_out):
            for ki in members:
                rows.append(row)
                cols.append(ki * n_out + y)
                vals.append(prior[lp.keys[ki]])
            rhs.append(pb * qstar.probs[qi, y])
            row += 1
    lp.eq_rows = np.array(rows, dtype=int)
    lp.eq_cols = np.array(cols, dtype=int)
    lp.eq_vals = np.array(vals, dtype=float)
    lp.eq_rhs = np.array(rhs, dtype=float)
    return lp


def add_invariance_rows(lp: LinearProgram, project: Callable[[Key], Key]) -> LinearProgram:
    """Append rows forcing q[k, y] = q[k0, y] for keys sharing a projection
    (the context-invariance constraints of a context-free mechanism)."""
    groups: dict[Key, list[int]] = {}
    for ki, key in enumerate(lp.keys):
        groups.setdefault(project(key), []).append(ki)
    n_out = len(lp.outputs)
    rows = list(lp.eq_rows)
    cols = list(lp.eq_cols)
    vals = list(lp.eq_vals)
    rhs = list(lp.eq_rhs)
    row = len(rhs)
    for bkey in sorted(groups):
        members = groups[bkey]
        for ki in members[1:]:
            for y in range(n_out):
                rows.extend((row, row))
                cols.extend((ki * n_out + y, members[0] * n_out + y))
                vals.extend((1.0, -1.0))
                rhs.append(0.0)
                row += 1
    out = LinearProgram(
        keys=lp.keys,
        outputs=lp.outputs,
        obj=lp.obj,
        ineq_rows=lp.ineq_rows,
        ineq_cols=lp.ineq_cols,
        ineq_vals=lp.ineq_vals,
        ineq_rhs=lp.ineq_rhs,
        eq_rows=np.array(rows, dtype=int),
        eq_cols=np.array(cols, dtype=int),
        eq_vals=np.array(vals, dtype=float),
        eq_rhs=np.array(rhs, dtype=float),
        pairs=lp.pairs,
        meta=dict(lp.meta, builder=lp.meta.get("builder", "") + "+invariance"),
    )
    return out


def _max_infeasibility(lp: LinearProgram, x: np.ndarray) -> float:
    worst = max(0.0, float((-x).max(initial=0.0)), float((x - lp.ub).max(initial=0.0)))
    if lp.n_ineq:
        resid = lp.a_ub().tocsr() @ x - lp.ineq_rhs
        worst = max(worst, float(resid.max(initial=0.0)))
    if lp.n_eq:
        resid = np.abs(lp.a_eq().tocsr() @ x - lp.eq_rhs)
        worst = max(worst, float(resid.max(initial=0.0)))
    return worst


def _wrap_solution(lp: LinearProgram, x: np.ndarray, engine: str) -> LpSolution:
    objective = float(lp.obj @ x)
    infeas = _max_infeasibility(lp, x)
    probs = x.reshape(len(lp.keys), len(lp.outputs)).copy()
    probs[np.abs(probs) < _CLIP] = 0.0
    meta = MatrixMeta(
        eps=float(lp.meta.get("eps", math.nan)),
        eta=float(lp.meta.get("eta", math.inf)),
        metric=str(lp.meta.get("metric", "haversine")),
        builder=str(lp.meta.get("builder", "lp")),
        lags=tuple(lp.meta.get("lags", ())),
    )
    matrix = PerturbationMatrix(lp.keys, lp.outputs, probs, meta, atol=1e-8)
    return LpSolution(
        status="optimal",
        objective=objective,
        matrix=matrix,
        max_primal_infeasibility=infeas,
        engine=engine,
    )


def solve(lp: LinearProgram, engine: str = "highs") -> LpSolution:
    """Solve to optimality or report a truthful infeasible/unbounded status.

    Deterministic given identical input ordering. Engines: ``highs`` (sparse,
    default) and ``bland`` (dense two-phase reference simplex).
    """
    if engine == "bland":
        res = solve_simplex_bland(
            lp.obj,
            a_ub=lp.a_ub().toarray() if lp.n_ineq else None,
            b_ub=lp.ineq_rhs if lp.n_ineq else None,
            a_eq=lp.a_eq().toarray() if lp.n_eq else None,
            b_eq=lp.eq_rhs if lp.n_eq else None,
            ub=lp.ub,
        )
        if res.status != "optimal":
            return LpSolution(res.status, None, None, math.inf, engine)
        return _wrap_solution(lp, res.x, engine)
    if engine != "highs":
        raise ValueError(f"unknown solver engine {engine!r}")
    res = linprog(
        lp.obj,
        A_ub=lp.a_ub().tocsr() if lp.n_ineq else None,
        b_ub=lp.ineq_rhs if lp.n_ineq else None,
        A_eq=lp.a_eq().tocsr() if lp.n_eq else None,
        b_eq=lp.eq_rhs if lp.n_eq else None,
        bounds=(lp.lb, lp.ub),
        method="highs",
        options={
            "presolve": True,
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    if res.status == 2:
        return LpSolution("infeasible", None, None, math.inf, engine)
    if res.status == 3:
        return LpSolution("unbounded", None, None, math.inf, engine)
    if res.status != 0:
        return LpSolution(f"error:{res.status}", None, None, math.inf, engine)
    return _wrap_solution(lp, np.asarray(res.x), engine)


def export_lp(lp: LinearProgram, path) -> None:
    """Self-describing delimited text export for external cross-checking."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# ctxmdp-lp v1\n")
        fh.write(f"vars={lp.n_vars} ineq={lp.n_ineq} eq={lp.n_eq}\n")
        fh.write("[objective]\n")
        for j, coef in enumerate(lp.obj):
            if coef != 0.0:
                fh.write(f"{j} {coef:.17g}\n")
        fh.write("[ineq]\n")
        by_row: dict[int, list[str]] = {}
        for r, c, v in zip(lp.ineq_rows, lp.ineq_cols, lp.ineq_vals):
            by_row.setdefault(int(r), []).append(f"{int(c)}:{v:.17g}")
        for r in range(lp.n_ineq):
            fh.write(f"{lp.ineq_rhs[r]:.17g} " + " ".join(by_row.get(r, [])) + "\n")
        fh.write("[eq]\n")
        by_row = {}
        for r, c, v in zip(lp.eq_rows, lp.eq_cols, lp.eq_vals):
            by_row.setdefault(int(r), []).append(f"{int(c)}:{v:.17g}")
        for r in range(lp.n_eq):
            fh.write(f"{lp.eq_rhs[r]:.17g} " + " ".join(by_row.get(r, [])) + "\n")
        fh.write(f"[bounds]\n{lp.lb:.17g} {lp.ub:.17g}\n")
        fh.write("[columns]\n")
        for ki, key in enumerate(lp.keys):
            for yi, y in enumerate(lp.outputs):
                fh.write(f"{lp.col(ki, yi)} {format_key(key)} {y}\n")
