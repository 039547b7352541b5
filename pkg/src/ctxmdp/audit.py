"""Mechanism audits: pairwise ratio-constraint verification, posterior
leakage via Bayes over outputs, and the leakage-vs-budget bound check."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geo import Key, format_key, neighbor_pairs
from .mechanisms import PerturbationMatrix

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8

# Mirrors the LP builder: pairs with exp(eps*d) overflow carry no constraint.
_EXP_OVERFLOW = 700.0


@dataclass
class ConstraintCheck:
    max_violation: float
    violating_pairs: list[tuple[Key, Key, float]]
    passed: bool
    tol: float


@dataclass
class LeakageReport:
    pl: dict[tuple[Key, Key], float]  # math.inf where one-sided support
    expected_pl: float
    pair_distance: dict[tuple[Key, Key], float]


@dataclass
class BoundCheck:
    passed: bool
    margin: float  # max over neighbor pairs of PL - eps*d (negative = slack)
    worst_pair: tuple[Key, Key] | None


@dataclass
class AuditReport:
    eps: float
    eta: float
    tol: float
    constraints: ConstraintCheck
    leakage: LeakageReport
    bound: BoundCheck
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.constraints.passed and self.bound.passed


def verify_mdp(
    q: PerturbationMatrix,
    dist: Callable[[Key, Key], float],
    eps: float,
    eta: float,
    tol: float = DEFAULT_TOL,
) -> ConstraintCheck:
    """Check q[i, y] <= exp(eps*d)*q[j, y] + tol in both directions for every
    neighbor pair within eta; reports the worst violation."""
    pairs = neighbor_pairs(q.keys, dist, eta)
    max_violation = 0.0
    violating: list[tuple[Key, Key, float]] = []
    for ki, kj, d in pairs:
        if eps * d > _EXP_OVERFLOW:
            continue
        factor = math.exp(eps * d)
        ri = q.row(ki)
        rj = q.row(kj)
        v = max(float((ri - factor * rj).max()), float((rj - factor * ri).max()))
        max_violation = max(max_violation, v)
        if v > tol:
            violating.append((ki, kj, v))
    return ConstraintCheck(
        max_violation=max_violation,
        violating_pairs=violating,
        passed=max_violation <= tol,
        tol=tol,
    )


def posterior_leakage(q: PerturbationMatrix, prior: dict[Key, float]) -> LeakageReport:
    """Per-pair posterior leakage sup_y |ln((post_i/post_j)/(p_i/p_j))| via
    Bayes over outputs, plus its expectation under the output marginal.

    Zero-mass keys are excluded with a warning; outputs where both rows are
    zero are skipped; one-sided support yields an infinite leakage.
    """
    included = [k for k in q.keys if prior.get(k, 0.0) > 0.0]
    dropped = [k for k in q.keys if k not in set(included)]
    if dropped:
        log.warning(
            "posterior_leakage: excluding %d zero-mass keys (e.g. %s)",
            len(dropped),
            format_key(dropped[0]),
        )
    if len(included) < 2:
        return LeakageReport(pl={}, expected_pl=0.0, pair_distance={})
    idx = [q.key_index(k) for k in included]
    p = np.array([prior[k] for k in included])
    probs = q.probs[idx]
    z = (p[:, None] * probs).sum(axis=0)  # output marginal
    with np.errstate(divide="ignore", invalid="ignore"):
        post = (p[:, None] * probs) / z
    pl: dict[tuple[Key, Key], float] = {}
    expected: list[float] = []
    for a in range(len(included)):
        for b in range(a + 1, len(included)):
            qa, qb = probs[a], probs[b]
            both = (qa > 0.0) & (qb > 0.0)
            one_sided = (qa > 0.0) ^ (qb > 0.0)
            if one_sided.any():
                value = math.inf
                exp_value = math.inf
            elif not both.any():
                value = 0.0
                exp_value = 0.0
            else:
                ratio = np.abs(
                    np.log(post[a, both] / post[b, both]) - math.log(p[a] / p[b])
                )
                value = float(ratio.max())
                exp_value = float((z[both] * ratio).sum())
            pl[(included[a], included[b])] = value
            expected.append(exp_value)
    return LeakageReport(
        pl=pl,
        expected_pl=float(np.mean(expected)) if expected else 0.0,
        pair_distance={},
    )


def check_pl_bound(
    leakage: LeakageReport,
    dist: Callable[[Key, Key], float],
    eps: float,
    eta: float = math.inf,
    tol: float = DEFAULT_TOL,
) -> BoundCheck:
    """Assert PL(i,j) <= eps*d(i,j) + tol for every pair within eta; pairs
    beyond eta stay diagnostic only."""
    margin = -math.inf
    worst: tuple[Key, Key] | None = None
    for (ki, kj), value in leakage.pl.items():
        d = dist(ki, kj)
        if not math.isfinite(d) or d > eta:
            continue
        excess = value - eps * d
        if excess > margin:
            margin = excess
            worst = (ki, kj)
    if worst is None:
        return BoundCheck(passed=True, margin=-math.inf, worst_pair=None)
    return BoundCheck(passed=margin <= tol, margin=margin, worst_pair=worst)


def audit_mechanism(
    q: PerturbationMatrix,
    dist: Callable[[Key, Key], float],
    prior: dict[Key, float],
    eps: float,
    eta: float,
    tol: float = DEFAULT_TOL,
) -> AuditReport:
    """Full audit: constraint verification, leakage, and the bound check."""
    constraints = verify_mdp(q, dist, eps, eta, tol)
    leakage = posterior_leakage(q, prior)
    leakage.pair_distance = {
        pair: dist(pair[0], pair[1]) for pair in leakage.pl
    }
    bound = check_pl_bound(leakage, dist, eps, eta, tol)
    return AuditReport(
        eps=eps, eta=eta, tol=tol, constraints=constraints,
        leakage=leakage, bound=bound,
    )


def _fmt(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.12g}"


def save_report(report: AuditReport, path) -> None:
    """``key_i,key_j,distance_km,pl,bound,slack`` rows plus a summary block."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("key_i,key_j,distance_km,pl,bound,slack\n")
        for (ki, kj), value in report.leakage.pl.items():
            d = report.leakage.pair_distance.get((ki, kj), math.nan)
            bound = report.eps * d
            fh.write(
                f"{format_key(ki)},{format_key(kj)},{_fmt(d)},{_fmt(value)},"
                f"{_fmt(bound)},{_fmt(bound - value)}\n"
            )
        fh.write("[summary]\n")
        fh.write(f"eps={_fmt(report.eps)}\n")
        fh.write(f"eta={_fmt(report.eta)}\n")
        fh.write(f"tol={report.tol:.3g}\n")
        fh.write(f"max_violation={_fmt(report.constraints.max_violation)}\n")
        finite = [v for v in report.leakage.pl.values() if math.isfinite(v)]
        max_pl = max(report.leakage.pl.values()) if report.leakage.pl else 0.0
        fh.write(f"max_pl={_fmt(max_pl)}\n")
        fh.write(f"max_finite_pl={_fmt(max(finite) if finite else 0.0)}\n")
        fh.write(f"expected_pl={_fmt(report.leakage.expected_pl)}\n")
        fh.write(f"bound_margin={_fmt(report.bound.margin)}\n")
        fh.write(f"pass={'true' if report.passed else 'false'}\n")
