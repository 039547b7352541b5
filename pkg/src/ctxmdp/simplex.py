"""Dense two-phase tableau simplex with Bland's rule.

Deterministic reference engine for desk-scale instances; Bland's pivot rule
rules out cycling, so termination is guaranteed. Solves

    min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  0 <= x <= ub
"""

import math
from dataclasses import dataclass

import numpy as np

_TOL = 1e-9


@dataclass
class SimplexResult:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None
    objective: float | None
    iterations: int


def solve_simplex_bland(
    c,
    a_ub=None,
    b_ub=None,
    a_eq=None,
    b_eq=None,
    ub=None,
) -> SimplexResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    a_ub = np.zeros((0, n)) if a_ub is None else np.asarray(a_ub, dtype=float)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    a_eq = np.zeros((0, n)) if a_eq is None else np.asarray(a_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)

    rows = []
    rhs = []
    kinds = []  # "ineq" rows get a slack, "eq" rows an artificial
    for i in range(a_ub.shape[0]):
        rows.append(a_ub[i])
        rhs.append(b_ub[i])
        kinds.append("ineq")
    if ub is not None:
        for j, u in enumerate(np.broadcast_to(ub, (n,))):
            if math.isfinite(u):
                e = np.zeros(n)
                e[j] = 1.0
                rows.append(e)
                rhs.append(float(u))
                kinds.append("ineq")
    for i in range(a_eq.shape[0]):
        rows.append(a_eq[i])
        rhs.append(b_eq[i])
        kinds.append("eq")

    m = len(rows)
    a = np.array(rows) if m else np.zeros((0, n))
    b = np.array(rhs)

    # Flip rows to make every right-hand side non-negative; a flipped
    # inequality's slack has coefficient -1 and cannot start in the basis.
    slack_sign = np.zeros(m)
    needs_artificial = np.zeros(m, dtype=bool)
    for i in range(m):
        flipped = b[i] < 0.0
        if flipped:
            a[i] = -a[i]
            b[i] = -b[i]
        if kinds[i] == "ineq":
            slack_sign[i] = -1.0 if flipped else 1.0
            needs_artificial[i] = flipped
        else:
            needs_artificial[i] = True

    n_slack = int(sum(1 for k in kinds if k == "ineq"))
    n_art = int(needs_artificial.sum())
    total = n + n_slack + n_art

    t = np.zeros((m, total + 1))
    t[:, :n] = a
    t[:, -1] = b
    basis = np.empty(m, dtype=int)
    si = n
    ai = n + n_slack
    for i in range(m):
        if kinds[i] == "ineq":
            t[i, si] = slack_sign[i]
            if not needs_artificial[i]:
                basis[i] = si
            si += 1
        if needs_artificial[i]:
            t[i, ai] = 1.0
            basis[i] = ai
            ai += 1

    iterations = 0

    def pivot(z: np.ndarray, max_col: int) -> str:
        nonlocal iterations
        while True:
            enter = -1
            for j in range(max_col):
                if z[j] < -_TOL:
                    enter = j
                    break
            if enter < 0:
                return "optimal"
            leave = -1
            best = math.inf
            for i in range(m):
                if t[i, enter] > _TOL:
                    ratio = t[i, -1] / t[i, enter]
                    if ratio < best - _TOL or (
                        abs(ratio - best) <= _TOL
                        and (leave < 0 or basis[i] < basis[leave])
                    ):
                        best = ratio
                        leave = i
            if leave < 0:
                return "unbounded"
            piv = t[leave, enter]
            t[leave] /= piv
            for i in range(m):
                if i != leave and t[i, enter] != 0.0:
                    t[i] -= t[i, enter] * t[leave]
            z -= z[enter] * t[leave]
            basis[leave] = enter
            iterations += 1

    if n_art:
        z1 = np.zeros(total + 1)
        z1[n + n_slack : total] = 1.0
        for i in range(m):
            if basis[i] >= n + n_slack:
                z1 -= t[i]
        status = pivot(z1, total)
        if status == "unbounded":  # phase 1 is bounded below by 0
            return SimplexResult("infeasible", None, None, iterations)
        phase1 = sum(t[i, -1] for i in range(m) if basis[i] >= n + n_slack)
        if phase1 > 1e-7:
            return SimplexResult("infeasible", None, None, iterations)
        # Drive remaining zero-level artificials out of the basis.
        for i in range(m):
            if basis[i] >= n + n_slack:
                for j in range(n + n_slack):
                    if abs(t[i, j]) > _TOL:
                        piv = t[i, j]
                        t[i] /= piv
                        for r in range(m):
                            if r != i and t[r, j] != 0.0:
                                t[r] -= t[r, j] * t[i]
                        basis[i] = j
                        break

    keep = [i for i in range(m) if basis[i] < n + n_slack]
    t2 = t[keep][:, list(range(n + n_slack)) + [total]]
    basis2 = basis[keep]
    m2 = len(keep)

    z2 = np.zeros(n + n_slack + 1)
    z2[:n] = c
    for i in range(m2):
        if z2[basis2[i]] != 0.0:
            z2 -= z2[basis2[i]] * t2[i]

    t, basis, m = t2, basis2, m2  # reuse pivot over the reduced tableau
    status = pivot(z2, n + n_slack)
    if status == "unbounded":
        return SimplexResult("unbounded", None, None, iterations)

    x = np.zeros(n + n_slack)
    for i in range(m):
        x[basis[i]] = t[i, -1]
    x = x[:n]
    return SimplexResult("optimal", x, float(c @ x), iterations)
