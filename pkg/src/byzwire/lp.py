"""Exact dense-tableau simplex over Fractions.

Schedule synthesis re-runs independently on every node and the results must
agree bit for bit, so the solver avoids floats entirely and resolves every
pivot choice by lowest index (Bland's rule, which also rules out cycling).
Two-phase dense tableau, nonnegative variables, nothing clever: instances
here are a few dozen rows and that is a design assumption, not an accident.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LpResult:
    status: str
    objective: Fraction
    x: tuple[Fraction, ...]


def _pivot(matrix, rhs, basis, r, c):
    piv = matrix[r][c]
    matrix[r] = [v / piv for v in matrix[r]]
    rhs[r] /= piv
    prow, pb = matrix[r], rhs[r]
    for i in range(len(matrix)):
        if i == r:
            continue
        f = matrix[i][c]
        if f:
            matrix[i] = [v - f * w for v, w in zip(matrix[i], prow)]
            rhs[i] -= f * pb
    basis[r] = c


def _run(matrix, rhs, basis, cost, enterable):
    """Minimize cost over the current basis; lowest-index entering column,
    lowest (ratio, basis index) leaving row. Reduced costs are recomputed
    from scratch each iteration, which is wasteful and obviously right."""
    while True:
        zrow = list(cost)
        for r, b in enumerate(basis):
            cb = cost[b]
            if cb:
                row = matrix[r]
                zrow = [z - cb * v for z, v in zip(zrow, row)]
        enter = next((j for j in enterable if zrow[j] < 0), -1)
        if enter < 0:
            return OPTIMAL
        leave = None
        for r in range(len(matrix)):
            a = matrix[r][enter]
            if a > 0:
                key = (rhs[r] / a, basis[r])
                if leave is None or key < leave[0]:
                    leave = (key, r)
        if leave is None:
            return UNBOUNDED
        _pivot(matrix, rhs, basis, leave[1], enter)


def solve_lp(
    c: Sequence,
    a_ub: Sequence[Sequence] = (),
    b_ub: Sequence = (),
    a_eq: Sequence[Sequence] = (),
    b_eq: Sequence = (),
    maximize: bool = True,
) -> LpResult:
    """Optimize c.x subject to a_ub.x <= b_ub, a_eq.x = b_eq, x >= 0."""
    c = [Fraction(v) for v in c]
    n = len(c)
    raw = [(list(a), Fraction(b), True) for a, b in zip(a_ub, b_ub, strict=True)]
    raw += [(list(a), Fraction(b), False) for a, b in zip(a_eq, b_eq, strict=True)]
    m_ub = len(b_ub)
    m = len(raw)
    cols = n + m_ub
    matrix: list[list[Fraction]] = []
    rhs: list[Fraction] = []
    for i, (a, b, is_ub) in enumerate(raw):
        if len(a) != n:
            raise ValueError(f"row {i} has {len(a)} coefficients, expected {n}")
        row = [Fraction(v) for v in a] + [Fraction(0)] * m_ub
        if is_ub:
            row[n + i] = Fraction(1)
        if b < 0:
            row = [-v for v in row]
            b = -b
        matrix.append(row)
        rhs.append(b)

    # rows whose slack survived the sign flip start basic on it; the rest
    # (equalities, flipped inequalities) get an artificial
    basis = [-1] * m
    art_start = cols
    for i in range(m):
        if i < m_ub and matrix[i][n + i] == 1:
            basis[i] = n + i
        else:
            for row in matrix:
                row.append(Fraction(0))
            matrix[i][-1] = Fraction(1)
            basis[i] = cols
            cols += 1

    if cols > art_start:
        p1_cost = [Fraction(0)] * cols
        for j in range(art_start, cols):
            p1_cost[j] = Fraction(1)
        _run(matrix, rhs, basis, p1_cost, range(art_start))
        if sum((rhs[r] for r in range(m) if basis[r] >= art_start), Fraction(0)):
            return LpResult(INFEASIBLE, Fraction(0), (Fraction(0),) * n)
        # artificials still basic sit at zero: pivot them onto a real
        # column, or drop the row as redundant
        for r in range(m - 1, -1, -1):
            if basis[r] < art_start:
                continue
            j = next((j for j in range(art_start) if matrix[r][j]), -1)
            if j >= 0:
                _pivot(matrix, rhs, basis, r, j)
            else:
                del matrix[r], rhs[r], basis[r]
        m = len(matrix)

    cost = [Fraction(0)] * cols
    for j in range(n):
        cost[j] = -c[j] if maximize else c[j]
    status = _run(matrix, rhs, basis, cost, range(art_start))
    x = [Fraction(0)] * n
    for r in range(m):
        if basis[r] < n:
            x[basis[r]] = rhs[r]
    obj = sum((cj * xj for cj, xj in zip(c, x)), Fraction(0))
    return LpResult(status, obj, tuple(x))
