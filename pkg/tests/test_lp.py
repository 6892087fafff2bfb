"""Tests for the exact simplex: hand cases, a vertex-enumeration oracle,
and the classic cycling trap."""

import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byzwire.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_lp


def solve_support(rows, rhs, cols):
    """Solve for x supported on cols with rows.x == rhs exactly.

    Returns the support values when the system is consistent and the chosen
    columns are independent, else None. Handles redundant rows.
    """
    aug = [[rows[r][j] for j in cols] + [rhs[r]] for r in range(len(rows))]
    width = len(cols)
    pivots = []
    row_at = 0
    for col in range(width):
        piv = next((r for r in range(row_at, len(aug)) if aug[r][col]), None)
        if piv is None:
            return None  # dependent support column, a smaller support covers it
        aug[row_at], aug[piv] = aug[piv], aug[row_at]
        inv = aug[row_at][col]
        aug[row_at] = [v / inv for v in aug[row_at]]
        for r in range(len(aug)):
            if r != row_at and aug[r][col]:
                f = aug[r][col]
                aug[r] = [v - f * w for v, w in zip(aug[r], aug[row_at])]
        pivots.append(col)
        row_at += 1
    if any(aug[r][-1] for r in range(row_at, len(aug))):
        return None  # inconsistent leftover rows
    return [aug[i][-1] for i in range(width)]


def vertex_oracle(c, a_ub=(), b_ub=(), a_eq=(), b_eq=()):
    """Best objective over basic feasible points of the standard form.

    Nonnegative variables make the polyhedron pointed, so feasibility is
    equivalent to some vertex existing, and a bounded optimum is attained at
    one. Supports are enumerated up to the row count, which tolerates
    redundant rows. Returns (status, best objective); unboundedness is not
    detected here.
    """
    n = len(c)
    m_ub, m_eq = len(b_ub), len(b_eq)
    rows = [list(map(Fraction, r)) + [Fraction(0)] * m_ub for r in a_ub]
    for i in range(m_ub):
        rows[i][n + i] = Fraction(1)
    rows += [list(map(Fraction, r)) + [Fraction(0)] * m_ub for r in a_eq]
    rhs = [Fraction(v) for v in list(b_ub) + list(b_eq)]
    nv = n + m_ub
    mr = m_ub + m_eq
    best = None
    for size in range(min(mr, nv) + 1):
        for cols in itertools.combinations(range(nv), size):
            sol = solve_support(rows, rhs, cols)
            if sol is None or any(v < 0 for v in sol):
                continue
            x = [Fraction(0)] * n
            for j, v in zip(cols, sol):
                if j < n:
                    x[j] = v
            obj = sum(ci * xi for ci, xi in zip(c, x))
            if best is None or obj > best:
                best = obj
    if best is None:
        return (INFEASIBLE, None)
    return (OPTIMAL, best)


class TestHandCases:
    def test_two_bounds(self):
        r = solve_lp([1, 1], a_ub=[[1, 0], [0, 1], [1, 1]], b_ub=[2, 3, 4])
        assert (r.status, r.objective) == (OPTIMAL, 4)

    def test_equality_mix(self):
        r = solve_lp([3, 2], a_ub=[[1, 0]], b_ub=[3], a_eq=[[1, 1]], b_eq=[4])
        assert (r.status, r.objective, r.x) == (OPTIMAL, 11, (3, 1))

    def test_infeasible(self):
        r = solve_lp([1], a_ub=[[1]], b_ub=[1], a_eq=[[1]], b_eq=[2])
        assert r.status == INFEASIBLE

    def test_unbounded(self):
        assert solve_lp([1]).status == UNBOUNDED
        r = solve_lp([1, -1], a_ub=[[0, 1]], b_ub=[5])
        assert r.status == UNBOUNDED

    def test_negative_rhs_row_flip(self):
        r = solve_lp([1], a_ub=[[-1]], b_ub=[-2], maximize=False)
        assert (r.status, r.objective) == (OPTIMAL, 2)

    def test_redundant_equalities(self):
        r = solve_lp([1, 1], a_eq=[[1, 1], [2, 2]], b_eq=[3, 6], a_ub=[[1, 0]], b_ub=[2])
        assert (r.status, r.objective) == (OPTIMAL, 3)

    def test_exact_fractions(self):
        r = solve_lp([Fraction(1, 3)], a_ub=[[Fraction(2, 7)]], b_ub=[Fraction(1, 2)])
        assert (r.objective, r.x) == (Fraction(7, 12), (Fraction(7, 4),))

    def test_minimize(self):
        r = solve_lp([2, 3], a_ub=[[-1, -1]], b_ub=[-4], maximize=False)
        assert (r.status, r.objective) == (OPTIMAL, 8)

    def test_zero_objective(self):
        r = solve_lp([0, 0], a_ub=[[1, 1]], b_ub=[1])
        assert (r.status, r.objective) == (OPTIMAL, 0)

    def test_row_length_mismatch(self):
        with pytest.raises(ValueError):
            solve_lp([1, 1], a_ub=[[1]], b_ub=[1])


class TestAgainstVertexOracle:
    def check(self, c, a_ub=(), b_ub=(), a_eq=(), b_eq=()):
        got = solve_lp(c, a_ub, b_ub, a_eq, b_eq)
        want_status, want_obj = vertex_oracle(c, a_ub, b_ub, a_eq, b_eq)
        if got.status == UNBOUNDED:
            # a vertex exists (feasible) and boxing the variables makes the
            # objective grow without bound
            assert want_status == OPTIMAL
            lo = solve_lp(c, list(a_ub) + [[1] * len(c)], list(b_ub) + [10**3], a_eq, b_eq)
            hi = solve_lp(c, list(a_ub) + [[1] * len(c)], list(b_ub) + [10**6], a_eq, b_eq)
            assert hi.objective > lo.objective
            return
        assert got.status == want_status
        if got.status == OPTIMAL:
            assert got.objective == want_obj
            # primal feasibility, exactly
            for row, b in zip(a_ub, b_ub):
                assert sum(r * x for r, x in zip(row, got.x)) <= b
            for row, b in zip(a_eq, b_eq):
                assert sum(r * x for r, x in zip(row, got.x)) == b
            assert all(v >= 0 for v in got.x)

    def test_cycling_prone_degenerate(self):
        # the textbook degenerate instance that cycles under the largest-
        # coefficient rule; lowest-index pivoting must terminate at -1/20
        c = [Fraction(3, 4), -150, Fraction(1, 50), -6]
        a_ub = [
            [Fraction(1, 4), -60, Fraction(-1, 25), 9],
            [Fraction(1, 2), -90, Fraction(-1, 50), 3],
            [0, 0, 1, 0],
        ]
        b_ub = [0, 0, 1]
        got = solve_lp(c, a_ub, b_ub)
        _, want = vertex_oracle(c, a_ub, b_ub)
        assert got.status == OPTIMAL
        assert got.objective == want == Fraction(1, 20)

    @given(data=st.data())
    @settings(max_examples=120, deadline=None)
    def test_random_instances(self, data):
        n = data.draw(st.integers(1, 3), label="vars")
        m_ub = data.draw(st.integers(0, 3), label="ub rows")
        m_eq = data.draw(st.integers(0, 2), label="eq rows")
        coef = st.integers(-5, 5)
        a_ub = [
            [data.draw(coef) for _ in range(n)] for _ in range(m_ub)
        ]
        b_ub = [data.draw(coef) for _ in range(m_ub)]
        a_eq = [
            [data.draw(coef) for _ in range(n)] for _ in range(m_eq)
        ]
        b_eq = [data.draw(coef) for _ in range(m_eq)]
        c = [data.draw(coef) for _ in range(n)]
        self.check(c, a_ub, b_ub, a_eq, b_eq)
