"""Tests for skew estimation, cycle checks, and delay bounds."""

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byzwire.clocks import (
    DELAY_BOUND,
    SKEW_CONSISTENCY,
    CycleTrace,
    HopStamps,
    SkewEstimate,
    TimingExchange,
    canonical_cycle,
    consistency_start_time,
    cycle_timeout,
    cycle_wait_bound,
    delay_sum_lower_bound,
    estimate_skew,
    find_inconsistent_cycles,
    min_delay_exhaustive,
    reference_clock,
    run_cycle_check,
)
from byzwire.errors import DegenerateExchange, Disconnected, IncompleteTrace
from byzwire.model import AffineClock, ClockParams, Digraph, frac


def est(i, j, a, b=0):
    return SkewEstimate(edge=(i, j), a_hat=frac(a), b_hat=frac(b))


def full_graph(n):
    nodes = frozenset(range(1, n + 1))
    edges = frozenset((i, j) for i in nodes for j in nodes if i != j)
    return Digraph(nodes=nodes, edges=edges)


class TestEstimateSkew:
    def test_identity_clocks(self):
        x = TimingExchange(edge=(1, 2), s1=0, r1=0, s2=10, r2=10)
        assert estimate_skew(x).a_hat == 1

    def test_direct_substitution(self):
        x = TimingExchange(edge=(1, 2), s1=0, r1=5, s2=10, r2=25)
        out = estimate_skew(x)
        assert out.a_hat == 2
        assert out.b_hat == 5

    def test_degenerate_exchange(self):
        x = TimingExchange(edge=(1, 2), s1=7, r1=3, s2=7, r2=9)
        with pytest.raises(DegenerateExchange):
            estimate_skew(x)

    @given(
        b_i=st.fractions(min_value=-2, max_value=2),
        b_j=st.fractions(min_value=-2, max_value=2),
        s1=st.integers(min_value=0, max_value=50),
        gap=st.integers(min_value=5, max_value=200),
    )
    @settings(max_examples=60)
    def test_quantization_error_bound(self, b_i, b_j, s1, gap):
        # oracle: exact affine clocks, quantized only at the stamps
        q = Fraction(1)
        sender = AffineClock(1, b_i)
        receiver = AffineClock(frac(3, 2), b_j)
        s2 = s1 + gap
        stamps = []
        for s in (s1, s2):
            t = sender.time_at(s * q)
            stamps.append(receiver.counts(t, q))
        x = TimingExchange(edge=(1, 2), s1=s1, r1=stamps[0], s2=s2, r2=stamps[1])
        out = estimate_skew(x)
        assert abs(out.a_hat - frac(3, 2)) <= Fraction(2, gap)


class TestInconsistentCycles:
    def triangle(self, a12, a23, a31):
        graph = full_graph(3)
        declared = {}
        for (i, j), a in (((1, 2), a12), ((2, 3), a23), ((3, 1), a31)):
            declared[(i, j)] = est(i, j, a)
            declared[(j, i)] = est(j, i, frac(1) / frac(a))
        return graph, declared

    def test_consistent_triangle(self):
        graph, declared = self.triangle(2, frac(1, 2), 1)
        assert find_inconsistent_cycles(graph, declared, frac(1, 20)) == []

    def test_inconsistent_triangle(self):
        graph, declared = self.triangle(2, 1, 1)
        flagged = find_inconsistent_cycles(graph, declared, frac(1, 20))
        assert flagged == [(1, 2, 3)]

    def test_flags_products_on_either_side_of_one(self):
        # product 1.051 one way (deviation 0.051 > eps) but 1000/1051 the
        # other (deviation ~0.0485 <= eps): one-directional deviations flag
        graph, declared = self.triangle(frac(1051, 1000), 1, 1)
        flagged = find_inconsistent_cycles(graph, declared, frac(1, 20))
        assert flagged == [(1, 2, 3)]

    def test_k5_bad_edge_flags_exactly_its_fundamental_cycle(self):
        # BFS from node 1 in the complete graph puts every other node in the
        # first layer, so the tree is the star at 1 and the fundamental
        # cycles are precisely the triangles (1, u, v) for non-tree edges
        # {u, v}. Inflating the declared skew on edge (2, 3) by 10% therefore
        # deviates exactly one of them.
        graph = full_graph(5)
        declared = {}
        for i, j in graph.edges:
            declared[(i, j)] = est(i, j, 1)
        declared[(2, 3)] = est(2, 3, frac(11, 10))
        flagged = find_inconsistent_cycles(graph, declared, frac(1, 20))
        expected = [
            cyc
            for cyc in (
                (1, 2, 3), (1, 2, 4), (1, 2, 5), (1, 3, 4), (1, 3, 5), (1, 4, 5),
            )
            if 2 in cyc and 3 in cyc
        ]
        assert flagged == expected == [(1, 2, 3)]

    def test_canonical_cycle_orientation(self):
        assert canonical_cycle([4, 2, 7, 5]) == (2, 4, 5, 7)
        assert canonical_cycle([3, 1, 2]) == (1, 2, 3)


class TestWaitingBounds:
    def test_start_time_small(self):
        params = ClockParams(a_max=1, U_0=0, quantum=1, eps_a=frac(1, 10))
        assert consistency_start_time(2, params) == 30

    def test_start_time_larger(self):
        params = ClockParams(a_max=2, U_0=1, quantum=1, eps_a=frac(1, 2))
        assert consistency_start_time(3, params) == 256

    def test_cycle_wait_bound(self):
        params = ClockParams(
            a_max=2, U_0=1, quantum=1, K=1, eps_a=frac(1, 10), eps_b=0
        )
        assert cycle_wait_bound(1, 3, params) == 40

    def test_cycle_timeout(self):
        params = ClockParams(a_max=2, U_0=1, quantum=1, K=1)
        assert cycle_timeout(3, params) == 12


class TestRunCycleCheck:
    def params(self, **kw):
        base = dict(a_max=1, U_0=0, quantum=1, K=1, eps_a=frac(1, 10), eps_b=0)
        base.update(kw)
        return ClockParams(**base)

    def truthful_declared(self):
        return {
            (1, 2): est(1, 2, 1),
            (2, 3): est(2, 3, 1),
            (3, 1): est(3, 1, 1),
        }

    def test_honest_cycle_passes(self):
        trace = CycleTrace(
            cycle=(1, 2, 3),
            hops=(
                HopStamps(send=50, recv=50),
                HopStamps(send=50, recv=50),
                HopStamps(send=51, recv=51),
            ),
        )
        verdict = run_cycle_check(trace, self.truthful_declared(), self.params())
        assert verdict.ok

    def test_delay_violation_blames_both_links(self):
        trace = CycleTrace(
            cycle=(1, 2, 3),
            hops=(
                HopStamps(send=50, recv=50),
                HopStamps(send=52, recv=52),  # node 2 sat on it for K+1
                HopStamps(send=52, recv=52),
            ),
        )
        verdict = run_cycle_check(trace, self.truthful_declared(), self.params())
        assert verdict.failed_links == {(1, 2), (2, 3)}
        assert verdict.violated[(1, 2)] == {DELAY_BOUND}

    def test_false_declaration_caught_either_way(self):
        # Node 2 declares skew 0.8 toward node 1 while every true clock is
        # identity. Whatever receive stamp it fabricates, physical causality
        # pins the honest stamps around it: forwarding to honest node 3
        # cannot happen before true time 50, and node 3's stamp is real.
        declared = self.truthful_declared()
        declared[(1, 2)] = est(1, 2, frac(4, 5))
        params = self.params()

        # strategy 1: satisfy the affine condition (stamp 40), eat the delay
        trace = CycleTrace(
            cycle=(1, 2, 3),
            hops=(
                HopStamps(send=50, recv=40),
                HopStamps(send=50, recv=50),
                HopStamps(send=50, recv=50),
            ),
        )
        v1 = run_cycle_check(trace, declared, params)
        assert v1.failed_links == {(1, 2), (2, 3)}
        assert DELAY_BOUND in v1.violated[(1, 2)]

        # strategy 2: stamp truthfully (50), breaking the declared map
        trace2 = CycleTrace(
            cycle=(1, 2, 3),
            hops=(
                HopStamps(send=50, recv=50),
                HopStamps(send=50, recv=50),
                HopStamps(send=50, recv=50),
            ),
        )
        v2 = run_cycle_check(trace2, declared, params)
        assert v2.failed_links == {(1, 2)}
        assert v2.violated[(1, 2)] == {SKEW_CONSISTENCY}

    def test_silent_node_with_timeout_fails_links(self):
        trace = CycleTrace(
            cycle=(1, 2, 3),
            hops=(
                HopStamps(send=50, recv=50),
                HopStamps(send=None, recv=None),
                HopStamps(send=None, recv=None),
            ),
            timeout_expired=True,
        )
        verdict = run_cycle_check(trace, self.truthful_declared(), self.params())
        assert verdict.failed_links == {(1, 2), (2, 3)}

    def test_silent_node_without_timeout_is_incomplete(self):
        trace = CycleTrace(
            cycle=(1, 2, 3),
            hops=(
                HopStamps(send=50, recv=50),
                HopStamps(send=None, recv=None),
                HopStamps(send=None, recv=None),
            ),
        )
        with pytest.raises(IncompleteTrace):
            run_cycle_check(trace, self.truthful_declared(), self.params())


class TestDelaySumBound:
    def test_truthful_declaration_unconstrained(self):
        hops = [est(1, 2, 1), est(2, 3, 1)]
        bound = delay_sum_lower_bound(hops, AffineClock(1, 0), AffineClock(1, 0), 100)
        assert bound <= 0

    def test_direct_substitution(self):
        # single declared hop 0.9 against identical true clocks; the bound
        # normalizes by the largest declared product toward the end, 0.9
        hops = [est(1, 2, frac(9, 10))]
        bound = delay_sum_lower_bound(
            hops, AffineClock(1, 0), AffineClock(1, 0), 1000
        )
        assert bound == Fraction(1000, 9)

    def brute_force_floor(self, hops, s0, floor_rn, cap):
        # independent of the kernel: straight recursive enumeration
        best = [None]

        def go(i, s_prev, spent):
            a, b = hops[i].a_hat, hops[i].b_hat
            img = a * s_prev + b
            if img.denominator != 1:
                return
            r = img.numerator
            if i == len(hops) - 1:
                if r >= floor_rn and (best[0] is None or spent < best[0]):
                    best[0] = spent
                return
            limit = cap if best[0] is None else best[0]
            for d in range(limit - spent):
                go(i + 1, r + d, spent + d)

        go(0, s0, 0)
        return -1 if best[0] is None else best[0]

    def test_exhaustive_search_never_beats_bound(self):
        import random

        rng = random.Random(20240817)
        checked = 0
        for _ in range(40):
            n_hops = rng.choice([2, 3])
            hops = []
            for k in range(n_hops):
                a = frac(rng.choice([1, 2]), rng.choice([1, 2]))
                b = frac(rng.randint(-2, 2))
                hops.append(est(k + 1, k + 2, a, b))
            first = AffineClock(1, 0)
            last = AffineClock(frac(rng.choice([1, 2])), frac(rng.randint(-1, 1)))
            s0 = rng.randint(40, 80)
            t1 = frac(s0)  # first clock is the identity, so tau = t1 = s0
            bound = delay_sum_lower_bound(hops, first, last, t1)
            floor_rn = -(-(last.raw(t1)).numerator // (last.raw(t1)).denominator)
            cap = 64
            got = min_delay_exhaustive(hops, s0, floor_rn, cap)
            assert got == self.brute_force_floor(hops, s0, floor_rn, cap)
            if got >= 0:
                checked += 1
                assert got >= bound
        assert checked >= 10  # the sweep must actually exercise the bound


class TestReferenceClock:
    def test_identity_at_root(self):
        graph = full_graph(2)
        declared = {(1, 2): est(1, 2, 2), (2, 1): est(2, 1, frac(1, 2))}
        out = reference_clock(graph, declared)
        assert out[1] == 1

    def test_chain_product(self):
        nodes = frozenset({1, 2, 3})
        edges = frozenset({(1, 2), (2, 1), (2, 3), (3, 2)})
        graph = Digraph(nodes=nodes, edges=edges)
        declared = {
            (2, 1): est(2, 1, 2),
            (1, 2): est(1, 2, frac(1, 2)),
            (3, 2): est(3, 2, 3),
            (2, 3): est(2, 3, frac(1, 3)),
        }
        out = reference_clock(graph, declared)
        assert out[3] == 6
        assert out[2] == 2

    def test_disconnected(self):
        nodes = frozenset({1, 2, 3})
        edges = frozenset({(1, 2), (2, 1)})
        graph = Digraph(nodes=nodes, edges=edges)
        with pytest.raises(Disconnected):
            reference_clock(graph, {(1, 2): est(1, 2, 1), (2, 1): est(2, 1, 1)})

    def test_surviving_path_error_within_eps(self):
        # square 1-2-4-3-1 with the 3-4 link pruned; true skews below, each
        # declared estimate off by at most eps_a/4, route to 4 must go 1-2-4
        eps_a = frac(1, 10)
        a = {1: frac(1), 2: frac(2), 3: frac(3, 2), 4: frac(4)}
        nodes = frozenset(a)
        edges = frozenset(
            {(1, 2), (2, 1), (1, 3), (3, 1), (2, 4), (4, 2)}
        )
        graph = Digraph(nodes=nodes, edges=edges)
        wiggle = eps_a / 4
        declared = {}
        for u, v in edges:
            true = a[v] / a[u]
            declared[(u, v)] = est(u, v, true + wiggle * (1 if u < v else -1))
        out = reference_clock(graph, declared)
        for v in nodes:
            true_rv = a[1] / a[v]
            assert abs(out[v] - true_rv) <= eps_a
