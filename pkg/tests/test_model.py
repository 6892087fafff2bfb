"""Tests for the core model types: clocks, CTVs, rates, components, utilities."""

from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from byzwire.errors import AssumptionCViolated
from byzwire.model import (
    LISTEN,
    SILENT,
    AffineClock,
    ClockParams,
    Ctv,
    Digraph,
    EnabledSet,
    LinkRateVector,
    Mode,
    RateModel,
    UtilitySpec,
    bidirectional_components,
    check_clock_population,
    check_downward_closure,
    check_half_duplex,
    enabled_graph,
    evaluate_utility,
    frac,
    good_component,
    mode_set,
    ordered_pairs,
    tx,
)


def single_tx_model(n, links):
    """Rate model containing one clean point-to-point CTV per given link."""
    table = {}
    for (i, j), r in links.items():
        table[Ctv.single_tx(n, i, j, r)] = LinkRateVector.from_dict({(i, j): r})
    table[Ctv.all_silent(n)] = LinkRateVector.zero()
    lam = frozenset(frac(r) for r in links.values())
    return RateModel(n=n, table=table, lam=lam, mode_bound=3 + (n - 1) * len(lam))


class TestClocks:
    def test_quantized_read_floors(self):
        clock = AffineClock(frac("3/2"), frac("1/3"))
        q = frac("1/4")
        t = frac(10)
        raw = clock.raw(t)
        read = clock.read(t, q)
        assert read <= raw < read + q
        assert (read / q).denominator == 1

    def test_counts_match_read(self):
        clock = AffineClock(2, 5)
        q = frac("1/2")
        assert clock.counts(3, q) * q == clock.read(3, q)

    def test_time_at_inverts_raw(self):
        clock = AffineClock(frac("7/5"), frac("-2/3"))
        t = frac(123, 7)
        assert clock.time_at(clock.raw(t)) == t

    def test_population_check_rejects_wide_skew(self):
        params = ClockParams(a_max=2, U_0=1, quantum=1)
        clocks = {1: AffineClock(1, 0), 2: AffineClock(frac(5, 2), 0)}
        with pytest.raises(ValueError):
            check_clock_population(clocks, params)

    def test_population_check_accepts_bounds(self):
        params = ClockParams(a_max=2, U_0=1, quantum=1)
        # start instants (when each local clock reads 0): 0, -3/4, 1/4;
        # pairwise within U_0=1, so every relative offset is within a_max*U_0
        clocks = {
            1: AffineClock(1, 0),
            2: AffineClock(2, frac(3, 2)),
            3: AffineClock(1, frac(-1, 4)),
        }
        check_clock_population(clocks, params)

    @given(
        a=st.fractions(min_value=frac(1, 4), max_value=4),
        b=st.fractions(min_value=-8, max_value=8),
        t=st.fractions(min_value=0, max_value=1000),
    )
    def test_offset_corollary(self, a, b, t):
        # |b_ij| <= a_max * U_0 whenever both clocks individually honor
        # skew in [1/a_max, a_max] and |offset| <= U_0 relative to reference.
        a_max = frac(4)
        u0 = frac(8)
        ref = AffineClock(1, 0)
        other = AffineClock(a, b)
        from byzwire.model import relative_offset, relative_skew

        assert 0 < relative_skew(other, ref) <= a_max
        assert abs(relative_offset(other, ref)) <= a_max * u0


class TestModesAndCtvs:
    def test_mode_roundtrip(self):
        for m in (SILENT, LISTEN, tx(3, frac("5/2"))):
            assert Mode.parse(str(m)) == m

    def test_ctv_roundtrip(self):
        c = Ctv.single_tx(3, 1, 2, 4)
        assert Ctv.parse(str(c)) == c

    def test_mode_set_size(self):
        lam = [frac(1), frac(2)]
        ms = mode_set(4, lam, me=1)
        # silent, jam, listen + 3 peers x 2 rates
        assert len(ms) == 3 + 3 * 2

    def test_half_duplex_rejects_good_jammer(self):
        c = Ctv.single_tx(3, 1, 2, 1).replacing(3, Mode.parse("jam"))
        assert check_half_duplex(c, good=[1, 2])
        assert not check_half_duplex(c, good=[1, 2, 3])


class TestRates:
    def test_zero_entries_dropped(self):
        v = LinkRateVector.from_dict({(1, 2): 3, (2, 1): 0})
        assert v.positive_links() == ((1, 2),)
        assert v.rate(2, 1) == 0

    def test_dominates(self):
        hi = LinkRateVector.from_dict({(1, 2): 3, (1, 3): 2})
        lo = LinkRateVector.from_dict({(1, 2): 1})
        assert hi.dominates(lo)
        assert not lo.dominates(hi)

    def test_downward_closure_detects_gap(self):
        n = 2
        table = {
            Ctv.single_tx(n, 1, 2, 2): LinkRateVector.from_dict({(1, 2): 2}),
            Ctv.all_silent(n): LinkRateVector.zero(),
        }
        model = RateModel(n=n, table=table, lam=frozenset({frac(1), frac(2)}), mode_bound=7)
        # rate 1 on link 1->2 is a lambda-valued reduction with no CTV
        assert not check_downward_closure(model)
        table[Ctv.single_tx(n, 1, 2, 1)] = LinkRateVector.from_dict({(1, 2): 1})
        model2 = RateModel(n=n, table=table, lam=frozenset({frac(1), frac(2)}), mode_bound=7)
        assert check_downward_closure(model2)


class TestGraphs:
    def test_single_edge_graph(self):
        model = single_tx_model(2, {(1, 2): 1})
        g = enabled_graph(model, EnabledSet(frozenset(model.table)))
        assert g.edges == frozenset({(1, 2)})

    def test_symmetric_clique_complete(self):
        links = {(i, j): 1 for (i, j) in ordered_pairs(3)}
        model = single_tx_model(3, links)
        g = enabled_graph(model, EnabledSet(frozenset(model.table)))
        assert g.edges == frozenset(ordered_pairs(3))

    def test_enabled_filter_removes_out_edges(self):
        links = {(i, j): 1 for (i, j) in ordered_pairs(4)}
        model = single_tx_model(4, links)
        keep = frozenset(
            c for c in model.table if all(c.mode_of(4).kind.value != "tx" for _ in [0])
        )
        g = enabled_graph(model, EnabledSet(keep))
        assert all(i != 4 for (i, j) in g.edges)

    def test_good_component_complete(self):
        edges = frozenset((i, j) for (i, j) in ordered_pairs(4))
        g = Digraph((1, 2, 3, 4), edges)
        assert good_component(g, {1, 2}) == frozenset({1, 2, 3, 4})

    def test_good_component_drops_unidirectional(self):
        g = Digraph((1, 2, 3), frozenset({(1, 2), (2, 1), (2, 3)}))
        assert good_component(g, {1, 2}) == frozenset({1, 2})

    def test_good_component_violation(self):
        g = Digraph((1, 2, 3), frozenset({(1, 2), (2, 1)}))
        with pytest.raises(AssumptionCViolated):
            good_component(g, {1, 3})

    def test_components_are_disjoint_cover(self):
        g = Digraph((1, 2, 3, 4), frozenset({(1, 2), (2, 1), (3, 4)}))
        comps = bidirectional_components(g)
        flat = sorted(v for c in comps for v in c)
        assert flat == [1, 2, 3, 4]


class TestUtilities:
    def test_min_fairness_example(self):
        spec = UtilitySpec.min_fairness([(1, 2), (3, 2)], scope=[1, 2, 3])
        assert evaluate_utility(spec, {(1, 2): 5, (3, 2): 2}) == 2

    def test_weighted_sum_zero_weights(self):
        spec = UtilitySpec.weighted_sum({(1, 2): 0, (2, 1): 0}, scope=[1, 2])
        assert evaluate_utility(spec, {(1, 2): 9, (2, 1): 9}) == 0

    def test_weighted_sum_direct(self):
        spec = UtilitySpec.weighted_sum({(1, 2): 1, (2, 1): 1}, scope=[1, 2])
        assert evaluate_utility(spec, {(1, 2): 3, (2, 1): 4}) == 7

    def test_scope_restriction(self):
        spec = UtilitySpec.min_fairness([(1, 2), (3, 2)], scope=[1, 2, 3])
        cut = spec.restricted_to({1, 2})
        assert cut.designated_pairs() == ((1, 2),)
        assert evaluate_utility(cut, {(1, 2): 5, (3, 2): 0}) == 5

    @given(
        x=st.dictionaries(
            st.sampled_from([(1, 2), (2, 1), (1, 3)]),
            st.fractions(min_value=0, max_value=100),
        ),
        bump=st.fractions(min_value=0, max_value=10),
    )
    def test_monotone(self, x, bump):
        spec = UtilitySpec.min_fairness([(1, 2), (2, 1)], scope=[1, 2, 3])
        wspec = UtilitySpec.weighted_sum({(1, 2): 2, (2, 1): 3}, scope=[1, 2, 3])
        for s in (spec, wspec):
            base = evaluate_utility(s, x)
            for pair in list(x) or [(1, 2)]:
                bigger = dict(x)
                bigger[pair] = bigger.get(pair, Fraction(0)) + bump
                assert evaluate_utility(s, bigger) >= base
