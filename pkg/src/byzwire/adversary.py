"""Coordinated misbehavior strategies and the disable-set family.

A strategy is one centralized object: it sees every bad node's state (and,
being run by the engine, the whole ground truth) and decides every bad
node's action at each engine decision point. All built-ins are
deterministic; repeatable runs are a protocol-level requirement, so nothing
here draws randomness at decision time.

The decision points mirror the engine's hooks one for one:

  discovery_reply   respond to / drop / tamper a discovery-stage exchange
  timestamp         the count a bad node stamps into a timing packet
  declare_skew      the skew/offset estimate a bad node signs into a link
                    certificate (its own estimation direction only; the
                    peer's direction is covered by the peer's signature)
  claim_rates       the inbound rates a bad receiver claims per CTV
  cycle_plan        fabricated stamps for one flagged-cycle timing check
  eig_outgoing      per-receiver relay slices during agreement rounds
  slot_mode         the mode actually played during a data slot
  rush              whether to transmit into the preceding slot's tail
  failure_reports   suppression or forgery of verification reports
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .clocks import CycleTrace, HopStamps, SkewEstimate
from .errors import AssumptionCViolated, TooLarge
from .model import (
    JAM,
    SILENT,
    AffineClock,
    ClockParams,
    Ctv,
    LinkRateVector,
    Mode,
    NodeId,
    RateModel,
    frac,
    good_component,
    enabled_graph,
    EnabledSet,
)

Edge = tuple[NodeId, NodeId]


@dataclass(frozen=True)
class AdversaryView:
    """Ground truth handed to a strategy when a run begins.

    The strategy is omniscient about the present: it sees all clocks and the
    true rate table. It cannot sign for good nodes; `sign_as` refuses them.
    """

    n: int
    bad: frozenset[NodeId]
    clocks: Mapping[NodeId, AffineClock]
    clock_params: ClockParams
    rate_model: RateModel
    jam_effects: Mapping[Ctv, LinkRateVector]
    sign_as: Callable[[NodeId], Callable[[object], object]]


class Strategy:
    """Fully conforming behavior; built-ins override single hooks."""

    name = "conform"

    def __init__(self) -> None:
        self.view: Optional[AdversaryView] = None

    def begin(self, view: AdversaryView) -> None:
        self.view = view

    def discovery_reply(self, stage: str, me: NodeId, peer: NodeId, payload):
        return payload

    def timestamp(self, me: NodeId, peer: NodeId, stage: str, honest: int) -> int:
        return honest

    def declare_skew(self, me: NodeId, edge: Edge, honest: SkewEstimate) -> SkewEstimate:
        return honest

    def claim_rates(
        self, me: NodeId, ctv: Ctv, honest: Mapping[Edge, Fraction]
    ) -> Mapping[Edge, Fraction]:
        return honest

    def cycle_plan(
        self,
        cycle: tuple[NodeId, ...],
        declared: Mapping[Edge, SkewEstimate],
        t1: Fraction,
    ) -> Optional[Mapping[int, HopStamps]]:
        """Stamp overrides for the hops a bad node controls; None = honest."""
        return None

    def eig_outgoing(self, phase: str, k: int, me: NodeId, receiver: NodeId, honest):
        return honest

    def slot_mode(self, me: NodeId, iteration: int, index: int, slot) -> Mode:
        return slot.ctv.mode_of(me)

    def rush(self, me: NodeId, iteration: int, index: int, slot) -> bool:
        return False

    def failure_reports(self, me: NodeId, iteration: int, honest: tuple) -> tuple:
        return honest


class AlwaysConform(Strategy):
    """The null adversary; bad nodes are behaviorally good."""


class AlwaysJam(Strategy):
    """Jam every scheduled slot whose CTV belongs to the disable set."""

    name = "jam"

    def __init__(self, disabled: Iterable[Ctv]) -> None:
        super().__init__()
        self.disabled = frozenset(disabled)

    def slot_mode(self, me, iteration, index, slot):
        if slot.ctv in self.disabled:
            return JAM
        return slot.ctv.mode_of(me)


class FalseSkewEmulator(Strategy):
    """Declare skews inflated by a fixed factor and back the lie with the
    cheapest admissible stamps when a cycle check circulates."""

    name = "false-skew"

    def __init__(self, delta: Fraction) -> None:
        super().__init__()
        self.delta = frac(delta)
        if self.delta <= 0:
            raise ValueError("skew inflation factor must be positive")

    def declare_skew(self, me, edge, honest):
        return SkewEstimate(edge=edge, a_hat=honest.a_hat * self.delta, b_hat=honest.b_hat)

    def cycle_plan(self, cycle, declared, t1):
        assert self.view is not None
        bad = self.view.bad
        if not any(v in bad for v in cycle):
            return None
        trace = delay_minimizing_clocks(
            cycle, declared, self.view.clocks, t1, self.view.clock_params.quantum
        )
        m = len(cycle)
        overrides = {}
        for k in range(m):
            # hop k's send is stamped by cycle[k], its receive by cycle[k+1]
            send = trace.hops[k].send if cycle[k] in bad else None
            recv = trace.hops[k].recv if cycle[(k + 1) % m] in bad else None
            if send is not None or recv is not None:
                overrides[k] = HopStamps(send=send, recv=recv)
        return overrides


class GrayHole(Strategy):
    """Silently skip a fixed pattern of scheduled relay transmissions.

    Drops the first `drop` out of every `span` slots in which the node is
    supposed to forward another pair's traffic. The pattern restarts each
    iteration, so behavior is a pure function of the slot index.
    """

    name = "gray-hole"

    def __init__(self, drop: int = 1, span: int = 2) -> None:
        super().__init__()
        if not 0 <= drop <= span or span < 1:
            raise ValueError("need 0 <= drop <= span with span >= 1")
        self.drop = drop
        self.span = span
        self._seen: dict[tuple[NodeId, int], int] = {}

    def slot_mode(self, me, iteration, index, slot):
        relays = any(
            p.link[0] == me and p.pair[0] != me for p in slot.manifest
        )
        if not relays:
            return slot.ctv.mode_of(me)
        count = self._seen.get((me, iteration), 0)
        self._seen[(me, iteration)] = count + 1
        if count % self.span < self.drop:
            return SILENT
        return slot.ctv.mode_of(me)


class SlotRusher(Strategy):
    """Transmit into the tail of the preceding slot every `span` slots,
    killing that slot's deliveries despite the guard time."""

    name = "slot-rusher"

    def __init__(self, span: int = 4) -> None:
        super().__init__()
        if span < 1:
            raise ValueError("span must be >= 1")
        self.span = span

    def rush(self, me, iteration, index, slot):
        return index % self.span == 0


class PartitionSeeker(Strategy):
    """Refuse to relay agreement payloads between two chosen node groups.

    Outgoing relay slices toward one side are stripped of every vertex whose
    label passed through the other side. Connectivity of the good subgraph
    makes this futile; the strategy exists to exercise that guarantee.
    """

    name = "partition-seeker"

    def __init__(self, side_a: Iterable[NodeId], side_b: Iterable[NodeId]) -> None:
        super().__init__()
        self.side_a = frozenset(side_a)
        self.side_b = frozenset(side_b)
        if self.side_a & self.side_b:
            raise ValueError("sides must be disjoint")

    def eig_outgoing(self, phase, k, me, receiver, honest):
        if receiver in self.side_a:
            far = self.side_b
        elif receiver in self.side_b:
            far = self.side_a
        else:
            return honest
        return {
            label: relay
            for label, relay in honest.items()
            if not (set(label) & far)
        }


def builtin_strategies() -> dict[str, Callable[..., Strategy]]:
    """Name -> factory map used by scenario configs."""
    return {
        "conform": AlwaysConform,
        "jam": AlwaysJam,
        "false-skew": FalseSkewEmulator,
        "gray-hole": GrayHole,
        "slot-rusher": SlotRusher,
        "partition-seeker": PartitionSeeker,
    }


# ---------------------------------------------------------------------------
# Optimal stamp fabrication against the cycle check
# ---------------------------------------------------------------------------


def delay_minimizing_clocks(
    cycle: Sequence[NodeId],
    declared: Mapping[Edge, SkewEstimate],
    clocks: Mapping[NodeId, AffineClock],
    t1: Fraction,
    quantum: Fraction,
) -> CycleTrace:
    """The cheapest admissible stamp assignment for one cycle circulation.

    The leader (cycle[0]) initiates on one of its own ticks and stamps
    honestly at both ends; interior stamps are chosen freely. Every receive
    stamp equals the declared affine image of the matching send stamp
    (skew-consistency, exact), and sends never precede receives (causality).
    The entire forwarding-delay budget, rounded up to whole counts, is spent
    at the single interior node whose declared skew product toward the
    leader is largest, which closes the end-to-end stamp discrepancy at the
    least total delay. Against a declaration whose running skew product ever
    dips to one or below, that total matches the analytic lower bound up to
    one count; it is always the minimum over admissible integer stamp
    assignments.
    """
    cycle = tuple(cycle)
    m = len(cycle)
    if m < 2:
        raise ValueError("cycles have at least two hops")
    quantum = frac(quantum)
    t1 = frac(t1)
    leader = clocks[cycle[0]]
    edges = [(cycle[k], cycle[(k + 1) % m]) for k in range(m)]
    maps = [declared[e] for e in edges]

    s0 = Fraction(leader.counts(t1, quantum))

    def walk(delays: Sequence[Fraction]) -> list[Fraction]:
        # stamps[k] is the receive into cycle[k] (stamps[0] = leader send);
        # each hop's send adds that node's forwarding delay
        stamps = [s0]
        for k in range(m):
            stamps.append(maps[k].image(stamps[-1] + delays[k]))
        return stamps

    zero = [Fraction(0)] * m
    free_final = walk(zero)[-1]
    target = s0  # the leader's earliest honest return count

    # declared skew product from each interior node around to the leader
    suffix = [Fraction(1)] * (m + 1)
    for k in range(m - 1, -1, -1):
        suffix[k] = maps[k].a_hat * suffix[k + 1]
    best = max(range(1, m), key=lambda k: (suffix[k], -k))

    delays = list(zero)
    deficit = target - free_final
    if deficit > 0:
        delays[best] = Fraction(math.ceil(deficit / suffix[best]))

    exact = walk(delays)

    def stamp(x: Fraction) -> int | Fraction:
        return int(x) if x.denominator == 1 else x

    hops = []
    for k in range(m):
        hops.append(
            HopStamps(send=stamp(exact[k] + delays[k]), recv=stamp(exact[k + 1]))
        )
    return CycleTrace(cycle=cycle, hops=tuple(hops))


# ---------------------------------------------------------------------------
# Disable-set family
# ---------------------------------------------------------------------------


def _good_involved_drop(
    table_vec: LinkRateVector, jammed: LinkRateVector, good: frozenset[NodeId]
) -> bool:
    for (i, j), r in table_vec.entries:
        if (i in good or j in good) and jammed.rate(i, j) < r:
            return True
    return False


def disable_family(
    rate_model: RateModel,
    jam_effects: Mapping[Ctv, LinkRateVector],
    good: Iterable[NodeId],
    cap: int = 4096,
) -> list[frozenset[Ctv]]:
    """All subsets of the jam-degradable CTVs that keep the good nodes in
    one bidirectional component.

    A CTV is degradable when jamming during it lowers some good-involved
    rate below its table value. Subsets that would split the good nodes are
    outside the standing connectivity assumption and are dropped here so
    the min-max oracle never sees them.
    """
    good = frozenset(good)
    degradable = sorted(
        (
            c
            for c in rate_model.table
            if c in jam_effects
            and _good_involved_drop(rate_model.table[c], jam_effects[c], good)
        ),
        key=str,
    )
    if 1 << len(degradable) > cap:
        raise TooLarge(
            f"2^{len(degradable)} disable sets exceed the enumeration cap {cap}"
        )
    every = frozenset(rate_model.table)
    family = []
    for size in range(len(degradable) + 1):
        for combo in itertools.combinations(degradable, size):
            d = frozenset(combo)
            if d == every:
                continue
            try:
                good_component(
                    enabled_graph(rate_model, EnabledSet(every - d)), good
                )
            except AssumptionCViolated:
                continue
            family.append(d)
    return family
