"""Rendezvous scheduling: per-node transmit/listen patterns and stage plans.

The schedule must let every ordered pair of good nodes exchange one whole
packet within a bounded real-time horizon T_MAC(W), no matter how the
admissible clock skews and offsets fall, with every node able to evaluate its
own pattern from nothing but its local clock count.

Construction. Nodes are ranked by ID. Rank r's frame consists of one active
section inside a mostly-silent frame of B sections (the active one rotates
one section per frame, which breaks the phase lock that plagues equal-period
schedules at rational skew ratios). The active section holds, in order:

  * for each higher-ranked peer v: a listen slot then a transmit slot of
    s = 2*ceil(a_max)*Wc counts (Wc counts fit one whole packet on any
    admissible clock), and
  * for each lower-ranked peer q: a transmit dwell then a listen dwell of
    X_q = 2*ceil(a_max)*Pi_q counts, long enough to cover two full frames of
    q's schedule at any relative rate, hence at least one complete frame and
    with it q's matching slot, wherever rotation has moved it.

Deliveries for the pair (i, j) therefore happen where the higher rank's
dwell overlaps the lower rank's slot, and the sparsity factor B keeps third
nodes quiet during most of that overlap. T_MAC is a small multiple of the
top rank's frame. With a_max = 1 and synchronized starts the whole apparatus
degenerates to a plain n(n-1)-slot TDMA frame.

The stage planner turns a T_MAC into a sequence of geometrically growing
reference-time intervals such that a burst placed at the canonical local
start time lands inside the same interval on every good node's clock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from ._kernels import NodePattern, STATE_RX, STATE_SILENT, STATE_TX
from ._kernels._fallback import _segment_at
from .model import AffineClock, ClockParams, NodeId, frac, ordered_pairs, roster

SPARSITY = 8  # frame holds SPARSITY * n sections, one active
HORIZON_FACTOR = 6  # T_MAC in units of a_max * (top-rank frame)


def _ceil_frac(x: Fraction) -> int:
    return -(-x.numerator // x.denominator)


@dataclass(frozen=True)
class NodeSchedule:
    """One node's periodic pattern over its local clock counts."""

    pi: int
    sigma: int
    rot: int
    seg_len: tuple[int, ...]
    seg_state: tuple[int, ...]
    seg_peer: tuple[NodeId, ...]

    def state_at(self, c: int) -> tuple[int, NodeId]:
        state, peer, _, _ = _segment_at(
            self.pi, self.sigma, self.rot, self.seg_len, self.seg_state,
            self.seg_peer, c,
        )
        return state, peer

    def transmits_at(self, c: int) -> bool:
        return self.state_at(c)[0] == STATE_TX

    def listens_at(self, c: int) -> bool:
        return self.state_at(c)[0] == STATE_RX

    def bind(self, clock: AffineClock, quantum: Fraction, den: int) -> NodePattern:
        """Attach clock scaling for the delivery search: reference time is in
        1/den units, so count c sits at c*qu + bu. Peer IDs are rebased to
        the kernel's zero-based pattern indices (roster position id - 1)."""
        qu = quantum * den / clock.a
        bu = -clock.b * den / clock.a
        if qu.denominator != 1 or bu.denominator != 1:
            raise ValueError("den does not clear this clock's denominators")
        return NodePattern(
            self.pi, self.sigma, self.rot,
            self.seg_len, self.seg_state,
            tuple(p - 1 for p in self.seg_peer),
            int(qu), int(bu),
        )


@dataclass(frozen=True)
class OmcSchedule:
    """Pattern family for all n nodes plus its rendezvous horizon."""

    n: int
    a_max: Fraction
    quantum: Fraction
    w: Fraction
    t_mac: Fraction
    schedules: Mapping[NodeId, NodeSchedule]
    slot_counts: int  # listen/transmit slot length, counts
    synchronized: bool

    @property
    def window(self) -> Fraction:
        """Aligned reference-time window length guaranteeing every ordered
        pair of good nodes one whole clean packet.

        The ranked horizon is two windows long, so a burst of real length
        t_mac contains a complete aligned window wherever it falls. The
        synchronized branch instead needs bursts to start on a window
        boundary, which the stage planner provides when offsets are zero."""
        return self.t_mac if self.synchronized else self.t_mac / 2

    def indicator(self, node: NodeId, c: int) -> tuple[int, NodeId]:
        """(state, peer) of `node` at its local count c."""
        return self.schedules[node].state_at(c)

    def driver(self, i: NodeId, j: NodeId) -> NodeId:
        """The pair's coarse side: whichever node has the longer frame."""
        return i if self.schedules[i].pi > self.schedules[j].pi else j

    def t_mac_of(self, w: Fraction) -> Fraction:
        """Horizon for a different packet duration, same n and a_max."""
        return build_omc(
            self.n, self.a_max, self.quantum, w, synchronized=self.synchronized
        ).t_mac

    def bind_all(
        self, clocks: Mapping[NodeId, AffineClock], den: int
    ) -> list[NodePattern]:
        """Kernel-ready patterns indexed by node id minus one."""
        return [
            self.schedules[u].bind(clocks[u], self.quantum, den)
            for u in sorted(self.schedules)
        ]


def build_omc(
    n: int,
    a_max: Fraction,
    quantum: Fraction,
    w: Fraction,
    synchronized: Optional[bool] = None,
) -> OmcSchedule:
    """Build the pattern family for n nodes.

    `synchronized` selects the degenerate TDMA branch; it defaults to
    a_max == 1 and may be forced off when offsets are known to be nonzero
    (the general construction tolerates any admissible offsets, at the price
    of a much larger horizon).
    """
    a_max = frac(a_max)
    quantum = frac(quantum)
    w = frac(w)
    if n < 2:
        raise ValueError("need at least two nodes")
    if w <= 0 or quantum <= 0:
        raise ValueError("durations must be positive")
    if a_max < 1:
        raise ValueError("a_max is at least 1 (it bounds a ratio and its inverse)")
    if synchronized is None:
        synchronized = a_max == 1
    if synchronized and a_max != 1:
        raise ValueError("synchronized schedules require a_max == 1")

    if synchronized:
        return _build_tdma(n, quantum, w)
    return _build_ranked(n, a_max, quantum, w)


def _build_tdma(n: int, quantum: Fraction, w: Fraction) -> OmcSchedule:
    wc = _ceil_frac(w / quantum)
    pairs = ordered_pairs(n)
    frame = len(pairs) * wc
    schedules = {}
    for u in roster(n):
        seg_len, seg_state, seg_peer = [], [], []
        for a, b in pairs:
            seg_len.append(wc)
            if a == u:
                seg_state.append(STATE_TX)
                seg_peer.append(b)
            elif b == u:
                seg_state.append(STATE_RX)
                seg_peer.append(a)
            else:
                seg_state.append(STATE_SILENT)
                seg_peer.append(0)
        schedules[u] = NodeSchedule(
            pi=frame, sigma=frame, rot=1,
            seg_len=tuple(seg_len), seg_state=tuple(seg_state),
            seg_peer=tuple(seg_peer),
        )
    return OmcSchedule(
        n=n, a_max=Fraction(1), quantum=quantum, w=w,
        t_mac=frame * quantum, schedules=schedules, slot_counts=wc,
        synchronized=True,
    )


def _build_ranked(
    n: int, a_max: Fraction, quantum: Fraction, w: Fraction
) -> OmcSchedule:
    big_a = _ceil_frac(a_max)
    wc = _ceil_frac(a_max * w / quantum)
    slot = 2 * big_a * wc
    b_factor = SPARSITY * n

    pi: dict[int, int] = {}  # rank -> frame counts
    dwell: dict[int, int] = {}  # rank -> dwell counts for peers of that rank
    schedules: dict[NodeId, NodeSchedule] = {}
    for u in roster(n):  # rank == node id: the roster is 1..n
        sigma = 2 * (n - u) * slot + 2 * sum(dwell[q] for q in range(1, u))
        frame = b_factor * sigma
        pi[u] = frame
        dwell[u] = 2 * big_a * frame
        seg_len, seg_state, seg_peer = [], [], []
        for v in range(u + 1, n + 1):
            seg_len += [slot, slot]
            seg_state += [STATE_RX, STATE_TX]
            seg_peer += [v, v]
        for v in range(1, u):
            seg_len += [dwell[v], dwell[v]]
            seg_state += [STATE_TX, STATE_RX]
            seg_peer += [v, v]
        schedules[u] = NodeSchedule(
            pi=frame, sigma=sigma, rot=b_factor,
            seg_len=tuple(seg_len), seg_state=tuple(seg_state),
            seg_peer=tuple(seg_peer),
        )
    t_mac = HORIZON_FACTOR * a_max * pi[n] * quantum
    return OmcSchedule(
        n=n, a_max=a_max, quantum=quantum, w=w,
        t_mac=t_mac, schedules=schedules, slot_counts=slot,
        synchronized=False,
    )


def reference_scale(values: Iterable[Fraction]) -> int:
    """Common denominator turning every given rational into an integer."""
    den = 1
    for v in values:
        den = math.lcm(den, frac(v).denominator)
    return den


def kernel_scale(
    clocks: Mapping[NodeId, AffineClock],
    quantum: Fraction,
    extras: Iterable[Fraction] = (),
) -> int:
    """Denominator clearing every clock conversion plus any extra values."""
    vals: list[Fraction] = []
    for c in clocks.values():
        vals.append(quantum / c.a)
        vals.append(c.b / c.a)
    vals.extend(extras)
    return reference_scale(vals)


# ---------------------------------------------------------------------------
# Stage plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StagePlan:
    """Adjacent reference-time intervals, one protocol stage each.

    boundaries[k] .. boundaries[k+1] is stage k (0-based). Within stage k a
    good node starts its burst when its local clock reads sender_start(k) and
    keeps the pattern active for burst_span(k) local time; containment of the
    whole burst in stage k on every good clock follows from the recurrence.
    """

    boundaries: tuple[Fraction, ...]
    tags: tuple[str, ...]
    t_mac: tuple[Fraction, ...]
    a_max: Fraction
    u_0: Fraction

    def __post_init__(self) -> None:
        if len(self.boundaries) != len(self.tags) + 1:
            raise ValueError("one tag per stage")
        if len(self.t_mac) != len(self.tags):
            raise ValueError("one horizon per stage")
        if any(b >= c for b, c in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("boundaries must increase")

    @property
    def num_stages(self) -> int:
        return len(self.tags)

    def interval(self, k: int) -> tuple[Fraction, Fraction]:
        return self.boundaries[k], self.boundaries[k + 1]

    def sender_start(self, k: int) -> Fraction:
        """Local clock value at which stage k's burst begins."""
        return self.a_max * self.boundaries[k] + self.a_max**2 * self.u_0

    def burst_span(self, k: int) -> Fraction:
        """Local duration of stage k's burst: covers t_mac in real time on
        any admissible clock."""
        return self.a_max * self.t_mac[k]

    def burst(self, k: int) -> tuple[Fraction, Fraction]:
        s = self.sender_start(k)
        return s, s + self.burst_span(k)

    def stage_of(self, tau: Fraction) -> int:
        """Stage index a node assigns to its own local clock value tau.

        Stage membership is purely local: every node reads the same numeric
        boundaries on its own clock, and the recurrence guarantees a burst
        placed at sender_start lands in the same stage index on every good
        clock. Returns -1 before the first boundary and num_stages at or
        past the last."""
        if tau < self.boundaries[0]:
            return -1
        for k in range(self.num_stages):
            if tau < self.boundaries[k + 1]:
                return k
        return self.num_stages


def stage_plan(
    t_0: Fraction,
    num_stages: int,
    params: ClockParams,
    t_mac: Sequence[Fraction] | Fraction,
    tags: Optional[Sequence[str]] = None,
) -> StagePlan:
    """Boundaries by the growth recurrence
    t_{k+1} = a_max^2 t_k + 2 a_max^3 U_0 + a_max^3 T_MAC_k."""
    t_0 = frac(t_0)
    if t_0 < 0:
        raise ValueError("t_0 must be nonnegative")
    if num_stages < 1:
        raise ValueError("need at least one stage")
    if isinstance(t_mac, (int, float, str, Fraction)):
        t_macs = [frac(t_mac)] * num_stages
    else:
        t_macs = [frac(x) for x in t_mac]
        if len(t_macs) != num_stages:
            raise ValueError("one t_mac per stage")
    if tags is None:
        tags = tuple(f"stage-{k}" for k in range(num_stages))
    elif len(tags) != num_stages:
        raise ValueError("one tag per stage")
    a = params.a_max
    bounds = [t_0]
    for k in range(num_stages):
        t_k = bounds[-1]
        bounds.append(a**2 * t_k + 2 * a**3 * params.U_0 + a**3 * t_macs[k])
    return StagePlan(
        boundaries=tuple(bounds),
        tags=tuple(tags),
        t_mac=tuple(t_macs),
        a_max=a,
        u_0=params.U_0,
    )
