"""Clock agreement machinery: skew estimation, cycle checks, delay bounds.

Everything here is a pure function over value types. Timestamps are integer
clock counts (quantized reads of affine clocks); declared skews and offsets
are exact rationals. The module covers:

  * estimate_skew -- two-packet timing-exchange slope estimate, plus the
    derived offset estimate carried alongside it in link certificates.
  * find_inconsistent_cycles -- fundamental cycles (w.r.t. a deterministic
    BFS spanning tree) whose declared skew product strays from 1.
  * consistency_start_time / cycle_wait_bound -- how long to wait before a
    cycle check is guaranteed to catch a lying declaration.
  * run_cycle_check -- the per-hop stamp verification producing a verdict of
    failed links.
  * delay_sum_lower_bound / min_delay_exhaustive -- the analytic lower bound
    on total forwarding delay implied by a false end-to-end declaration, and
    the exhaustive grid search that witnesses its tightness.
  * reference_clock -- per-node composite skew estimate toward the
    smallest-ID node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from . import _kernels
from .errors import DegenerateExchange, Disconnected, IncompleteTrace
from .model import AffineClock, ClockParams, Digraph, NodeId, frac

Edge = tuple[NodeId, NodeId]

SKEW_CONSISTENCY = "skew-consistency"
DELAY_BOUND = "delay-bound"


@dataclass(frozen=True)
class TimingExchange:
    """Two timing packets over one directed link, all stamps in clock counts.

    The sender of `edge` emitted packets at its counts s1 < s2; the receiver
    stamped them r1 <= r2 on its own clock.
    """

    edge: Edge
    s1: int
    r1: int
    s2: int
    r2: int

    def __post_init__(self) -> None:
        if self.edge[0] == self.edge[1]:
            raise ValueError("timing exchange needs two distinct nodes")
        if self.s2 < self.s1:
            raise ValueError("send stamps out of order")
        if self.r2 < self.r1:
            raise ValueError("receive stamps out of order")


@dataclass(frozen=True)
class SkewEstimate:
    """Declared relative skew (receiver clock over sender clock) on an edge,
    with the derived offset estimate used by the consistency conditions."""

    edge: Edge
    a_hat: Fraction
    b_hat: Fraction

    def __post_init__(self) -> None:
        if self.a_hat <= 0:
            raise ValueError("skew estimates are positive")

    def image(self, send_stamp: Fraction | int) -> Fraction:
        """Receiver-count image of a sender count under this declaration."""
        return self.a_hat * send_stamp + self.b_hat


def estimate_skew(x: TimingExchange) -> SkewEstimate:
    """Slope/intercept of the receiver's counts against the sender's.

    With exact stamps this recovers the true relative skew; quantization
    perturbs it by at most 2/(s2 - s1).
    """
    if x.s2 == x.s1:
        raise DegenerateExchange(f"coincident send stamps on edge {x.edge}")
    a_hat = Fraction(x.r2 - x.r1, x.s2 - x.s1)
    if a_hat <= 0:
        # r2 == r1 can only happen when the receiver's clock is absurdly
        # slow relative to the probe gap; the exchange carries no slope.
        raise DegenerateExchange(f"flat receive stamps on edge {x.edge}")
    b_hat = x.r1 - a_hat * x.s1
    return SkewEstimate(edge=x.edge, a_hat=a_hat, b_hat=b_hat)


# ---------------------------------------------------------------------------
# Cycle enumeration
# ---------------------------------------------------------------------------


def _bfs_tree(graph: Digraph, root: NodeId) -> dict[NodeId, Optional[NodeId]]:
    """Deterministic BFS parents over the undirected support of `graph`."""
    undirected: dict[NodeId, set[NodeId]] = {v: set() for v in graph.nodes}
    for u, v in graph.edges:
        undirected[u].add(v)
        undirected[v].add(u)
    parent: dict[NodeId, Optional[NodeId]] = {root: None}
    frontier = [root]
    while frontier:
        nxt: list[NodeId] = []
        for u in frontier:
            for v in sorted(undirected[u]):
                if v not in parent:
                    parent[v] = u
                    nxt.append(v)
        frontier = nxt
    return parent


def _tree_path(parent: Mapping[NodeId, Optional[NodeId]], v: NodeId) -> list[NodeId]:
    path = [v]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])  # type: ignore[arg-type]
    return path  # v .. root


def canonical_cycle(nodes: Sequence[NodeId]) -> tuple[NodeId, ...]:
    """Rotate so the smallest ID leads, orient toward the smaller neighbor."""
    k = nodes.index(min(nodes))
    rot = list(nodes[k:]) + list(nodes[:k])
    if len(rot) > 2 and rot[-1] < rot[1]:
        rot = [rot[0]] + rot[:0:-1]
    return tuple(rot)


def cycle_skew_product(
    cycle: Sequence[NodeId], declared: Mapping[Edge, SkewEstimate]
) -> Fraction:
    """Product of declared skews around the directed cycle."""
    p = Fraction(1)
    m = len(cycle)
    for k in range(m):
        u, v = cycle[k], cycle[(k + 1) % m]
        p *= declared[(u, v)].a_hat
    return p


def find_inconsistent_cycles(
    graph: Digraph,
    declared: Mapping[Edge, SkewEstimate],
    eps_a: Fraction,
) -> list[tuple[NodeId, ...]]:
    """Fundamental cycles whose skew product strays from 1 by more than eps_a.

    The spanning tree is a BFS tree rooted at the smallest node ID with
    neighbors visited in ascending order, so the cycle basis is deterministic.
    Each non-tree undirected edge {u, v} closes exactly one cycle: the tree
    path u..w plus w..v for their deepest common ancestor w. A cycle is
    flagged when either traversal direction deviates, which keeps detection
    symmetric for products on opposite sides of 1.
    """
    if not graph.nodes:
        return []
    eps_a = frac(eps_a)
    root = min(graph.nodes)
    parent = _bfs_tree(graph, root)
    tree_edges = {frozenset((v, p)) for v, p in parent.items() if p is not None}
    non_tree = sorted(
        {
            (min(u, v), max(u, v))
            for u, v in graph.edges
            if u in parent and v in parent and frozenset((u, v)) not in tree_edges
        }
    )
    flagged: list[tuple[NodeId, ...]] = []
    for u, v in non_tree:
        pu = _tree_path(parent, u)
        pv = _tree_path(parent, v)
        shared = {*pu} & {*pv}
        # deepest common ancestor is the first shared node on either path
        w = next(x for x in pu if x in shared)
        cyc = pu[: pu.index(w) + 1] + list(reversed(pv[: pv.index(w)]))
        cycle = canonical_cycle(cyc)
        p = cycle_skew_product(cycle, declared)
        p_rev = cycle_skew_product(tuple(reversed(cycle)), declared)
        if abs(p - 1) > eps_a or abs(p_rev - 1) > eps_a:
            flagged.append(cycle)
    return flagged


# ---------------------------------------------------------------------------
# Waiting-time bounds
# ---------------------------------------------------------------------------


def consistency_start_time(n: int, params: ClockParams) -> Fraction:
    """Reference time after which cycle checks catch every lying declaration.

    Uniform worst-case bound over all cycles of length <= n with any
    admissible skews; individual cycles admit the tighter cycle_wait_bound.
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    if params.eps_a <= 0:
        raise ValueError("eps_a must be positive")
    amax_pow = params.a_max ** (n + 1)
    return ((n + 1) * amax_pow + (n + 1) * amax_pow * params.U_0) / params.eps_a


def cycle_wait_bound(a_hat: Fraction, m: int, params: ClockParams) -> Fraction:
    """Per-cycle waiting time (leader clock counts) before a check is decisive.

    `a_hat` is the declared skew of the cycle's final node relative to the
    node with the smallest declared skew product from the leader; `m` is the
    cycle length. Checks started after this leader-clock value must trip on
    any declaration whose product deviates by more than eps_a.
    """
    if m < 2:
        raise ValueError("cycles have at least two hops")
    if params.eps_a <= 0:
        raise ValueError("eps_a must be positive")
    return (frac(a_hat) * (m + 1) * params.K + params.eps_b) / params.eps_a


def cycle_timeout(m: int, params: ClockParams) -> Fraction:
    """Leader-clock counts to wait for the packet to return before declaring
    the circulation failed."""
    return m * (params.K + 1) * params.a_max


# ---------------------------------------------------------------------------
# Cycle check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HopStamps:
    """Signed stamps for one directed hop; None marks a missing record."""

    send: Optional[int]
    recv: Optional[int]


@dataclass(frozen=True)
class CycleTrace:
    """Stamp records from circulating one timing packet around a cycle.

    `cycle` lists the nodes once, leader (smallest ID) first; hop k runs from
    cycle[k] to cycle[(k+1) % m]. `timeout_expired` records whether the
    leader's local timeout lapsed without the packet returning, which is what
    licenses blaming a silent node instead of aborting.
    """

    cycle: tuple[NodeId, ...]
    hops: tuple[HopStamps, ...]
    timeout_expired: bool = False

    def __post_init__(self) -> None:
        if len(self.cycle) < 2:
            raise ValueError("cycles have at least two nodes")
        if self.cycle[0] != min(self.cycle):
            raise ValueError("leader must be the smallest-ID node")
        if len(self.hops) != len(self.cycle):
            raise ValueError("one hop record per cycle edge")


@dataclass(frozen=True)
class ConsistencyVerdict:
    failed_links: frozenset[Edge]
    violated: Mapping[Edge, frozenset[str]]

    @property
    def ok(self) -> bool:
        return not self.failed_links


def run_cycle_check(
    trace: CycleTrace,
    declared: Mapping[Edge, SkewEstimate],
    params: ClockParams,
) -> ConsistencyVerdict:
    """Verify each hop's stamps against the declared clock maps.

    Two conditions per node: (a) its receive stamp equals the declared affine
    image of the predecessor's send stamp within eps_b counts, blamed on the
    hop edge; (b) its forwarding delay (send minus receive, own counts) is at
    most K, blamed on both its cycle edges. A node that never forwarded is a
    delay violator when the leader's timeout lapsed, and otherwise the trace
    is unusable.
    """
    m = len(trace.cycle)
    edges = [(trace.cycle[k], trace.cycle[(k + 1) % m]) for k in range(m)]
    blames: dict[Edge, set[str]] = {}

    def blame(edge: Edge, reason: str) -> None:
        blames.setdefault(edge, set()).add(reason)

    # A missing send on hop k means cycle[k] swallowed the packet; a missing
    # final receive means the closing hop's send record is a fabrication
    # (delivery is guaranteed once a send happens). Either way the leader's
    # timeout is the evidence that lets the check conclude.
    broken = next((k for k, h in enumerate(trace.hops) if h.send is None), None)
    if broken == 0:
        raise IncompleteTrace(trace.cycle[0], "leader never initiated")
    if broken is not None:
        if not trace.timeout_expired:
            raise IncompleteTrace(
                trace.cycle[broken], "no forward record and no timeout evidence"
            )
        blame(edges[broken - 1], DELAY_BOUND)
        blame(edges[broken], DELAY_BOUND)
    elif trace.hops[-1].recv is None:
        if not trace.timeout_expired:
            raise IncompleteTrace(
                trace.cycle[0], "packet never returned and no timeout evidence"
            )
        blame(edges[-1], DELAY_BOUND)

    upto = broken if broken is not None else m

    # condition (b): forwarding delay at each interior node, in its own counts
    for k in range(1, upto):
        prev, hop = trace.hops[k - 1], trace.hops[k]
        if prev.recv is None:
            # forwarded without a receive record: nothing to check against,
            # so the inbound edge fails the stamp condition
            blame(edges[k - 1], SKEW_CONSISTENCY)
        elif hop.send - prev.recv > params.K:
            blame(edges[k - 1], DELAY_BOUND)
            blame(edges[k], DELAY_BOUND)

    # condition (a): declared affine consistency on every complete hop
    for k in range(upto):
        hop = trace.hops[k]
        if hop.recv is None:
            continue
        est = declared.get(edges[k])
        if est is None:
            blame(edges[k], SKEW_CONSISTENCY)
        elif abs(frac(hop.recv) - est.image(hop.send)) > params.eps_b:
            blame(edges[k], SKEW_CONSISTENCY)

    return ConsistencyVerdict(
        failed_links=frozenset(blames),
        violated={e: frozenset(r) for e, r in blames.items()},
    )


# ---------------------------------------------------------------------------
# Delay-sum bound and its exhaustive witness
# ---------------------------------------------------------------------------


def delay_sum_lower_bound(
    declared_hops: Sequence[SkewEstimate],
    clock_first: AffineClock,
    clock_last: AffineClock,
    t1: Fraction,
) -> Fraction:
    """Minimum total forwarding delay (clock counts) any stamp assignment
    must exhibit, given honest endpoints and the declared per-hop maps.

    A packet initiated by the first node at reference time t1 and stamped
    honestly at both ends forces the interior declarations to absorb the
    difference between the true end-to-end map and the declared one. The
    deviation is amplified least at the node with the largest declared skew
    product toward the last node, hence the normalization below. Nonpositive
    values mean the declaration is consistent enough to impose no delay.
    """
    if not declared_hops:
        raise ValueError("need at least one hop")
    t1 = frac(t1)
    a_true = clock_last.a / clock_first.a
    b_true = clock_last.b - a_true * clock_first.b
    a_decl = Fraction(1)
    b_decl = Fraction(0)
    # prefix products from the first node; i* maximizes the remaining product
    prefixes = [Fraction(1)]
    for est in declared_hops:
        a_decl = est.a_hat * a_decl
        b_decl = est.a_hat * b_decl + est.b_hat
        prefixes.append(a_decl)
    # declared product from node i to the last node is a_decl / prefixes[i]
    amp = max(a_decl / prefixes[i] for i in range(len(declared_hops)))
    tau1 = clock_first.raw(t1)
    return ((a_true - a_decl) / amp) * tau1 + (b_true - b_decl) / amp


def min_delay_exhaustive(
    declared_hops: Sequence[SkewEstimate],
    s0: int,
    floor_rn: int,
    cap: int,
) -> int:
    """Exhaustive minimum total forwarding delay over integer stamp grids.

    Searches every assignment of interior send stamps with per-hop receive
    stamps forced by the declared maps (non-integer images prune the branch),
    causality s >= r at each interior node, and a final receive stamp at
    least floor_rn. Returns -1 when no admissible assignment has total delay
    below cap. Delegates to the compiled kernel when magnitudes allow.
    """
    num_a: list[int] = []
    den_a: list[int] = []
    num_b: list[int] = []
    for est in declared_hops:
        den = math.lcm(est.a_hat.denominator, est.b_hat.denominator)
        num_a.append(est.a_hat.numerator * (den // est.a_hat.denominator))
        num_b.append(est.b_hat.numerator * (den // est.b_hat.denominator))
        den_a.append(den)
    return _kernels.delay_min_search(num_a, den_a, num_b, s0, floor_rn, cap)


# ---------------------------------------------------------------------------
# Reference clock
# ---------------------------------------------------------------------------


def reference_clock(
    graph: Digraph, declared: Mapping[Edge, SkewEstimate]
) -> dict[NodeId, Fraction]:
    """Composite declared skew of the smallest-ID node relative to each node.

    Paths are BFS-shortest with lexicographically smallest node sequence as
    the tie-break, so every node computes the same estimate from the same
    shared topology view.
    """
    if not graph.nodes:
        raise Disconnected("empty topology")
    root = min(graph.nodes)
    undirected: dict[NodeId, set[NodeId]] = {v: set() for v in graph.nodes}
    for u, v in graph.edges:
        if (v, u) in graph.edges:
            undirected[u].add(v)
            undirected[v].add(u)
    # BFS layers from the root, then parent = neighbor with lex-least path
    dist = {root: 0}
    order = [root]
    for u in order:
        for v in sorted(undirected[u]):
            if v not in dist:
                dist[v] = dist[u] + 1
                order.append(v)
    missing = set(graph.nodes) - set(dist)
    if missing:
        raise Disconnected(f"no surviving path to nodes {sorted(missing)}")
    paths: dict[NodeId, tuple[NodeId, ...]] = {root: (root,)}
    for v in order[1:]:
        best = min(
            paths[u] for u in undirected[v] if u in dist and dist[u] == dist[v] - 1
        )
        paths[v] = best + (v,)
    out: dict[NodeId, Fraction] = {}
    for v in graph.nodes:
        # walk from v toward the root, composing declared skews hop by hop
        p = paths[v]
        a = Fraction(1)
        for k in range(len(p) - 1, 0, -1):
            a *= declared[(p[k], p[k - 1])].a_hat
        out[v] = a
    return out
