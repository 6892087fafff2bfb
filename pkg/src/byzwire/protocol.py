"""Phase orchestration: the six-stage handshake, topology agreement, cycle
checks, and the scheduling / transfer / verification loop.

The module glues the pure building blocks together into one deterministic
lifecycle over an engine World:

  * neighbor_discovery -- PRB/ACK/TIM1/TIM2/LNK1/LNK2 over the rendezvous
    schedule, producing per-node neighbor sets and dual-signed link
    certificates. Deliveries come from the kernel search, so the stage
    plan's containment guarantee is exercised for real.
  * network_discovery -- certificate agreement (signed relay rounds over
    neighbor links), skew-product cycle screening, one timing circulation
    per flagged cycle, agreement on the resulting stamps, link removal,
    and the composite reference-clock estimates.
  * run_lifecycle -- parameter selection, both discovery phases, then
    n_iter rounds of schedule / transfer / verify, returning metrics.

Timing conventions. Stage boundaries are numeric values read on local
clocks; slot boundaries live on the root node's clock axis and every other
node acts through its composite skew estimate. Within a cycle check the
stamps of well-behaved nodes ride the declared maps exactly (receive stamp
= floor of the declared image of the send stamp, forward on the same
count): honest hops then agree within one count no matter how large the
stamps have grown, so every blame the verdict assigns touches at least one
misbehaving endpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Iterable, Mapping, Optional, Sequence

from . import _kernels
from .clocks import (
    CycleTrace,
    HopStamps,
    SkewEstimate,
    TimingExchange,
    consistency_start_time,
    cycle_timeout,
    cycle_wait_bound,
    estimate_skew,
    find_inconsistent_cycles,
    reference_clock,
    run_cycle_check,
)
from .consensus import (
    LinkCertificate,
    certificate_body,
    eig_decide,
    eig_round,
    new_tree,
    relay_slice,
)
from .engine import World, digest, jsonable
from .errors import (
    DegenerateExchange,
    IncompleteTrace,
    NoFeasibleParams,
)
from .mac import OmcSchedule, StagePlan, build_omc, kernel_scale, stage_plan
from .model import (
    ClockParams,
    Ctv,
    Digraph,
    LinkRateVector,
    NodeId,
    UtilitySpec,
    evaluate_utility,
    frac,
    good_component,
    roster,
)
from .scheduler import (
    FeasibleSet,
    ParamConstants,
    Schedule,
    _decompose,
    discretize,
    max_utility_lp,
    prune,
    select_parameters,
)

Edge = tuple[NodeId, NodeId]

DISCOVERY_TAGS = ("PRB", "ACK", "TIM1", "TIM2", "LNK1", "LNK2")

# Offset-consistency slack granted during cycle checks, in clock counts. A
# conforming receive stamp is the floor of the declared image of the matching
# send stamp, so it sits within one count of the image; the second count
# absorbs the leader's tick round-up when initiating.
STAMP_SLACK = 2


def _tick_up(x, quantum: Fraction) -> Fraction:
    """Smallest multiple of quantum at or above x."""
    return math.ceil(frac(x) / quantum) * quantum


# ---------------------------------------------------------------------------
# Signed payload items
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StampClaim:
    """One node's signed stamp (or timeout notice) from a cycle circulation.

    Hop k runs cycle[k] -> cycle[(k+1) % m]; role is "send" for the hop's
    sender, "recv" for its receiver, and "timeout" with hop -1 when the
    signer waited its stage out without the event it expected. Equivocating
    about a stamp (two claims, same key, different counts) cancels both
    copies at decision time, which reads as a missing stamp downstream.
    """

    cycle: tuple[NodeId, ...]
    hop: int
    role: str
    count: Fraction
    signer: NodeId
    sig: object

    def body(self) -> tuple:
        return ("stamp", self.cycle, self.hop, self.role, frac(self.count))

    def claims(self):
        return ((self.signer, self.body(), self.sig),)

    def conflict_key(self) -> tuple:
        return ("stamp", self.cycle, self.hop, self.role)


@dataclass(frozen=True)
class FailureRecord:
    """A scheduled receiver's signed report that a slot's delivery failed.

    `entry` names the offending feasible-set entry by its position in the
    common ordering; `packet` numbers the lost packet (the slot ordinal, at
    one packet per slot); `slot` is the frame slot the delivery was expected
    in. Only reports from receivers the common schedule put in that slot
    count at pruning time.
    """

    entry: int
    packet: int
    slot: int
    iteration: int
    reporter: NodeId
    sig: object

    def body(self) -> tuple:
        return (
            "failure",
            self.entry,
            self.packet,
            self.slot,
            self.iteration,
            self.reporter,
        )

    def claims(self):
        return ((self.reporter, self.body(), self.sig),)

    def conflict_key(self) -> tuple:
        return ("failure", self.entry, self.slot, self.iteration)


@dataclass
class NodeState:
    """One node's protocol-visible view, threaded through the phases."""

    node: NodeId
    phase: str = "neighbor-discovery"
    neighbors: frozenset[NodeId] = frozenset()
    certs: dict[Edge, LinkCertificate] = field(default_factory=dict)
    timing: frozenset = frozenset()
    feasible: Optional[FeasibleSet] = None
    failures: tuple = ()
    ref_skew: Optional[Fraction] = None


# ---------------------------------------------------------------------------
# Stage horizons and fitted stage-cost constants
# ---------------------------------------------------------------------------


def discovery_packet_width(quantum: Fraction, constants: ParamConstants) -> Fraction:
    """Control-packet duration: room for a count of any admissible lifetime.

    Fixed before parameter selection so the rendezvous horizon cannot depend
    on the chosen lifetime; one extra bit covers the sign-free range up to
    2^max_lifetime_exponent.
    """
    return frac(quantum) * (constants.max_lifetime_exponent + 1)


def _plan_a_horizons(
    n: int, cp: ClockParams, unit: Fraction, pad: bool
) -> list[Fraction]:
    """Per-stage horizons for the 6 + n discovery stages.

    The TIM1 stage is stretched so that the sender-count gap between a TIM1
    delivery (within one base horizon of the burst start) and the following
    TIM2 burst is at least 8 n a_max^2 / eps_a ticks: the slope estimate of
    an honest edge then errs by under eps_a / (4 n a_max), which keeps
    composite products over up to n hops within eps_a / 2. Horizons are
    rounded up to multiples of the rendezvous horizon so the synchronized
    branch keeps its burst alignment; `pad` replaces the rounding with a
    fixed allowance, keeping the value affine in 1/eps_a for the
    constant-fitting evaluation.
    """
    sep = cp.quantum * (2 + Fraction(8 * n) * cp.a_max**2 / cp.eps_a)
    tim1 = (unit + sep + unit) if pad else _tick_up(unit + sep, unit)
    return [unit, unit, tim1, unit, unit, unit] + [unit] * n


def _cchk_horizon(n: int, cp: ClockParams, unit: Fraction, pad: bool) -> Fraction:
    """One consistency-check stage: n hops of forward-and-stamp latitude."""
    raw = n * (unit + cp.a_max * (cp.K + 1) * cp.quantum)
    return raw + unit if pad else _tick_up(raw, unit)


def _fold_plan(t_0, horizons: Sequence[Fraction], cp: ClockParams) -> Fraction:
    """End boundary of a stage plan without materializing it."""
    a = cp.a_max
    t = frac(t_0)
    for h in horizons:
        t = a**2 * t + 2 * a**3 * cp.U_0 + a**3 * h
    return t


def _check_start_floor(n: int, cp: ClockParams) -> Fraction:
    """Local boundary value past which every cycle check is decisive.

    Readings at or past this value put the circulation after the uniform
    start bound on the reference axis, and the leader's initiating count
    past the waiting bound of any cycle whose declared skews survived the
    admission cap.
    """
    start = cp.a_max * (consistency_start_time(n, cp) + cp.U_0)
    cap = (cp.a_max + cp.eps_a) ** n
    eps_b = max(cp.eps_b, Fraction(STAMP_SLACK))
    wait = cp.quantum * ((cap * (n + 1) * cp.K + eps_b) / cp.eps_a + 1)
    return start + wait


def _discovery_end_bound(n: int, cp: ClockParams, unit: Fraction) -> Fraction:
    """Upper bound, exactly affine in 1/eps_a, on the discovery end mapped
    to any good clock, with the consistency phase budgeted at n stages per
    flagged cycle and the worst-case flagged-cycle count."""
    plan_a_end = _fold_plan(0, _plan_a_horizons(n, cp, unit, pad=True), cp)
    t_0b = plan_a_end + _check_start_floor(n, cp) + cp.quantum
    cycles = (n - 1) * (n - 2) // 2
    horizons = [_cchk_horizon(n, cp, unit, pad=True)] * (n * cycles) + [unit] * n
    plan_b_end = _fold_plan(t_0b, horizons, cp)
    return cp.a_max * plan_b_end + cp.a_max * cp.U_0 + cp.quantum


def fitted_constants(n: int, cp: ClockParams) -> ParamConstants:
    """Stage-cost coefficients measured from this construction.

    The discovery end bound is affine in 1/eps_a, so evaluating it at two
    eps_a values pins both coefficients. The 1/eps_a slope goes into c2.
    The constant part must not ride c2 (the selection loop scales c2 by
    1/eps_a, which grows like sqrt(T_life), so a constant cost would get
    squared into the lifetime); it rides c1 instead, whose multiplier
    bit_length(T_life) is at least five for every admissible lifetime,
    hence the division by four over-covers it. c1 also carries the
    verification phases' packet airtime (n^3 (n-1) control packets per
    iteration); c3 and c4 are the guard-time multipliers of one data frame
    and one verification phase.
    """
    base = ParamConstants()
    w = discovery_packet_width(cp.quantum, base)
    sync = cp.a_max == 1 and cp.U_0 == 0
    omc = build_omc(n, cp.a_max, cp.quantum, w, synchronized=sync)

    def end(eps: Fraction) -> Fraction:
        return _discovery_end_bound(n, replace(cp, eps_a=eps), omc.t_mac)

    t_half, t_quarter = end(Fraction(1, 2)), end(Fraction(1, 4))
    beta = (t_quarter - t_half) / 2
    alpha = 2 * t_half - t_quarter
    return ParamConstants(
        c1=Fraction(n**3 * (n - 1)) * w + max(alpha, Fraction(0)) / 4,
        c2=beta,
        c3=Fraction(2 * n**2 * (n - 1)),
        c4=Fraction(2 * n**3 * (n - 1)),
        max_lifetime_exponent=base.max_lifetime_exponent,
    )


# ---------------------------------------------------------------------------
# Neighbor discovery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeliveryRecord:
    """One control-packet capture, for the containment audit trail."""

    stage: int
    tag: str
    sender: NodeId
    receiver: NodeId
    t: Fraction  # reference time of the packet start


@dataclass
class DiscoveryResult:
    neighbors: dict[NodeId, frozenset[NodeId]]
    estimates: dict[NodeId, dict[Edge, SkewEstimate]]
    certs: dict[NodeId, dict[Edge, LinkCertificate]]
    deliveries: list[DeliveryRecord]
    plan: StagePlan
    pruned: list[tuple[str, NodeId, NodeId]]


def _rate_alphabet(world: World) -> frozenset[Fraction]:
    rates = set()
    for vec in world.config.rate_model.table.values():
        for _, r in vec.entries:
            rates.add(frac(r))
    return frozenset(rates)


def _inbound_claims(world: World, me: NodeId) -> dict[Ctv, dict[Edge, Fraction]]:
    """True inbound rates per catalog CTV, filtered through the strategy for
    misbehaving claimants. Absent keys mean a zero claim."""
    table = world.config.rate_model.table
    out: dict[Ctv, dict[Edge, Fraction]] = {}
    for ctv in sorted(table, key=str):
        honest = {
            pair: r
            for pair, r in table[ctv].as_dict().items()
            if pair[1] == me and r > 0
        }
        if me in world.bad:
            claimed = world.strategy.claim_rates(me, ctv, dict(honest))
            out[ctv] = {pair: frac(r) for pair, r in dict(claimed).items()}
        else:
            out[ctv] = honest
    return out


def _edge_rate_quads(
    claims: Mapping[Ctv, Mapping[Edge, Fraction]], edge: Edge
) -> tuple:
    """Canonical (ctv, src, dst, rate) quadruples claimed for one edge."""
    quads = []
    for ctv in sorted(claims, key=str):
        r = claims[ctv].get(edge)
        if r:
            quads.append((str(ctv), edge[0], edge[1], frac(r)))
    return tuple(sorted(quads))


def neighbor_discovery(
    world: World, plan: StagePlan, omc: OmcSchedule
) -> DiscoveryResult:
    """Run the six handshake stages and assemble dual-signed certificates.

    Every ordered pair is attempted in every stage; a pair survives only as
    long as each stage's packet was captured and carried a valid payload.
    Failures prune silently: missing captures, dropped or malformed replies,
    degenerate timing exchanges, skews outside the admission cap, rate
    claims outside the model's alphabet, and bad signatures all remove the
    pair. Pruning applies after every stage, acknowledgment included.
    """
    cfg = world.config
    n, q = world.n, world.quantum
    eps_a = world.params.eps_a if world.params else cfg.clock_params.eps_a
    skew_cap = cfg.clock_params.a_max + eps_a
    alphabet = _rate_alphabet(world)
    strategy = world.strategy

    extras: list[Fraction] = [omc.w]
    for k in range(min(plan.num_stages, 6)):
        for v in roster(n):
            clock = world.clock(v)
            lo, hi = plan.burst(k)
            extras.append(clock.time_at(lo))
            extras.append(clock.time_at(hi))
    den = kernel_scale(cfg.clocks, q, extras)
    patterns = omc.bind_all(cfg.clocks, den)
    good_mask = [1 if v in world.good else 0 for v in roster(n)]
    w_num = omc.w * den
    assert w_num.denominator == 1

    pairs = [(i, j) for i in roster(n) for j in roster(n) if i != j]
    alive: dict[NodeId, set[NodeId]] = {v: set() for v in roster(n)}
    deliveries: list[DeliveryRecord] = []
    pruned: list[tuple[str, NodeId, NodeId]] = []

    def capture(k: int, live_pairs) -> dict[Edge, Fraction]:
        hits: dict[Edge, Fraction] = {}
        for i, j in live_pairs:
            clock = world.clock(i)
            lo, hi = plan.burst(k)
            t0 = clock.time_at(lo) * den
            t1 = clock.time_at(hi) * den
            assert t0.denominator == 1 and t1.denominator == 1
            found = _kernels.find_delivery(
                patterns,
                good_mask,
                i - 1,
                j - 1,
                int(t0),
                int(t1),
                int(t0),
                int(w_num),
                omc.driver(i, j) - 1,
            )
            if found is not None:
                hits[(i, j)] = Fraction(found, den)
        tag = DISCOVERY_TAGS[k]
        for (i, j), t in sorted(hits.items()):
            deliveries.append(DeliveryRecord(k, tag, i, j, t))
            world.trace.record(
                t, "neighbor-discovery", tag, node=j, outcome="captured",
                data={"from": i},
            )
        return hits

    def drop(tag: str, i: NodeId, j: NodeId) -> None:
        alive[j].discard(i)
        alive[i].discard(j)
        pruned.append((tag, i, j))
        world.trace.record(
            plan.boundaries[-1], "neighbor-discovery", tag, node=j,
            outcome="pruned", data={"peer": i},
        )

    def sends(stage: str, i: NodeId, j: NodeId, payload):
        """Payload as transmitted: bad senders may rewrite or drop (None)."""
        if i in world.bad:
            return strategy.discovery_reply(stage, i, j, payload)
        return payload

    # S1 probe: presence only
    heard: dict[NodeId, set[NodeId]] = {v: set() for v in roster(n)}
    for (i, j) in sorted(capture(0, pairs)):
        if sends("PRB", i, j, ("PRB", i)) is not None:
            heard[j].add(i)

    # S2 acknowledgment: j answers with the probe sources it heard, and i
    # keeps j exactly when the acknowledgment names it
    for (j, i) in sorted(capture(1, pairs)):
        payload = sends("ACK", j, i, ("ACK", j, tuple(sorted(heard[j]))))
        if (
            isinstance(payload, tuple)
            and len(payload) == 3
            and payload[0] == "ACK"
            and i in payload[2]
        ):
            alive[i].add(j)

    # S3/S4 timing exchange: both endpoints stamp the packet start instant
    stamps: dict[Edge, list[tuple[int, int]]] = {}
    for k, tag in ((2, "TIM1"), (3, "TIM2")):
        live = [(i, j) for i, j in pairs if i in alive[j] and j in alive[i]]
        hits = capture(k, live)
        for i, j in live:
            t = hits.get((i, j))
            if t is None or sends(tag, i, j, ("TIM", i)) is None:
                drop(tag, i, j)
                continue
            s = world.counts(i, t)
            r = world.counts(j, t)
            if i in world.bad:
                s = strategy.timestamp(i, j, tag, s)
            if j in world.bad:
                r = strategy.timestamp(j, i, tag, r)
            stamps.setdefault((i, j), []).append((s, r))

    estimates: dict[NodeId, dict[Edge, SkewEstimate]] = {v: {} for v in roster(n)}
    for i, j in pairs:
        if i not in alive[j]:
            continue
        pair_stamps = stamps.get((i, j), [])
        if len(pair_stamps) != 2:
            continue  # the pair was already dropped in the stage loop
        (s1, r1), (s2, r2) = pair_stamps
        try:
            est = estimate_skew(TimingExchange((i, j), s1, r1, s2, r2))
        except (DegenerateExchange, ValueError):
            drop("TIM2", i, j)
            continue
        if not 0 < est.a_hat <= skew_cap:
            drop("TIM2", i, j)
            continue
        if j in world.bad:
            est = strategy.declare_skew(j, (i, j), est)
        estimates[j][(i, j)] = est

    # S5 link halves: the sender's receiver-side estimate of the reverse
    # edge plus its claimed inbound rates, transport-signed
    claims = {v: _inbound_claims(world, v) for v in roster(n)}
    halves: dict[Edge, tuple[Fraction, Fraction, tuple]] = {}
    live = [(i, j) for i, j in pairs if i in alive[j] and j in alive[i]]
    hits = capture(4, live)
    for i, j in live:
        est = estimates[i].get((j, i))
        if hits.get((i, j)) is None or est is None:
            drop("LNK1", i, j)
            continue
        body = (
            "LNK1", i, j, est.a_hat, est.b_hat, _edge_rate_quads(claims[i], (j, i))
        )
        msg = sends("LNK1", i, j, (body, world.registry.sign(i, body)))
        if not (isinstance(msg, tuple) and len(msg) == 2):
            drop("LNK1", i, j)
            continue
        got, sig = msg
        if (
            not world.registry.verify(i, got, sig)
            or not isinstance(got, tuple)
            or len(got) != 6
            or got[:3] != ("LNK1", i, j)
            or not 0 < frac(got[3]) <= skew_cap
        ):
            drop("LNK1", i, j)
            continue
        quads = got[5]
        well_formed = isinstance(quads, tuple) and all(
            isinstance(x, tuple)
            and len(x) == 4
            and x[1] == j
            and x[2] == i
            and frac(x[3]) in alphabet
            for x in quads
        )
        if not well_formed:
            drop("LNK1", i, j)
            continue
        halves[(i, j)] = (frac(got[3]), frac(got[4]), quads)

    # S6 full-body signatures over the identical canonical body
    bodies: dict[Edge, tuple] = {}
    for i, j in sorted({(min(p), max(p)) for p in pairs}):
        half_j = halves.get((j, i))  # j's estimate of edge (i, j)
        half_i = halves.get((i, j))  # i's estimate of edge (j, i)
        if half_j is None or half_i is None:
            continue
        if not (i in alive[j] and j in alive[i]):
            continue
        a_ij, b_ij, quads_j = half_j
        a_ji, b_ji, quads_i = half_i
        rates = tuple(sorted(set(quads_i) | set(quads_j)))
        bodies[(i, j)] = certificate_body(i, j, a_ij, b_ij, a_ji, b_ji, rates)

    lnk2: dict[Edge, object] = {}  # (sender, receiver) -> verified signature
    live = [(i, j) for i, j in pairs if i in alive[j] and j in alive[i]]
    hits = capture(5, live)
    for i, j in live:
        body = bodies.get((min(i, j), max(i, j)))
        if hits.get((i, j)) is None or body is None:
            drop("LNK2", i, j)
            continue
        msg = sends("LNK2", i, j, ("LNK2", world.registry.sign(i, body)))
        if (
            not (isinstance(msg, tuple) and len(msg) == 2)
            or msg[0] != "LNK2"
            or not world.registry.verify(i, body, msg[1])
        ):
            drop("LNK2", i, j)
            continue
        lnk2[(i, j)] = msg[1]

    certs: dict[NodeId, dict[Edge, LinkCertificate]] = {v: {} for v in roster(n)}
    for v in roster(n):
        for peer in sorted(alive[v]):
            lo, hi = (v, peer) if v < peer else (peer, v)
            body = bodies.get((lo, hi))
            peer_sig = lnk2.get((peer, v))
            if body is None or peer_sig is None:
                continue
            own_sig = world.registry.sign(v, body)
            certs[v][(lo, hi)] = LinkCertificate(
                lo, hi, body[3], body[4], body[5], body[6], body[7],
                own_sig if v == lo else peer_sig,
                own_sig if v == hi else peer_sig,
            )
    for v in roster(n):
        for peer in sorted(alive[v]):
            if (min(v, peer), max(v, peer)) not in certs[v]:
                drop("LNK2", peer, v)

    neighbors = {v: frozenset(alive[v]) for v in roster(n)}
    return DiscoveryResult(
        neighbors=neighbors,
        estimates=estimates,
        certs=certs,
        deliveries=deliveries,
        plan=plan,
        pruned=pruned,
    )


# ---------------------------------------------------------------------------
# Agreement rounds
# ---------------------------------------------------------------------------


def _run_eig(
    world: World,
    phase: str,
    payloads: Mapping[NodeId, Iterable],
    links: Mapping[NodeId, frozenset[NodeId]],
) -> dict[NodeId, frozenset]:
    """n signed-relay rounds over the given adjacency; returns decided views.

    Trees are kept for every node, misbehaving ones included (their honest
    bookkeeping is what a conforming node in their position would hold);
    outgoing slices of bad nodes pass through the strategy hook once per
    receiver.
    """
    n = world.n
    check = world.registry.verify
    trees = {v: new_tree(v, n, payloads.get(v, ())) for v in roster(n)}
    for k in range(1, n + 1):
        slices = {
            v: relay_slice(trees[v], k, world.registry.signer(v)) for v in roster(n)
        }
        inbound: dict[NodeId, dict[NodeId, dict]] = {v: {} for v in roster(n)}
        for v in roster(n):
            for u in sorted(links.get(v, frozenset())):
                out = slices[u]
                if u in world.bad:
                    out = world.strategy.eig_outgoing(phase, k, u, v, dict(out))
                    out = {} if out is None else out
                inbound[v][u] = out
        for v in roster(n):
            trees[v] = eig_round(trees[v], k, inbound[v], check)
    return {v: eig_decide(trees[v], check) for v in roster(n)}


def _assert_common(world: World, label: str, views: Mapping[NodeId, Any]) -> str:
    digests = {v: digest(views[v]) for v in sorted(world.good)}
    reference = digests[min(digests)]
    if any(d != reference for d in digests.values()):
        raise AssertionError(f"good nodes disagree after {label}: {digests}")
    return reference


def _undirected_links(
    certs: Mapping[Edge, LinkCertificate], n: int
) -> dict[NodeId, frozenset[NodeId]]:
    out: dict[NodeId, set[NodeId]] = {v: set() for v in roster(n)}
    for (i, j) in certs:
        out[i].add(j)
        out[j].add(i)
    return {v: frozenset(peers) for v, peers in out.items()}


# ---------------------------------------------------------------------------
# Network discovery
# ---------------------------------------------------------------------------


@dataclass
class NetworkView:
    """Common post-agreement state every good node reconstructs bit for bit."""

    certs: dict[Edge, LinkCertificate]
    declared: dict[Edge, SkewEstimate]
    topology: Digraph
    component: frozenset[NodeId]
    root: NodeId
    ref: dict[NodeId, Fraction]
    feasible: FeasibleSet
    flagged: list[tuple[NodeId, ...]]
    removed: frozenset[Edge]
    plan_b: StagePlan
    digest: str


def _cert_graph(certs: Mapping[Edge, LinkCertificate], n: int) -> Digraph:
    edges = set()
    for (i, j) in certs:
        edges.add((i, j))
        edges.add((j, i))
    return Digraph(nodes=tuple(roster(n)), edges=frozenset(edges))


def _declared_maps(certs: Mapping[Edge, LinkCertificate]) -> dict[Edge, SkewEstimate]:
    declared = {}
    for (i, j), cert in certs.items():
        declared[(i, j)] = SkewEstimate((i, j), cert.a_ij, cert.b_ij)
        declared[(j, i)] = SkewEstimate((j, i), cert.a_ji, cert.b_ji)
    return declared


def _wait_floor(
    flagged: Sequence[tuple[NodeId, ...]],
    declared: Mapping[Edge, SkewEstimate],
    cp: ClockParams,
) -> Fraction:
    """Extra local waiting that makes every flagged cycle's check decisive."""
    worst = Fraction(0)
    for cycle in flagged:
        m = len(cycle)
        prefix = [Fraction(1)]
        for k in range(m):
            prefix.append(prefix[-1] * declared[(cycle[k], cycle[(k + 1) % m])].a_hat)
        i_star = min(range(m + 1), key=lambda k: (prefix[k], k))
        worst = max(worst, cycle_wait_bound(prefix[m] / prefix[i_star], m, cp))
    return cp.quantum * (worst + 1)


def _circulate(
    world: World,
    cycle: tuple[NodeId, ...],
    declared: Mapping[Edge, SkewEstimate],
    plan_b: StagePlan,
    stage: int,
    cp: ClockParams,
) -> tuple[list[HopStamps], list[NodeId]]:
    """One timing packet around the cycle: per-hop stamps plus the members
    that file timeout notices.

    Conforming stamps ride the declared maps (receive = floor of the
    declared image of the send, forward on the same count). Misbehaving
    members may override their own stamps through the strategy's plan; a
    missing conforming receive propagates as a missing send unless a later
    member fabricates one. The leader vetoes returns that are
    arithmetically impossible (before its initiating count) or later than
    its timeout, in both cases by filing a timeout notice.
    """
    m = len(cycle)
    maps = [declared[(cycle[k], cycle[(k + 1) % m])] for k in range(m)]
    leader = cycle[0]
    s0 = Fraction(math.ceil(plan_b.sender_start(stage) / cp.quantum))

    overrides: Mapping[int, HopStamps] = {}
    if any(v in world.bad for v in cycle):
        t1 = world.clock(leader).time_at(plan_b.sender_start(stage))
        planned = world.strategy.cycle_plan(cycle, dict(declared), t1)
        if planned:
            overrides = planned

    def forced(k: int, role: str) -> Optional[Fraction]:
        hop = overrides.get(k)
        if hop is None:
            return None
        value = hop.send if role == "send" else hop.recv
        return None if value is None else frac(value)

    sends: list[Optional[Fraction]] = [None] * m
    recvs: list[Optional[Fraction]] = [None] * m
    for k in range(m):
        if cycle[k] in world.bad and forced(k, "send") is not None:
            sends[k] = forced(k, "send")
        elif k == 0:
            sends[k] = s0
        else:
            sends[k] = recvs[k - 1]
        if cycle[(k + 1) % m] in world.bad and forced(k, "recv") is not None:
            recvs[k] = forced(k, "recv")
        elif sends[k] is not None:
            recvs[k] = Fraction(math.floor(maps[k].image(sends[k])))

    timeouts = {
        cycle[(k + 1) % m]
        for k in range(m)
        if cycle[(k + 1) % m] in world.good and recvs[k] is None
    }
    if leader in world.good and recvs[m - 1] is not None:
        if recvs[m - 1] < s0 or recvs[m - 1] - s0 > cycle_timeout(m, cp):
            timeouts.add(leader)

    hops = [HopStamps(send=sends[k], recv=recvs[k]) for k in range(m)]
    return hops, sorted(timeouts)


def _stamp_claims(
    world: World,
    cycle: tuple[NodeId, ...],
    hops: Sequence[HopStamps],
    timeouts: Sequence[NodeId],
) -> list[StampClaim]:
    """Each member's signed claims about its own stamps."""
    m = len(cycle)

    def signed(signer: NodeId, hop: int, role: str, count) -> StampClaim:
        body = ("stamp", cycle, hop, role, frac(count))
        return StampClaim(
            cycle, hop, role, frac(count), signer, world.registry.sign(signer, body)
        )

    claims = []
    for k in range(m):
        if hops[k].send is not None:
            claims.append(signed(cycle[k], k, "send", hops[k].send))
        if hops[k].recv is not None:
            claims.append(signed(cycle[(k + 1) % m], k, "recv", hops[k].recv))
    for v in timeouts:
        claims.append(signed(v, -1, "timeout", 0))
    return claims


def _merge_trace(cycle: tuple[NodeId, ...], decided: frozenset) -> CycleTrace:
    """Assemble the commonly decided stamp claims into one trace.

    Only a claim signed by the hop's own role-holder counts; equivocations
    were cancelled at decision time, so at most one candidate remains per
    (hop, role).
    """
    m = len(cycle)
    sends: dict[int, Fraction] = {}
    recvs: dict[int, Fraction] = {}
    timeout = False
    relevant = [x for x in decided if isinstance(x, StampClaim) and x.cycle == cycle]
    for item in sorted(relevant, key=lambda c: (c.hop, c.role, c.signer)):
        if item.role == "timeout":
            timeout = timeout or item.signer in cycle
            continue
        if not 0 <= item.hop < m:
            continue
        owner = cycle[item.hop] if item.role == "send" else cycle[(item.hop + 1) % m]
        if item.signer == owner:
            (sends if item.role == "send" else recvs)[item.hop] = item.count
    hops = tuple(HopStamps(send=sends.get(k), recv=recvs.get(k)) for k in range(m))
    return CycleTrace(cycle=cycle, hops=hops, timeout_expired=timeout)


def _canon_edge(u: NodeId, v: NodeId) -> Edge:
    return (u, v) if u < v else (v, u)


def _component_subgraph(graph: Digraph, seed: frozenset[NodeId]) -> Digraph:
    """The bidirectional component around `seed`, with its edges."""
    undirected: dict[NodeId, set[NodeId]] = {v: set() for v in graph.nodes}
    for u, v in graph.edges:
        if (v, u) in graph.edges:
            undirected[u].add(v)
            undirected[v].add(u)
    seen = set(seed)
    frontier = sorted(seed)
    while frontier:
        step = []
        for u in frontier:
            for v in sorted(undirected[u]):
                if v not in seen:
                    seen.add(v)
                    step.append(v)
        frontier = step
    return Digraph(
        nodes=tuple(sorted(seen)),
        edges=frozenset(e for e in graph.edges if e[0] in seen and e[1] in seen),
    )


def _claimed_vector(
    certs: Mapping[Edge, LinkCertificate], ctv: Ctv
) -> LinkRateVector:
    rates = {}
    text = str(ctv)
    for cert in certs.values():
        for (c, src, dst, r) in cert.rates:
            if c == text and frac(r) > 0:
                rates[(src, dst)] = frac(r)
    return LinkRateVector.from_dict(rates)


def network_discovery(
    world: World,
    disc: DiscoveryResult,
    plan_a: StagePlan,
    omc: OmcSchedule,
    cp: ClockParams,
) -> NetworkView:
    """Topology agreement, cycle screening and checks, reference estimates.

    Raises AssumptionCViolated when the surviving bidirectional topology
    splits the good nodes.
    """
    n = world.n

    payloads = {
        v: tuple(disc.certs[v][e] for e in sorted(disc.certs[v])) for v in roster(n)
    }
    views = _run_eig(world, "topology", payloads, disc.neighbors)
    cert_digest = _assert_common(world, "certificate agreement", views)
    decided = views[min(world.good)]

    certs: dict[Edge, LinkCertificate] = {}
    for item in decided:
        if isinstance(item, LinkCertificate):
            certs[(item.i, item.j)] = item
    declared = _declared_maps(certs)
    graph = _cert_graph(certs, n)

    flagged = sorted(find_inconsistent_cycles(graph, declared, cp.eps_a))
    world.trace.record(
        plan_a.boundaries[-1], "network-discovery", "EIG", outcome="agreed",
        data={"certs": len(certs), "flagged": len(flagged)},
    )

    # the consistency and stamp-agreement stages are planned from commonly
    # decided data only, so every good node derives the same plan
    t_0b = _tick_up(
        max(plan_a.boundaries[-1], _check_start_floor(n, cp))
        + _wait_floor(flagged, declared, cp),
        omc.t_mac if omc.synchronized else cp.quantum,
    )
    horizons = [_cchk_horizon(n, cp, omc.t_mac, pad=False)] * len(flagged) + [
        omc.t_mac
    ] * n
    tags = [f"CCHK{k}" for k in range(len(flagged))] + [f"EIGT{k}" for k in range(n)]
    plan_b = stage_plan(t_0b, len(flagged) + n, cp, horizons, tags)

    claims: dict[NodeId, list[StampClaim]] = {v: [] for v in roster(n)}
    for idx, cycle in enumerate(flagged):
        hops, timeouts = _circulate(world, cycle, declared, plan_b, idx, cp)
        for claim in _stamp_claims(world, cycle, hops, timeouts):
            claims[claim.signer].append(claim)

    links = _undirected_links(certs, n)
    timing_views = _run_eig(
        world, "timing", {v: tuple(claims[v]) for v in roster(n)}, links
    )
    timing_digest = _assert_common(world, "stamp agreement", timing_views)
    timing = timing_views[min(world.good)]

    removed: set[Edge] = set()
    for cycle in flagged:
        trace = _merge_trace(cycle, timing)
        if trace.hops[0].send is None:
            # no initiating record: conforming leaders always initiate, so
            # both of the leader's cycle edges go
            removed.add(_canon_edge(cycle[-1], cycle[0]))
            removed.add(_canon_edge(cycle[0], cycle[1]))
            continue
        try:
            verdict = run_cycle_check(trace, declared, cp)
        except IncompleteTrace:
            # missing stamps without timeout evidence: not enough to blame
            continue
        for (u, v) in verdict.failed_links:
            removed.add(_canon_edge(u, v))
    for edge in sorted(removed):
        certs.pop(edge, None)
        world.trace.record(
            plan_b.boundaries[-1], "network-discovery", "CCHK",
            outcome="removed", data={"edge": list(edge)},
        )

    declared = _declared_maps(certs)
    graph = _cert_graph(certs, n)
    component = good_component(graph, world.good)
    sub = _component_subgraph(graph, component)
    ref = reference_clock(sub, declared)
    root = min(sub.nodes)

    entries = []
    for ctv in sorted(world.config.rate_model.table, key=str):
        entries.append((ctv, _claimed_vector(certs, ctv)))
    feasible = FeasibleSet.initial(entries)

    return NetworkView(
        certs=certs,
        declared=declared,
        topology=graph,
        component=component,
        root=root,
        ref=ref,
        feasible=feasible,
        flagged=flagged,
        removed=frozenset(removed),
        plan_b=plan_b,
        digest=digest((cert_digest, timing_digest, sorted(removed))),
    )


# ---------------------------------------------------------------------------
# Steady-state iterations
# ---------------------------------------------------------------------------


def _claims_graph(feasible: FeasibleSet, n: int) -> Digraph:
    edges = set()
    for _, vec in feasible.entries:
        for pair, r in vec.entries:
            if r > 0:
                edges.add(pair)
    return Digraph(nodes=tuple(roster(n)), edges=frozenset(edges))


def _action_lands(
    world: World, net: NetworkView, v: NodeId, target: Fraction, dead: Fraction
) -> bool:
    """Whether v's action instant for root-axis value `target` truly lands
    within one guard time of it.

    v acts at its first tick at or past target divided by its composite
    slope estimate; the guard sizing absorbs both the estimate error and
    the offsets.
    """
    a_hat = net.ref.get(v)
    if a_hat is None:
        return False
    tau = _tick_up(target / a_hat, world.quantum)
    actual = world.clock(net.root).raw(world.clock(v).time_at(tau))
    return abs(actual - target) <= dead


@dataclass
class _Walk:
    """Runtime backlog state for one decomposition path of one commodity."""

    pair: tuple[NodeId, NodeId]
    path: tuple[NodeId, ...]
    rate: Fraction
    backlog: list[Fraction]


def _plan_walks(plan) -> list[_Walk]:
    """The plan's path decomposition, mirrored from the frame builder so the
    runtime backlogs line up with the planned manifests."""
    walks = []
    for pair in sorted(plan.x):
        flow = {
            edge: v for (p, edge), v in plan.flows.items() if p == pair and v > 0
        }
        for path, rate in _decompose(flow, *pair):
            walks.append(_Walk(pair, path, rate, [Fraction(0)] * len(path)))
    return walks


def _run_frame(
    world: World,
    net: NetworkView,
    schedule: Schedule,
    walks: list[_Walk],
    iteration: int,
    frame_start: Fraction,
) -> tuple[dict[tuple[NodeId, NodeId], Fraction], list[tuple[int, Edge]]]:
    """Execute one data frame against the real channel and clocks.

    Returns delivered bits per pair and the (slot, link) misses that good
    scheduled receivers observed. A scheduled link delivers only when the
    channel realizes its planned rate in full, both good endpoints' boundary
    estimates land within the guard time, and no rush voided the slot; a
    rush in slot k also forfeits the rusher's own scheduled links in k.
    Volumes move store-and-forward against what was actually waiting when
    the slot began, never more than planned.
    """
    by_key = {(w.pair, w.path): w for w in walks}
    for w in walks:
        w.backlog[0] += w.rate * world.params.data_time

    delivered: dict[tuple[NodeId, NodeId], Fraction] = {}
    misses: list[tuple[int, Edge]] = []
    strategy = world.strategy
    # moves applied in the previous slot, still voidable by a rush:
    # (slot index, [(walk key, leg, bits)], delivered links)
    pending: Optional[tuple[int, list, list]] = None

    def commit(entry) -> None:
        _, moves, _ = entry
        for key, leg, take in moves:
            w = by_key[key]
            if leg == len(w.path) - 2:
                delivered[w.pair] = delivered.get(w.pair, Fraction(0)) + take

    for k in range(1, len(schedule.slots) + 1):
        slot = schedule.slots[k - 1]
        played = {}
        rushers = set()
        for v in sorted(world.bad):
            played[v] = strategy.slot_mode(v, iteration, k, slot)
            if strategy.rush(v, iteration, k, slot):
                rushers.add(v)
        if pending is not None:
            if rushers:
                # the rush tramples the previous slot's tail: roll its moves
                # back and let its receivers report the loss
                _, moves, hits = pending
                for key, leg, take in reversed(moves):
                    w = by_key[key]
                    w.backlog[leg] += take
                    w.backlog[leg + 1] -= take
                misses.extend(hits)
            else:
                commit(pending)
            pending = None

        realized = world.resolve(slot.ctv, played)
        boundary_target = frame_start + schedule.boundary(k) + schedule.dead
        link_ok: dict[Edge, bool] = {}
        for (i, j) in slot.rates.positive_links():
            ok = realized.rate(i, j) >= slot.rates.rate(i, j)
            if ok and (i in rushers or j in rushers):
                ok = False
            for v in (i, j):
                if ok and v in world.good:
                    ok = _action_lands(world, net, v, boundary_target, schedule.dead)
            link_ok[(i, j)] = ok
            if not ok:
                misses.append((k, (i, j)))

        moves: list[tuple[tuple, int, Fraction]] = []
        before = {key: list(w.backlog) for key, w in by_key.items()}
        for p in slot.manifest:
            key = (p.pair, p.path)
            take = min(p.bits, before[key][p.leg])
            if take > 0 and link_ok.get(p.link, False):
                w = by_key[key]
                before[key][p.leg] -= take
                w.backlog[p.leg] -= take
                w.backlog[p.leg + 1] += take
                moves.append((key, p.leg, take))
        hits = [(k, pair) for pair, ok in sorted(link_ok.items()) if ok]
        pending = (k, moves, hits)

    if pending is not None:
        commit(pending)
    return delivered, misses


def _verification(
    world: World,
    net: NetworkView,
    schedule: Schedule,
    misses: Sequence[tuple[int, Edge]],
    entry_ids: Mapping[tuple, int],
    iteration: int,
) -> frozenset:
    """Build signed failure reports, disseminate, return the decided set.

    The phase occupies n^3 (n-1) report slots (n relay rounds, one slot per
    ordered pair per round with the per-pair sub-slots folded in);
    content-wise the relays ride the agreed topology.
    """
    n = world.n
    reports: dict[NodeId, list[FailureRecord]] = {v: [] for v in roster(n)}
    for k, (i, j) in sorted(set(misses)):
        slot = schedule.slots[k - 1]
        entry = entry_ids.get((str(slot.ctv), slot.rates))
        if entry is None:
            continue
        body = ("failure", entry, k, k, iteration, j)
        reports[j].append(
            FailureRecord(entry, k, k, iteration, j, world.registry.sign(j, body))
        )
    for v in sorted(world.bad):
        reports[v] = list(
            world.strategy.failure_reports(v, iteration, tuple(reports[v]))
        )

    views = _run_eig(
        world,
        "verification",
        {v: tuple(reports[v]) for v in roster(n)},
        _undirected_links(net.certs, n),
    )
    _assert_common(world, f"verification {iteration}", views)
    return views[min(world.good)]


def _valid_failures(
    decided: frozenset,
    schedule: Schedule,
    entries: Sequence,
    entry_ids: Mapping[tuple, int],
    iteration: int,
) -> frozenset:
    """Reports that name a real slot, match its entry, and come from one of
    its scheduled receivers; everything else is ignored."""
    keep = set()
    for item in decided:
        if not isinstance(item, FailureRecord) or item.iteration != iteration:
            continue
        if not 1 <= item.slot <= len(schedule.slots):
            continue
        slot = schedule.slots[item.slot - 1]
        if entry_ids.get((str(slot.ctv), slot.rates)) != item.entry:
            continue
        if item.reporter not in slot.rx:
            continue
        keep.add(entries[item.entry])
    return frozenset(keep)


# ---------------------------------------------------------------------------
# Lifecycle
# ---------------------------------------------------------------------------


def _effective_constants(world: World) -> ParamConstants:
    if world.config.constants == ParamConstants():
        return fitted_constants(world.n, world.config.clock_params)
    return world.config.constants


def _adversary_view(world: World):
    from .adversary import AdversaryView

    return AdversaryView(
        n=world.n,
        bad=world.bad,
        clocks=dict(world.config.clocks),
        clock_params=world.config.clock_params,
        rate_model=world.config.rate_model,
        jam_effects=dict(world.config.jam_effects),
        sign_as=world.registry.restricted(world.bad),
    )


def run_lifecycle(world: World) -> dict:
    """Execute discovery plus n_iter schedule/transfer/verify rounds.

    Parameters are fixed up front: the distinct claimed-vector count is
    bounded by the catalog size (at most one claimed vector per catalog CTV
    can survive certificate agreement), so selection never waits on the
    discovery outcome. The realized end-to-end occupancy is asserted
    against the lifetime after the fact.
    """
    cfg = world.config
    n = world.n
    constants = _effective_constants(world)
    k_r_planned = cfg.k_r if cfg.k_r is not None else len(cfg.rate_model.table)
    params = cfg.params or select_parameters(
        n, cfg.clock_params.a_max, cfg.clock_params.U_0, k_r_planned, cfg.eps,
        constants,
    )
    world.params = params

    cp = replace(
        cfg.clock_params,
        eps_a=params.eps_a,
        eps_b=max(cfg.clock_params.eps_b, Fraction(STAMP_SLACK)),
    )
    w = discovery_packet_width(cp.quantum, constants)
    sync = cp.a_max == 1 and cp.U_0 == 0
    omc = build_omc(n, cp.a_max, cp.quantum, w, synchronized=sync)

    world.strategy.begin(_adversary_view(world))

    plan_a = stage_plan(
        0,
        6 + n,
        cp,
        _plan_a_horizons(n, cp, omc.t_mac, pad=False),
        list(DISCOVERY_TAGS) + [f"EIGN{k}" for k in range(n)],
    )
    disc = neighbor_discovery(world, plan_a, omc)
    net = network_discovery(world, disc, plan_a, omc, cp)

    # every stage boundary is a local reading, so the discovery end on the
    # root axis is bounded by the worst reading of the final boundary
    v0 = _tick_up(cp.a_max * net.plan_b.boundaries[-1] + cp.a_max * cp.U_0, cp.quantum)
    world.trace.record(
        v0, "lifecycle", "PHASE", outcome="discovered",
        data={"root": net.root, "component": sorted(net.component)},
    )

    verify_len = n**3 * (n - 1) * (w + 2 * params.dead_time)
    frame_len = params.data_time + 2 * n * n * (n - 1) * params.dead_time
    if v0 + params.n_iter * (frame_len + verify_len) > params.t_life:
        raise NoFeasibleParams("phase budget exceeds the lifetime")

    utility: UtilitySpec = cfg.utility.restricted_to(net.component)
    feasible = net.feasible
    delivered: dict[tuple[NodeId, NodeId], Fraction] = {}
    clock_r = v0
    plan = None
    walks: list[_Walk] = []
    carry: dict = {}
    iterations = []
    prune_log = []

    for it in range(1, params.n_iter + 1):
        if plan is None:
            component = good_component(_claims_graph(feasible, n), world.good)
            plan = max_utility_lp(feasible, utility, component)
            carry = {}
            walks = _plan_walks(plan)
        schedule = discretize(plan.x, plan.alpha, plan.flows, params, carry)
        entries = feasible.ordered()
        entry_ids = {(str(c), v): i for i, (c, v) in enumerate(entries)}

        got, misses = _run_frame(world, net, schedule, walks, it, clock_r)
        for pair, bits in got.items():
            delivered[pair] = delivered.get(pair, Fraction(0)) + bits
        clock_r += schedule.duration

        decided = _verification(world, net, schedule, misses, entry_ids, it)
        failed = _valid_failures(decided, schedule, entries, entry_ids, it)
        clock_r += verify_len

        iterations.append(
            {
                "iteration": it,
                "entries": len(feasible.entries),
                "misses": len(set(misses)),
                "pruned": len(failed),
            }
        )
        if failed:
            prune_log.append(sorted(str(c) for c, _ in failed))
            feasible = prune(feasible, failed)
            plan = None  # residual in-flight volume is abandoned with it
        world.trace.record(
            clock_r, "iteration", "VRFY", outcome="checked",
            data={"iteration": it, "pruned": len(failed)},
        )

    assert clock_r <= params.t_life, "lifetime overrun"

    x = {pair: bits / params.t_life for pair, bits in delivered.items()}
    metrics = {
        "impl": _kernels.IMPL,
        "n": n,
        "root": net.root,
        "component": sorted(net.component),
        "params": {
            "n_iter": params.n_iter,
            "eps_a": jsonable(params.eps_a),
            "t_life": jsonable(params.t_life),
            "dead_time": jsonable(params.dead_time),
            "data_time": jsonable(params.data_time),
            "k_r": params.k_r,
        },
        "k_r": {
            "planned": k_r_planned,
            "realized": net.feasible.distinct_rate_vectors(),
        },
        "discovery": {
            "flagged_cycles": [list(c) for c in net.flagged],
            "removed_links": [list(e) for e in sorted(net.removed)],
            "certificates": len(net.certs),
            "end": jsonable(v0),
            "overhead_fraction": jsonable(v0 / params.t_life),
        },
        "iterations": iterations,
        "pruned_entries": prune_log,
        "final_entries": len(feasible.entries),
        "delivered_bits": {
            f"{i}->{j}": jsonable(b) for (i, j), b in sorted(delivered.items())
        },
        "rates": {f"{i}->{j}": jsonable(r) for (i, j), r in sorted(x.items())},
        "utility": jsonable(evaluate_utility(utility, x)),
        "total_end": jsonable(clock_r),
        "view_digest": net.digest,
    }
    return metrics
