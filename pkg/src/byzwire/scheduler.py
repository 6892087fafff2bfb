"""Throughput optimization and slot-level schedule synthesis.

Every good node runs this independently on the agreed feasible set and must
produce the same schedule byte for byte, so everything here is exact
rationals with fixed tie-breaks: entries sort by their CTV's string form,
the LP pivots by lowest index, rounding is largest-remainder, and packet
placement scans slots in order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

from .errors import NoFeasibleParams, TooLarge
from .lp import OPTIMAL, solve_lp
from .model import (
    Ctv,
    EnabledSet,
    LinkRateVector,
    NodeId,
    RateModel,
    RatLike,
    UtilityFamily,
    UtilitySpec,
    enabled_graph,
    evaluate_utility,
    frac,
    good_component,
)

Entry = tuple[Ctv, LinkRateVector]
Pair = tuple[NodeId, NodeId]


def entry_key(entry: Entry):
    ctv, vec = entry
    return (str(ctv), vec.entries)


@dataclass(frozen=True)
class FeasibleSet:
    """The (CTV, claimed rate vector) pairs still trusted at iteration k."""

    k: int
    entries: frozenset[Entry]

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("iteration index starts at 1")

    @staticmethod
    def initial(entries: Iterable[Entry]) -> "FeasibleSet":
        return FeasibleSet(1, frozenset(entries))

    def ordered(self) -> tuple[Entry, ...]:
        return tuple(sorted(self.entries, key=entry_key))

    def rates_within(self, lam: Iterable[Fraction]) -> bool:
        """Whether every claimed rate is one of the protocol's rate levels."""
        levels = frozenset(frac(r) for r in lam)
        return all(
            r in levels for _, vec in self.entries for _, r in vec.entries
        )

    def distinct_rate_vectors(self) -> int:
        """k_r: distinct claimed rate vectors across the surviving entries."""
        return len({vec for _, vec in self.entries})


def prune(feasible: FeasibleSet, failed: Iterable[Entry]) -> FeasibleSet:
    """Remove failed entries forever; the sequence only shrinks."""
    failed = frozenset(failed)
    if not failed <= feasible.entries:
        raise ValueError("failed entries are not all in the feasible set")
    return FeasibleSet(feasible.k + 1, feasible.entries - failed)


# ---------------------------------------------------------------------------
# Utility-optimal time sharing
# ---------------------------------------------------------------------------


class LpPlan(NamedTuple):
    x: dict[Pair, Fraction]
    alpha: dict[Entry, Fraction]
    flows: dict[tuple[Pair, Pair], Fraction]


def max_utility_lp(
    feasible: FeasibleSet, utility: UtilitySpec, component: frozenset[NodeId]
) -> LpPlan:
    """Maximize U over throughputs achievable by time-sharing the entries.

    Edge-based multicommodity formulation: one commodity per designated
    pair inside the component, flow conservation at every component node,
    per-link capacity = the alpha-weighted claimed rates, total airtime
    at most 1. The zero vector is always feasible, so the solve cannot
    fail; x values are supported by explicit link flows, which is what the
    slot packing downstream consumes.
    """
    entries = feasible.ordered()
    if not entries:
        raise ValueError("feasible set is empty")
    pairs = utility.restricted_to(component).designated_pairs()
    edges = sorted(
        {
            link
            for _, vec in entries
            for link in vec.positive_links()
            if link[0] in component and link[1] in component
        }
    )
    if not pairs:
        return LpPlan({}, {e: Fraction(0) for e in entries}, {})

    fair = utility.family is UtilityFamily.MIN_FAIRNESS
    nx = len(pairs)
    n_alpha = len(entries)
    off_u = nx
    off_alpha = nx + (1 if fair else 0)
    off_flow = off_alpha + n_alpha
    nvars = off_flow + nx * len(edges)

    def fvar(pi: int, ei: int) -> int:
        return off_flow + pi * len(edges) + ei

    a_eq, b_eq = [], []
    for pi, (s, d) in enumerate(pairs):
        for v in sorted(component):
            row = [Fraction(0)] * nvars
            touched = False
            for ei, (a, b) in enumerate(edges):
                if a == v:
                    row[fvar(pi, ei)] = Fraction(1)
                    touched = True
                if b == v:
                    row[fvar(pi, ei)] = Fraction(-1)
                    touched = True
            if v == s:
                row[pi] = Fraction(-1)
                touched = True
            elif v == d:
                row[pi] = Fraction(1)
                touched = True
            if touched:
                a_eq.append(row)
                b_eq.append(Fraction(0))

    a_ub, b_ub = [], []
    for ei, edge in enumerate(edges):
        row = [Fraction(0)] * nvars
        for pi in range(nx):
            row[fvar(pi, ei)] = Fraction(1)
        for j, (_, vec) in enumerate(entries):
            r = vec.rate(*edge)
            if r:
                row[off_alpha + j] = -r
        a_ub.append(row)
        b_ub.append(Fraction(0))
    airtime = [Fraction(0)] * nvars
    for j in range(n_alpha):
        airtime[off_alpha + j] = Fraction(1)
    a_ub.append(airtime)
    b_ub.append(Fraction(1))
    if fair:
        for pi in range(nx):
            row = [Fraction(0)] * nvars
            row[off_u] = Fraction(1)
            row[pi] = Fraction(-1)
            a_ub.append(row)
            b_ub.append(Fraction(0))

    c = [Fraction(0)] * nvars
    if fair:
        c[off_u] = Fraction(1)
    else:
        for pi, p in enumerate(pairs):
            c[pi] = utility.weights[p]

    res = solve_lp(c, a_ub, b_ub, a_eq, b_eq, maximize=True)
    if res.status != OPTIMAL:
        raise RuntimeError(f"utility LP ended {res.status}; this cannot happen")
    x = {p: res.x[pi] for pi, p in enumerate(pairs)}
    alpha = {e: res.x[off_alpha + j] for j, e in enumerate(entries)}
    flows = {}
    for pi, p in enumerate(pairs):
        for ei, edge in enumerate(edges):
            v = res.x[fvar(pi, ei)]
            if v:
                flows[(p, edge)] = v
    return LpPlan(x, alpha, flows)


# ---------------------------------------------------------------------------
# Discretization into the n^2(n-1) slot frame
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PacketPlan:
    """One slot's worth of one commodity's traffic crossing one path leg."""

    pair: Pair
    path: tuple[NodeId, ...]
    leg: int
    bits: Fraction

    @property
    def link(self) -> Pair:
        return (self.path[self.leg], self.path[self.leg + 1])


@dataclass(frozen=True)
class Slot:
    ctv: Ctv
    rates: LinkRateVector
    manifest: tuple[PacketPlan, ...]

    @property
    def tx(self) -> tuple[NodeId, ...]:
        return self.ctv.transmitters()

    @property
    def rx(self) -> tuple[NodeId, ...]:
        return self.ctv.listeners()


@dataclass(frozen=True)
class Schedule:
    """One data frame: n^2(n-1) slots, each D + B_slot + D long.

    Boundaries follow t_{k+1} = t_k + B_slot + 2D; a slot's transmissions
    start one dead time after its boundary and stop one dead time before
    the next, which is the guard margin the parameter selection sizes
    against worst-case clock disagreement.
    """

    n: int
    slots: tuple[Slot, ...]
    b_slot: Fraction
    dead: Fraction

    def __post_init__(self) -> None:
        want = self.n * self.n * (self.n - 1)
        if len(self.slots) != want:
            raise ValueError(f"need {want} slots for n={self.n}, got {len(self.slots)}")

    @property
    def slot_len(self) -> Fraction:
        return self.b_slot + 2 * self.dead

    def boundary(self, k: int) -> Fraction:
        """Start of slot k (1-based); boundary(N+1) is the frame end."""
        if not 1 <= k <= len(self.slots) + 1:
            raise ValueError(f"slot {k} outside 1..{len(self.slots) + 1}")
        return (k - 1) * self.slot_len

    def tx_window(self, k: int) -> tuple[Fraction, Fraction]:
        start = self.boundary(k) + self.dead
        return (start, start + self.b_slot)

    @property
    def duration(self) -> Fraction:
        return len(self.slots) * self.slot_len


def _decompose(
    edge_flow: Mapping[Pair, Fraction], s: NodeId, d: NodeId
) -> list[tuple[tuple[NodeId, ...], Fraction]]:
    """Split one commodity's edge flow into simple source-sink paths.

    Greedy walk to the smallest-id successor; revisiting a node cancels the
    cycle just walked (possible in degenerate LP bases, and harmless since
    cycles carry no commodity value). Each extraction or cancellation zeroes
    at least one edge, so this terminates.
    """
    f = {e: v for e, v in edge_flow.items() if v > 0}
    paths = []
    while True:
        if not any(a == s and v > 0 for (a, _), v in f.items()):
            return paths
        path = [s]
        seen = {s: 0}
        while path[-1] != d:
            v = path[-1]
            heads = [b for (a, b), val in f.items() if a == v and val > 0]
            if not heads:
                raise ValueError(f"flow not conserved at node {v}")
            step = min(heads)
            if step in seen:
                cyc = path[seen[step]:] + [step]
                drop = min(f[(cyc[i], cyc[i + 1])] for i in range(len(cyc) - 1))
                for i in range(len(cyc) - 1):
                    f[(cyc[i], cyc[i + 1])] -= drop
                    if not f[(cyc[i], cyc[i + 1])]:
                        del f[(cyc[i], cyc[i + 1])]
                path = path[: seen[step] + 1]
                seen = {u: i for i, u in enumerate(path)}
                if not any(
                    a == path[-1] and v > 0 for (a, _), v in f.items()
                ):
                    break  # the cancel consumed the walk; restart from s
                continue
            seen[step] = len(path)
            path.append(step)
        if path[-1] != d:
            continue
        grab = min(f[(path[i], path[i + 1])] for i in range(len(path) - 1))
        for i in range(len(path) - 1):
            f[(path[i], path[i + 1])] -= grab
            if not f[(path[i], path[i + 1])]:
                del f[(path[i], path[i + 1])]
        paths.append((tuple(path), grab))


def _slot_counts(
    entries: Sequence[Entry],
    alpha: Mapping[Entry, Fraction],
    total: int,
    carry: Optional[dict],
) -> dict:
    """Largest-remainder allocation of `total` slots, idle share included.

    `carry` (None key = idle) accumulates the fractional residue so that
    repeated frames converge to alpha exactly; without it an entry with
    alpha < 1/(2N) would never receive a slot.
    """
    share = {e: alpha.get(e, Fraction(0)) for e in entries}
    share[None] = max(Fraction(0), 1 - sum(share.values()))
    keys = list(entries) + [None]

    def rank(k):
        return (k is None, entry_key(k) if k is not None else ())

    quota = {}
    for k in keys:
        quota[k] = share[k] * total + (carry.get(k, Fraction(0)) if carry else 0)
    counts = {k: max(0, math.floor(quota[k])) for k in keys}
    spare = total - sum(counts.values())
    order = sorted(keys, key=lambda k: (-(quota[k] - counts[k]), rank(k)))
    i = 0
    while spare > 0:
        counts[order[i % len(order)]] += 1
        spare -= 1
        i += 1
    while spare < 0:  # only reachable through pathological carry drift
        k = next(k for k in reversed(order) if counts[k] > 0)
        counts[k] -= 1
        spare += 1
    if carry is not None:
        for k in keys:
            carry[k] = quota[k] - counts[k]
    return counts


def discretize(
    x: Mapping[Pair, Fraction],
    alpha: Mapping[Entry, Fraction],
    flows: Mapping[tuple[Pair, Pair], Fraction],
    params: "ProtocolParams",
    carry: Optional[dict] = None,
) -> Schedule:
    """Turn the LP plan into one concrete frame.

    Slots are dealt in interleaved rounds (every entry with remaining count
    appears once per round) so a multihop path can complete in order inside
    a single frame. Unclaimed airtime becomes all-silent filler slots.
    Packet placement is store-and-forward: each decomposition path keeps a
    per-hop backlog and each slot forwards at most what was waiting at the
    hop before the slot began, splitting volume across slots when a single
    slot's link capacity is not enough. The only loss is pipeline fill,
    about one slot's volume per extra hop per frame.
    """
    entries = tuple(sorted(alpha, key=entry_key))
    if not entries:
        raise ValueError("no entries to schedule")
    n = entries[0][0].n
    total = n * n * (n - 1)
    counts = _slot_counts(entries, alpha, total, carry)

    sequence: list[Optional[Entry]] = []
    live = dict(counts)
    while len(sequence) < total:
        for k in list(entries) + [None]:
            if live.get(k, 0) > 0:
                sequence.append(k)
                live[k] -= 1

    b_slot = params.data_time / total
    residual: list[dict[Pair, Fraction]] = []
    for e in sequence:
        caps = {} if e is None else {
            link: e[1].rate(*link) * b_slot for link in e[1].positive_links()
        }
        residual.append(caps)

    # store-and-forward walk: each path holds per-hop backlogs, and in every
    # slot each hop forwards what was already waiting before the slot (the
    # snapshot stops data from crossing two hops in one slot, which the
    # half-duplex mode vectors could not carry anyway)
    walks = []
    for pair in sorted(x):
        flow = {
            edge: v for (p, edge), v in flows.items() if p == pair and v > 0
        }
        for path, rate in _decompose(flow, *pair):
            backlog = [Fraction(0)] * len(path)
            backlog[0] = rate * params.data_time
            walks.append((pair, path, backlog))

    manifests: list[list[PacketPlan]] = [[] for _ in range(total)]
    for si in range(total):
        caps = residual[si]
        if not caps:
            continue
        for pair, path, backlog in walks:
            before = list(backlog)
            for leg in range(len(path) - 1):
                edge = (path[leg], path[leg + 1])
                take = min(caps.get(edge, Fraction(0)), before[leg])
                if take > 0:
                    caps[edge] -= take
                    backlog[leg] -= take
                    backlog[leg + 1] += take
                    manifests[si].append(PacketPlan(pair, path, leg, take))

    slots = []
    for si, e in enumerate(sequence):
        if e is None:
            slots.append(Slot(Ctv.all_silent(n), LinkRateVector.zero(), ()))
        else:
            slots.append(Slot(e[0], e[1], tuple(manifests[si])))
    return Schedule(n, tuple(slots), b_slot, frac(params.dead_time))


# ---------------------------------------------------------------------------
# Lifetime parameter selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamConstants:
    """Per-construction stage-cost coefficients.

    c1 scales discovery with the timestamp width (bits of T_life), c2 is
    the timing-exchange duration per unit of skew accuracy, c3 and c4 are
    the per-iteration dead-time multipliers of the scheduling and
    verification phases. Measured from this implementation's stage plans,
    not tunable per run.
    """

    c1: Fraction = Fraction(1)
    c2: Fraction = Fraction(1)
    c3: Fraction = Fraction(1)
    c4: Fraction = Fraction(1)
    max_lifetime_exponent: int = 96


@dataclass(frozen=True)
class ProtocolParams:
    n_iter: int
    dead_time: Fraction
    data_time: Fraction
    eps_a: Fraction
    t_life: Fraction
    eps_l: Fraction
    eps_d: Fraction
    k_r: int


def _loss_split(eps: Fraction) -> Fraction:
    """Largest dyadic q with (1-q)^2 >= 1-eps, at the coarsest grid that
    keeps q positive. Flooring only widens the margin, so the product
    constraint stays satisfied."""
    p, r = (1 - eps).numerator, (1 - eps).denominator
    for m in range(3, 129):
        a = p * (1 << (2 * m))
        s = math.isqrt(a // r)
        while s * s * r < a:
            s += 1
        t = (1 << m) - s
        if t >= 1:
            return Fraction(t, 1 << m)
    raise NoFeasibleParams(f"no positive loss split below eps={eps}")


def select_parameters(
    n: int,
    a_max: RatLike,
    u_0: RatLike,
    k_r: int,
    eps: RatLike,
    constants: ParamConstants = ParamConstants(),
) -> ProtocolParams:
    """Pick lifetime-scale parameters satisfying the budget inequalities.

    Cascade: split the allowed utility loss evenly between slot loss and
    dead time; the iteration count then follows from the loss share left
    for pruned iterations. For the lifetime, double T until the per-
    iteration overhead fits: skew accuracy is tied to 1/sqrt(T) so the
    dead time (which grows with eps_a * T) and the estimation time (which
    grows with 1/eps_a) both stay O(sqrt(T)). Once a lifetime fits, the
    data share is inflated to fill it exactly: the utility guarantee is
    measured over the whole lifetime, so an idle tail after the last
    iteration would be a dead loss, while a larger B only improves the
    data fraction.
    """
    eps = frac(eps)
    if not 0 < eps < 1:
        raise ValueError("eps must be strictly between 0 and 1")
    a_max, u_0 = frac(a_max), frac(u_0)
    eps_l = eps_d = _loss_split(eps)
    k_spread = (1 << n) * k_r
    n_iter = max(1, math.ceil(k_spread * (1 - eps_l) / eps_l))

    for exp in range(4, constants.max_lifetime_exponent + 1):
        t_life = 1 << exp
        eps_a = Fraction(1, 1 << math.isqrt(t_life).bit_length())
        dead = 2 * a_max**2 * eps_a * t_life + a_max**2 * u_0
        fixed = (
            constants.c1 * t_life.bit_length()
            + constants.c2 / eps_a
            + (constants.c3 + constants.c4) * dead
        )
        data = fixed * (1 - eps_d) / eps_d
        if n_iter * (fixed + data) <= t_life:
            return ProtocolParams(
                n_iter=n_iter,
                dead_time=dead,
                data_time=Fraction(t_life, n_iter) - fixed,
                eps_a=eps_a,
                t_life=Fraction(t_life),
                eps_l=eps_l,
                eps_d=eps_d,
                k_r=k_r,
            )
    raise NoFeasibleParams(
        f"lifetime search exhausted at 2^{constants.max_lifetime_exponent}"
    )


def check_parameters(
    params: ProtocolParams,
    n: int,
    a_max: RatLike,
    u_0: RatLike,
    constants: ParamConstants = ParamConstants(),
) -> bool:
    """Re-evaluate the four selection inequalities exactly."""
    a_max, u_0 = frac(a_max), frac(u_0)
    t_int = int(params.t_life)
    fixed = (
        constants.c1 * t_int.bit_length()
        + constants.c2 / params.eps_a
        + (constants.c3 + constants.c4) * params.dead_time
    )
    share = Fraction(params.n_iter, params.n_iter + (1 << n) * params.k_r)
    return (
        share >= 1 - params.eps_l
        and params.data_time / (fixed + params.data_time) >= 1 - params.eps_d
        and params.n_iter * (fixed + params.data_time) <= params.t_life
        and 2 * a_max**2 * params.eps_a * params.t_life + a_max**2 * u_0
        <= params.dead_time
    )


# ---------------------------------------------------------------------------
# Min-max oracle
# ---------------------------------------------------------------------------


def minmax_oracle(
    rate_model: RateModel,
    delta_family: Iterable[Iterable[Ctv]],
    utility: UtilitySpec,
    good: Optional[Iterable[NodeId]] = None,
    budget: int = 4096,
) -> Fraction:
    """Worst disable-set utility, by brute force over the family.

    For each disable set the good nodes' surviving component is recomputed,
    the LP runs over the true rates of the remaining CTVs, and the minimum
    over the family is returned. `good` defaults to the utility's scope,
    which is only right when every scoped node is well behaved. A disable
    set that splits the good nodes across components violates the standing
    connectivity assumption and raises; callers build families inside it.
    """
    good = frozenset(good) if good is not None else utility.scope
    deltas = [frozenset(d) for d in delta_family]
    if not deltas:
        raise ValueError("delta family must at least contain the empty set")
    if len(deltas) > budget:
        raise TooLarge(f"{len(deltas)} disable sets exceed the budget {budget}")
    every = frozenset(rate_model.table)
    worst = None
    for d in sorted(deltas, key=lambda s: (len(s), sorted(map(str, s)))):
        enabled = EnabledSet(every - d)
        comp = good_component(enabled_graph(rate_model, enabled), good)
        feas = FeasibleSet.initial(
            (ctv, rate_model.rate_vector(ctv)) for ctv in enabled.ctvs
        )
        plan = max_utility_lp(feas, utility, comp)
        val = evaluate_utility(utility.restricted_to(comp), plan.x)
        if worst is None or val < worst:
            worst = val
    return worst
