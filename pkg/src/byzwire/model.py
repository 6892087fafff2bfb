"""Network model: nodes, clocks, transmission modes, rate tables, utilities.

Contents:
  * ClockParams / AffineClock -- per-node affine clocks with quantized reads
    and the global skew/stagger bounds.
  * Mode / Ctv -- one transmission-mode choice per node; a Ctv is the joint
    choice of all n nodes.
  * LinkRateVector / RateModel -- the n(n-1) link rates realized by each Ctv;
    the full table is engine-private ground truth.
  * EnabledSet, enabled_graph, good_component -- which links can function and
    which component the good nodes live in.
  * UtilitySpec / evaluate_utility -- weighted-sum and min-fairness utilities
    over a node scope.

All numeric model quantities are exact rationals (fractions.Fraction); nothing
in this module touches floats, so downstream tolerance accounting stays exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import AssumptionCViolated

NodeId = int  # 1-based ids; the full roster 1..n is globally known

RatLike = Union[int, str, Fraction, float]


def frac(x: RatLike, den: Optional[int] = None) -> Fraction:
    """Coerce a config-level number into an exact Fraction.

    Strings accept "2/3" and decimal literals; floats convert exactly (so
    dyadic values like 0.25 are safe, and anything else is at least
    deterministic). The two-argument form mirrors Fraction(num, den).
    """
    if den is not None:
        if not isinstance(x, int) or isinstance(x, bool):
            raise TypeError("two-argument form needs integer numerator")
        return Fraction(x, den)
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("bool is not a rational quantity")
    if isinstance(x, (int, str)):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x)
    raise TypeError(f"cannot interpret {x!r} as a rational")


def roster(n: int) -> tuple[NodeId, ...]:
    return tuple(range(1, n + 1))


def ordered_pairs(n: int) -> tuple[tuple[NodeId, NodeId], ...]:
    """All n(n-1) ordered node pairs, lexicographic."""
    return tuple((i, j) for i in roster(n) for j in roster(n) if i != j)


# ---------------------------------------------------------------------------
# Clocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClockParams:
    """Global clock-model bounds shared by every node.

    a_max   -- skew bound: every relative skew a_ij lies in (0, a_max]
    U_0     -- max turn-on stagger in reference-time units
    quantum -- granularity of local clock reads
    K       -- per-hop forwarding-delay bound in clock counts
    eps_a   -- tolerated relative-skew error (cycle products, reference clock)
    eps_b   -- tolerated offset error in clock counts (affine-consistency)
    """

    a_max: Fraction
    U_0: Fraction
    quantum: Fraction
    K: int = 1
    eps_a: Fraction = Fraction(1, 20)
    eps_b: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "a_max", frac(self.a_max))
        object.__setattr__(self, "U_0", frac(self.U_0))
        object.__setattr__(self, "quantum", frac(self.quantum))
        object.__setattr__(self, "eps_a", frac(self.eps_a))
        object.__setattr__(self, "eps_b", frac(self.eps_b))
        if self.a_max < 1:
            raise ValueError("a_max must be >= 1")
        if self.U_0 < 0:
            raise ValueError("U_0 must be >= 0")
        if self.quantum <= 0:
            raise ValueError("quantum must be > 0")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not (0 < self.eps_a < 1):
            raise ValueError("eps_a must lie in (0, 1)")
        if self.eps_b < 0:
            raise ValueError("eps_b must be >= 0")


@dataclass(frozen=True)
class AffineClock:
    """A node's local clock tau(t) = a*t + b over reference time t.

    Raw readings exist only inside the engine; node logic sees reads
    quantized down to a multiple of `quantum`.
    """

    a: Fraction
    b: Fraction

    def __post_init__(self):
        object.__setattr__(self, "a", frac(self.a))
        object.__setattr__(self, "b", frac(self.b))
        if self.a <= 0:
            raise ValueError("clock skew must be positive")

    def raw(self, t: Fraction) -> Fraction:
        return self.a * t + self.b

    def read(self, t: Fraction, quantum: Fraction) -> Fraction:
        """Quantized local reading: floor to a multiple of quantum."""
        tau = self.raw(t)
        return (tau // quantum) * quantum

    def counts(self, t: Fraction, quantum: Fraction) -> int:
        """Quantized local reading expressed in whole clock counts."""
        return int(self.raw(t) // quantum)

    def time_at(self, tau: Fraction) -> Fraction:
        """Reference time at which the raw reading equals tau."""
        return (frac(tau) - self.b) / self.a


def relative_skew(ci: AffineClock, cj: AffineClock) -> Fraction:
    """a_ij = a_i / a_j: node i's rate seen from node j."""
    return ci.a / cj.a


def relative_offset(ci: AffineClock, cj: AffineClock) -> Fraction:
    """b_ij with tau_i(t) = a_ij * tau_j(t) + b_ij."""
    return ci.b - (ci.a / cj.a) * cj.b


def check_clock_population(clocks: Mapping[NodeId, AffineClock], params: ClockParams) -> None:
    """Validate that every pairwise skew/offset honors the global bounds."""
    items = sorted(clocks.items())
    for i, ci in items:
        for j, cj in items:
            if i == j:
                continue
            a_ij = relative_skew(ci, cj)
            if not (0 < a_ij <= params.a_max):
                raise ValueError(f"relative skew a_{i}{j}={a_ij} outside (0, a_max]")
            b_ij = relative_offset(ci, cj)
            if abs(b_ij) > params.a_max * params.U_0:
                raise ValueError(f"relative offset b_{i}{j}={b_ij} exceeds a_max*U_0")


# ---------------------------------------------------------------------------
# Modes and CTVs
# ---------------------------------------------------------------------------


class ModeKind(str, Enum):
    SILENT = "silent"
    LISTEN = "listen"
    JAM = "jam"
    TX = "tx"


@dataclass(frozen=True, order=True)
class Mode:
    """One node's choice for a transmission interval."""

    kind: ModeKind
    target: Optional[NodeId] = None
    rate: Optional[Fraction] = None

    def __post_init__(self):
        if self.kind is ModeKind.TX:
            if self.target is None or self.rate is None:
                raise ValueError("tx mode needs a target and a rate")
            object.__setattr__(self, "rate", frac(self.rate))
        elif self.target is not None or self.rate is not None:
            raise ValueError(f"{self.kind.value} mode takes no target/rate")

    def __str__(self) -> str:
        if self.kind is ModeKind.TX:
            return f"tx->{self.target}@{self.rate}"
        return self.kind.value

    @staticmethod
    def parse(text: str) -> "Mode":
        text = text.strip()
        if text.startswith("tx->"):
            dest, _, rate = text[4:].partition("@")
            if not rate:
                raise ValueError(f"malformed tx mode {text!r}")
            return Mode(ModeKind.TX, int(dest), frac(rate))
        return Mode(ModeKind(text))


SILENT = Mode(ModeKind.SILENT)
LISTEN = Mode(ModeKind.LISTEN)
JAM = Mode(ModeKind.JAM)


def tx(target: NodeId, rate: RatLike) -> Mode:
    return Mode(ModeKind.TX, target, frac(rate))


def mode_set(n: int, lam: Iterable[Fraction], me: NodeId) -> frozenset[Mode]:
    """The default mode set M_i: silent, jam, listen, and tx-to-j-at-rho."""
    rates = sorted(frac(r) for r in lam)
    modes = {SILENT, JAM, LISTEN}
    for j in roster(n):
        if j != me:
            modes.update(tx(j, r) for r in rates)
    return frozenset(modes)


@dataclass(frozen=True)
class Ctv:
    """Concurrent transmission vector: one mode per node, indexed by id."""

    modes: tuple[Mode, ...]

    @property
    def n(self) -> int:
        return len(self.modes)

    def mode_of(self, node: NodeId) -> Mode:
        return self.modes[node - 1]

    def replacing(self, node: NodeId, mode: Mode) -> "Ctv":
        parts = list(self.modes)
        parts[node - 1] = mode
        return Ctv(tuple(parts))

    def transmitters(self) -> tuple[NodeId, ...]:
        return tuple(i for i in roster(self.n) if self.modes[i - 1].kind is ModeKind.TX)

    def listeners(self) -> tuple[NodeId, ...]:
        return tuple(i for i in roster(self.n) if self.modes[i - 1].kind is ModeKind.LISTEN)

    def __str__(self) -> str:
        return ";".join(str(m) for m in self.modes)

    @staticmethod
    def parse(text: str) -> "Ctv":
        return Ctv(tuple(Mode.parse(part) for part in text.split(";")))

    @staticmethod
    def all_silent(n: int) -> "Ctv":
        return Ctv((SILENT,) * n)

    @staticmethod
    def single_tx(n: int, sender: NodeId, dest: NodeId, rate: RatLike) -> "Ctv":
        """The clean point-to-point CTV: sender tx, dest listen, rest silent."""
        modes = [SILENT] * n
        modes[sender - 1] = tx(dest, rate)
        modes[dest - 1] = LISTEN
        return Ctv(tuple(modes))


def check_half_duplex(ctv: Ctv, good: Iterable[NodeId]) -> bool:
    """Good nodes never transmit and receive at once; mode vectors encode a
    single mode per node, so the check is that no good node jams (jamming is
    an attack, and CO6's jam-while-cooperating is reserved for bad nodes)."""
    return all(ctv.mode_of(g).kind is not ModeKind.JAM for g in good)


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkRateVector:
    """Nonnegative per-ordered-pair rates; zero entries are not stored."""

    entries: tuple[tuple[tuple[NodeId, NodeId], Fraction], ...]

    @staticmethod
    def from_dict(rates: Mapping[tuple[NodeId, NodeId], RatLike]) -> "LinkRateVector":
        items = []
        for (i, j), r in rates.items():
            r = frac(r)
            if r < 0:
                raise ValueError("link rates must be nonnegative")
            if r:
                items.append(((i, j), r))
        items.sort()
        return LinkRateVector(tuple(items))

    @staticmethod
    def zero() -> "LinkRateVector":
        return LinkRateVector(())

    def rate(self, i: NodeId, j: NodeId) -> Fraction:
        for pair, r in self.entries:
            if pair == (i, j):
                return r
        return Fraction(0)

    def as_dict(self) -> dict[tuple[NodeId, NodeId], Fraction]:
        return dict(self.entries)

    def positive_links(self) -> tuple[tuple[NodeId, NodeId], ...]:
        return tuple(pair for pair, _ in self.entries)

    def dominates(self, other: "LinkRateVector") -> bool:
        mine = self.as_dict()
        return all(mine.get(pair, Fraction(0)) >= r for pair, r in other.entries)


@dataclass(frozen=True)
class RateModel:
    """Engine-private ground truth: the rate vector realized by every CTV.

    Good-node logic may read only `lam` and `mode_bound` (CO8); the table
    itself is consulted exclusively by the engine's channel resolution and by
    the min-max oracle.
    """

    n: int
    table: Mapping[Ctv, LinkRateVector]
    lam: frozenset[Fraction]
    mode_bound: int

    def rate_vector(self, ctv: Ctv) -> LinkRateVector:
        return self.table.get(ctv, LinkRateVector.zero())

    def ctvs(self) -> tuple[Ctv, ...]:
        return tuple(sorted(self.table.keys(), key=str))


def check_downward_closure(model: RateModel, limit: int = 4096) -> bool:
    """CO5 on small tables: every componentwise reduction of an achieved rate
    vector (entries kept inside lambda, or dropped) is achieved by some CTV.

    Reductions are enumerated link-by-link, capped at `limit` candidates.
    """
    lam = sorted(model.lam)
    achieved = set(model.table.values())
    budget = limit
    for vec in list(achieved):
        candidates: list[dict] = [{}]
        for pair, r in vec.entries:
            lower = [x for x in lam if x <= r] + [Fraction(0)]
            candidates = [{**c, pair: v} for c in candidates for v in lower]
            budget -= len(candidates)
            if budget < 0:
                return True  # table too large to certify; treat as vacuous
        for cand in candidates:
            reduced = LinkRateVector.from_dict(cand)
            if reduced not in achieved:
                return False
    return True


# ---------------------------------------------------------------------------
# Enabled sets, graphs, components
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnabledSet:
    """The CTVs the adversary currently lets function at table rates."""

    ctvs: frozenset[Ctv]

    def __post_init__(self):
        if not self.ctvs:
            raise ValueError("enabled set must be nonempty")

    def without(self, disabled: Iterable[Ctv]) -> "EnabledSet":
        return EnabledSet(self.ctvs - frozenset(disabled))


@dataclass(frozen=True)
class Digraph:
    nodes: tuple[NodeId, ...]
    edges: frozenset[tuple[NodeId, NodeId]]

    def successors(self, i: NodeId) -> tuple[NodeId, ...]:
        return tuple(sorted(j for (a, j) in self.edges if a == i))

    def bidirectional_edges(self) -> frozenset[tuple[NodeId, NodeId]]:
        return frozenset((i, j) for (i, j) in self.edges if (j, i) in self.edges)


def enabled_graph(rate_model: RateModel, enabled: EnabledSet) -> Digraph:
    """Edge i->j iff some enabled CTV gives r_ij > 0."""
    edges = set()
    for ctv in enabled.ctvs:
        edges.update(rate_model.rate_vector(ctv).positive_links())
    return Digraph(roster(rate_model.n), frozenset(edges))


def bidirectional_components(graph: Digraph) -> list[frozenset[NodeId]]:
    """Connected components of the bidirectional subgraph, deterministic order."""
    bi = graph.bidirectional_edges()
    adjacency: dict[NodeId, set[NodeId]] = {v: set() for v in graph.nodes}
    for i, j in bi:
        adjacency[i].add(j)
        adjacency[j].add(i)
    seen: set[NodeId] = set()
    components = []
    for start in sorted(graph.nodes):
        if start in seen:
            continue
        stack = [start]
        comp = set()
        while stack:
            v = stack.pop()
            if v in comp:
                continue
            comp.add(v)
            stack.extend(sorted(adjacency[v] - comp, reverse=True))
        seen |= comp
        components.append(frozenset(comp))
    return components


def good_component(graph: Digraph, good: Iterable[NodeId]) -> frozenset[NodeId]:
    """The bidirectional component containing all good nodes.

    Raises AssumptionCViolated when the good nodes straddle components: the
    protocol's common-view guarantees are meaningless in that regime.
    """
    good = set(good)
    if not good:
        raise ValueError("good set must be nonempty")
    components = bidirectional_components(graph)
    containing = [c for c in components if c & good]
    if len(containing) != 1:
        raise AssumptionCViolated(
            f"good nodes {sorted(good)} span {len(containing)} bidirectional components"
        )
    return containing[0]


# ---------------------------------------------------------------------------
# Utilities
# ---------------------------------------------------------------------------


class UtilityFamily(str, Enum):
    WEIGHTED_SUM = "weighted-sum"
    MIN_FAIRNESS = "min-fairness"


@dataclass(frozen=True)
class UtilitySpec:
    """U(x, S): either a weighted sum or a min over designated pairs.

    Only pairs with positive weight and both endpoints inside `scope`
    contribute. Monotone nondecreasing in every component by construction.
    """

    family: UtilityFamily
    weights: Mapping[tuple[NodeId, NodeId], Fraction]
    scope: frozenset[NodeId]

    @staticmethod
    def weighted_sum(weights: Mapping[tuple[NodeId, NodeId], RatLike], scope: Iterable[NodeId]) -> "UtilitySpec":
        w = {pair: frac(v) for pair, v in weights.items()}
        if any(v < 0 for v in w.values()):
            raise ValueError("utility weights must be nonnegative")
        return UtilitySpec(UtilityFamily.WEIGHTED_SUM, w, frozenset(scope))

    @staticmethod
    def min_fairness(pairs: Iterable[tuple[NodeId, NodeId]], scope: Iterable[NodeId]) -> "UtilitySpec":
        w = {pair: Fraction(1) for pair in pairs}
        return UtilitySpec(UtilityFamily.MIN_FAIRNESS, w, frozenset(scope))

    def restricted_to(self, nodes: Iterable[NodeId]) -> "UtilitySpec":
        return UtilitySpec(self.family, dict(self.weights), self.scope & frozenset(nodes))

    def designated_pairs(self) -> tuple[tuple[NodeId, NodeId], ...]:
        return tuple(
            sorted(
                pair
                for pair, w in self.weights.items()
                if w > 0 and pair[0] in self.scope and pair[1] in self.scope
            )
        )


def evaluate_utility(spec: UtilitySpec, x: Mapping[tuple[NodeId, NodeId], RatLike]) -> Fraction:
    """Evaluate U(x, scope); pairs outside the scope never contribute."""
    pairs = spec.designated_pairs()
    if spec.family is UtilityFamily.WEIGHTED_SUM:
        return sum(
            (spec.weights[p] * frac(x.get(p, 0)) for p in pairs),
            start=Fraction(0),
        )
    if not pairs:
        return Fraction(0)
    return min(frac(x.get(p, 0)) for p in pairs)


# ---------------------------------------------------------------------------
# Geometry-backed table generation
# ---------------------------------------------------------------------------


def sinr_rate_table(
    coords: Mapping[NodeId, tuple[float, float]],
    lam: Iterable[RatLike],
    thresholds: Mapping[Fraction, RatLike],
    ctvs: Iterable[Ctv],
    noise: RatLike = 1,
    alpha: int = 2,
) -> dict[Ctv, LinkRateVector]:
    """Bake node geometry into a static rate table for the listed CTVs.

    A link i->j under CTV c decodes at the transmit rate rho iff the SINR at
    j (unit transmit power, path loss distance^-alpha, interference from all
    other transmitters and jammers) clears thresholds[rho]. The protocol
    never sees this function; only the resulting table.
    """
    lam = sorted(frac(r) for r in lam)
    thr = {frac(k): frac(v) for k, v in thresholds.items()}

    def gain(i: NodeId, j: NodeId) -> Fraction:
        (xi, yi), (xj, yj) = coords[i], coords[j]
        d2 = Fraction(xi - xj) ** 2 + Fraction(yi - yj) ** 2
        if d2 == 0:
            raise ValueError("coincident nodes")
        return Fraction(1) / d2 ** (alpha // 2) if alpha % 2 == 0 else Fraction(
            1, math.isqrt(int(d2**alpha))
        )

    table: dict[Ctv, LinkRateVector] = {}
    for ctv in ctvs:
        active = [
            (i, ctv.mode_of(i).target, ctv.mode_of(i).rate)
            for i in roster(ctv.n)
            if ctv.mode_of(i).kind is ModeKind.TX
        ]
        emitters = [i for i in roster(ctv.n) if ctv.mode_of(i).kind in (ModeKind.TX, ModeKind.JAM)]
        rates: dict[tuple[NodeId, NodeId], Fraction] = {}
        for i, j, rho in active:
            if ctv.mode_of(j).kind is not ModeKind.LISTEN:
                continue
            interference = sum(
                (gain(k, j) for k in emitters if k != i), start=Fraction(0)
            )
            sinr = gain(i, j) / (frac(noise) + interference)
            if rho in thr and sinr >= thr[rho]:
                rates[(i, j)] = rho
        table[ctv] = LinkRateVector.from_dict(rates)
    return table
