"""Deterministic simulation substrate.

Everything here is exact: reference time is a Fraction, node-visible clock
readings are quantized on access, and every run is a pure function of
(config, seed). Traces are line-delimited JSON with a schema version;
re-running the same configuration must reproduce them byte for byte, which
is itself a tested property.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
from dataclasses import dataclass, field, fields, is_dataclass
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Optional

from .adversary import Strategy
from .errors import ConfigInvalid
from .model import (
    AffineClock,
    ClockParams,
    Ctv,
    LinkRateVector,
    Mode,
    ModeKind,
    NodeId,
    RateModel,
    UtilitySpec,
    roster,
)
from .scheduler import ParamConstants, ProtocolParams

TRACE_SCHEMA = 1


# ---------------------------------------------------------------------------
# Canonical serialization and digests
# ---------------------------------------------------------------------------


def canon(x: Any) -> Any:
    """Injective JSON-able image of the value kinds the protocol signs."""
    if isinstance(x, enum.Enum):  # before str: enums may subclass it
        return ["E", type(x).__name__, x.name]
    if x is None or isinstance(x, (str, bool, int)):
        return x
    if isinstance(x, Fraction):
        return ["F", x.numerator, x.denominator]
    if isinstance(x, (tuple, list)):
        return ["L", [canon(v) for v in x]]
    if isinstance(x, (set, frozenset)):
        parts = sorted(json.dumps(canon(v), sort_keys=True) for v in x)
        return ["S", parts]
    if isinstance(x, dict):
        items = [[canon(k), canon(v)] for k, v in x.items()]
        items.sort(key=lambda kv: json.dumps(kv[0], sort_keys=True))
        return ["D", items]
    if is_dataclass(x):
        return ["T", type(x).__name__, [canon(getattr(x, f.name)) for f in fields(x)]]
    raise TypeError(f"cannot canonicalize {type(x).__name__}")


def digest(x: Any) -> str:
    blob = json.dumps(canon(x), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def jsonable(x: Any) -> Any:
    """Readable (not injective) rendering for trace payloads."""
    if isinstance(x, enum.Enum):
        return x.name
    if x is None or isinstance(x, (str, bool, int)):
        return x
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    if isinstance(x, (Ctv, Mode)):
        return str(x)
    if isinstance(x, (tuple, list)):
        return [jsonable(v) for v in x]
    if isinstance(x, (set, frozenset)):
        return sorted((jsonable(v) for v in x), key=str)
    if isinstance(x, dict):
        return {jsonable_key(k): jsonable(v) for k, v in x.items()}
    if is_dataclass(x):
        return {f.name: jsonable(getattr(x, f.name)) for f in fields(x)}
    raise TypeError(f"cannot render {type(x).__name__}")


def jsonable_key(k: Any) -> str:
    out = jsonable(k)
    return out if isinstance(out, str) else json.dumps(out, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------


class SignatureRegistry:
    """Ideal signatures: sign/verify via seeded per-node secrets.

    The secrets never leave this object; the adversary receives signer
    callables for bad nodes only, so a forged good-node signature cannot
    verify (the crypto-soundness assumption, enforced rather than assumed).
    """

    def __init__(self, seed: int) -> None:
        self._seed = seed

    def _secret(self, node: NodeId) -> bytes:
        return hashlib.sha256(f"key|{self._seed}|{node}".encode()).digest()

    def sign(self, node: NodeId, body: Any) -> str:
        return hashlib.sha256(self._secret(node) + digest(body).encode()).hexdigest()

    def verify(self, node: NodeId, body: Any, signature: str) -> bool:
        return signature == self.sign(node, body)

    def signer(self, node: NodeId) -> Callable[[Any], str]:
        return lambda body: self.sign(node, body)

    def restricted(self, allowed: Iterable[NodeId]) -> Callable[[NodeId], Callable[[Any], str]]:
        allowed = frozenset(allowed)

        def give(node: NodeId) -> Callable[[Any], str]:
            if node not in allowed:
                raise PermissionError(f"node {node} signing key is not available")
            return self.signer(node)

        return give


# ---------------------------------------------------------------------------
# Event queue
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Event:
    time: Fraction
    seq: int
    kind: str = field(compare=False)
    target: Optional[NodeId] = field(compare=False, default=None)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    """Min-heap on (time, seq); handlers may only schedule the future."""

    def __init__(self, start: Fraction = Fraction(0)) -> None:
        self.now = Fraction(start)
        self._heap: list[Event] = []
        self._seq = 0

    def push(self, time: Fraction, kind: str, target: Optional[NodeId] = None, payload: Any = None) -> Event:
        time = Fraction(time)
        if time < self.now:
            raise ValueError(f"cannot schedule {kind} at {time} before now={self.now}")
        ev = Event(time=time, seq=self._seq, kind=kind, target=target, payload=payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def drain(self, handler: Callable[[Event], None]) -> int:
        count = 0
        while self._heap:
            handler(self.pop())
            count += 1
        return count

    def __len__(self) -> int:
        return len(self._heap)


# ---------------------------------------------------------------------------
# Channel resolution
# ---------------------------------------------------------------------------


def resolve_channel(
    scheduled: Ctv,
    played: Mapping[NodeId, Mode],
    rate_model: RateModel,
    jam_effects: Mapping[Ctv, LinkRateVector],
    good: frozenset[NodeId],
) -> LinkRateVector:
    """Realized per-link rates for one slot.

    `played` holds mode substitutions (bad nodes only; good nodes play the
    schedule). Any jam mode degrades the slot to the scenario's jammed
    vector for the scheduled CTV; otherwise the realized CTV is looked up
    in the table, and an off-catalog realization carries nothing. On top of
    the base vector, a link delivers only if its receiver, when good, is
    actually listening (half-duplex), and its transmitter, when good, is
    actually sending to it. Bad transmitters keep whatever the jammed
    vector grants them: jamming while appearing to cooperate is allowed.
    """
    modes = tuple(
        played.get(v, scheduled.mode_of(v)) for v in roster(rate_model.n)
    )
    realized = Ctv(modes)
    if any(m.kind is ModeKind.JAM for m in modes):
        base = jam_effects.get(scheduled, LinkRateVector.zero())
    elif realized in rate_model.table:
        base = rate_model.table[realized]
    else:
        base = LinkRateVector.zero()

    kept = {}
    for (i, j), r in base.entries:
        mj = realized.mode_of(j)
        if j in good and mj.kind is not ModeKind.LISTEN:
            continue
        mi = realized.mode_of(i)
        if i in good and not (mi.kind is ModeKind.TX and mi.target == j):
            continue
        kept[(i, j)] = r
    return LinkRateVector.from_dict(kept)


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------


class TraceWriter:
    """Append-only JSONL trace; rendering is canonical so identical runs
    serialize identically."""

    def __init__(self) -> None:
        self.lines: list[str] = []

    def record(
        self,
        time: Fraction,
        phase: str,
        kind: str,
        node: Optional[NodeId] = None,
        outcome: Optional[str] = None,
        data: Any = None,
    ) -> None:
        rec: dict[str, Any] = {
            "v": TRACE_SCHEMA,
            "t": jsonable(Fraction(time)),
            "phase": phase,
            "kind": kind,
        }
        if node is not None:
            rec["node"] = node
        if outcome is not None:
            rec["outcome"] = outcome
        if data is not None:
            rec["data"] = jsonable(data)
        self.lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))

    def text(self) -> str:
        return "\n".join(self.lines) + ("\n" if self.lines else "")


# ---------------------------------------------------------------------------
# Run configuration and orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Fully materialized scenario: semantic objects, no file-level syntax."""

    n: int
    good: frozenset[NodeId]
    bad: frozenset[NodeId]
    clocks: Mapping[NodeId, AffineClock]
    clock_params: ClockParams
    rate_model: RateModel
    jam_effects: Mapping[Ctv, LinkRateVector]
    utility: UtilitySpec
    strategy: Strategy
    eps: Fraction
    constants: ParamConstants = ParamConstants()
    params: Optional[ProtocolParams] = None  # None = derive via the cascade
    k_r: Optional[int] = None  # None = count distinct claimed vectors


def validate_config(config: RunConfig) -> None:
    problems: list[tuple[str, str]] = []
    nodes = set(roster(config.n))
    if config.n < 2:
        problems.append(("n", f"need at least two nodes, got {config.n}"))
    if set(config.good) | set(config.bad) != nodes or set(config.good) & set(config.bad):
        problems.append(
            (
                "partition",
                f"good={sorted(config.good)} bad={sorted(config.bad)} "
                f"must split 1..{config.n}",
            )
        )
    if not config.good:
        problems.append(("partition", "at least one good node required"))
    missing = nodes - set(config.clocks)
    if missing:
        problems.append(("clocks", f"missing entries for {sorted(missing)}"))
    cp = config.clock_params
    for v in sorted(set(config.clocks) & nodes):
        clk = config.clocks[v]
        if not 1 <= clk.a <= cp.a_max:
            problems.append(
                (f"clocks[{v}]", f"skew {clk.a} outside [1, a_max={cp.a_max}]")
            )
        if not 0 <= clk.b <= cp.a_max * cp.U_0:
            problems.append(
                (f"clocks[{v}]", f"offset {clk.b} outside [0, a_max*U_0={cp.a_max * cp.U_0}]")
            )
    for ctv in config.rate_model.table:
        if ctv.n != config.n:
            problems.append(("rate_model", f"CTV '{ctv}' arity {ctv.n} != n={config.n}"))
            break
    for ctv in config.jam_effects:
        if ctv not in config.rate_model.table:
            problems.append(("jam_effects", f"'{ctv}' is not a catalog CTV"))
            break
    stray = set(config.utility.scope) - nodes
    if stray:
        problems.append(("utility", f"scope nodes {sorted(stray)} outside the roster"))
    if not 0 < config.eps < 1:
        problems.append(("eps", f"{config.eps} outside (0, 1)"))
    if problems:
        field_name, message = problems[0]
        if len(problems) > 1:
            rest = "; ".join(f"{f}: {m}" for f, m in problems[1:])
            message = f"{message}; also {rest}"
        raise ConfigInvalid(field_name, message)


@dataclass
class World:
    """Shared substrate handed to the protocol phases."""

    config: RunConfig
    queue: EventQueue
    registry: SignatureRegistry
    trace: TraceWriter
    strategy: Strategy
    # Filled by the lifecycle once the claimed-vector count k_r is known.
    params: Optional[ProtocolParams] = None

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def good(self) -> frozenset[NodeId]:
        return self.config.good

    @property
    def bad(self) -> frozenset[NodeId]:
        return self.config.bad

    @property
    def quantum(self) -> Fraction:
        return self.config.clock_params.quantum

    def clock(self, node: NodeId) -> AffineClock:
        return self.config.clocks[node]

    def counts(self, node: NodeId, t: Fraction) -> int:
        """Node-visible quantized reading at reference time t."""
        return self.clock(node).counts(t, self.quantum)

    def resolve(self, scheduled: Ctv, played: Mapping[NodeId, Mode]) -> LinkRateVector:
        return resolve_channel(
            scheduled, played, self.config.rate_model, self.config.jam_effects, self.good
        )


@dataclass(frozen=True)
class RunResult:
    metrics: dict[str, Any]
    trace: str

    def metrics_text(self) -> str:
        return json.dumps(self.metrics, sort_keys=True, separators=(",", ":")) + "\n"


def run(config: RunConfig, seed: int = 0) -> RunResult:
    """Execute the full lifecycle for one scenario; deterministic in
    (config, seed)."""
    from . import protocol  # runtime import: protocol drives, engine hosts

    validate_config(config)
    world = World(
        config=config,
        queue=EventQueue(),
        registry=SignatureRegistry(seed),
        trace=TraceWriter(),
        strategy=config.strategy,
    )
    metrics = protocol.run_lifecycle(world)
    return RunResult(metrics=metrics, trace=world.trace.text())
