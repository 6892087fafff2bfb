"""Authenticated multi-hop dissemination over an EIG tree.

Nodes flood signed payload items (link certificates, timing records, failed
CTV entries) for n rounds. A vertex label records the relay chain: the vertex
(m1, ..., mk) in node i's tree holds what mk forwarded to i out of what
m_{k-1} forwarded to mk, and so on back to the originator m1.

Labels alone are claims, so every hop is signed: a vertex travels with one
signature per label element, and signature p binds the label prefix, the
exact item set, and the chain built so far. A chain is therefore only
constructible hop by hop. Two consequences carry the agreement proof:

  * a chain whose ids are all misbehaving nodes can never grow past their
    count (ids repeat-free, signatures unforgeable), and
  * a verified signature by a well-behaved node means that node really held
    the items and broadcast them to every neighbor at its relay round,

so after n rounds any item present in one good tree has crossed the whole
connected good subgraph, and the decision can be a plain union.

Decision: take every item seen at any vertex whose signatures all verify,
then throw away items whose signer also signed a different item for the same
conflict domain (a double-signed link certificate indicts the signer; keeping
either copy would let the signer steer different nodes to different views).
Both steps are set-valued, so any two nodes holding the same item set decide
identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Mapping, Tuple

from .model import NodeId, frac

Label = Tuple[NodeId, ...]
# check(signer, body, signature) -> bool; sign(body) -> signature bound to
# one signer. Both come from the engine's signature registry.
SignatureCheck = Callable[[NodeId, Hashable, object], bool]
Signer = Callable[[Hashable], object]


def relay_body(label: Label, items: frozenset, chain: tuple) -> tuple:
    """Canonical content signed by the node relaying vertex `label`."""
    return ("eig-relay", label, items, chain)


@dataclass(frozen=True)
class Relay:
    """A vertex as it travels: payload plus its per-hop signature chain.

    chain[p] is label[p]'s signature over relay_body(label[:p], items,
    chain[:p]); a stored vertex always has one chain element per label
    element.
    """

    items: frozenset
    chain: tuple

    def extended(self, sig: object) -> "Relay":
        return Relay(self.items, self.chain + (sig,))


def _item_verified(item: object, check: SignatureCheck) -> bool:
    claims = getattr(item, "claims", None)
    if claims is None:
        return False
    return all(check(signer, body, sig) for signer, body, sig in claims())


def _chain_verified(label: Label, relay: Relay, check: SignatureCheck) -> bool:
    if len(relay.chain) != len(label):
        return False
    return all(
        check(
            label[p],
            relay_body(label[:p], relay.items, relay.chain[:p]),
            relay.chain[p],
        )
        for p in range(len(label))
    )


@dataclass(frozen=True)
class EigTree:
    """Per-node dissemination state: present vertices keyed by relay label.

    Vertices whose payload would be absent are simply not stored (labels over
    n ids grow factorially, and absent vertices contribute nothing to the
    decision).
    """

    origin: NodeId
    n: int
    values: Mapping[Label, Relay]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("tree needs a positive roster size")
        for label, relay in self.values.items():
            if len(label) > self.n:
                raise ValueError(f"label {label} deeper than {self.n} rounds")
            if len(set(label)) != len(label):
                raise ValueError(f"label {label} repeats an id")
            if len(relay.chain) != len(label):
                raise ValueError(f"chain length mismatch at {label}")

    def level_slice(self, k: int) -> dict[Label, Relay]:
        """Present vertices with labels of length k (k = 0 is the root)."""
        return {lbl: v for lbl, v in self.values.items() if len(lbl) == k}

    @property
    def depth(self) -> int:
        return max((len(lbl) for lbl in self.values), default=0)


def new_tree(origin: NodeId, n: int, payload: Iterable) -> EigTree:
    return EigTree(origin, n, {(): Relay(frozenset(payload), ())})


def relay_slice(tree: EigTree, k: int, sign: Signer) -> dict[Label, Relay]:
    """What the tree's owner broadcasts in round k: its level-(k-1) vertices,
    each wrapped with a fresh relay signature. The same slice goes to every
    neighbor."""
    if not 1 <= k <= tree.n:
        raise ValueError(f"round {k} outside 1..{tree.n}")
    out = {}
    for label, relay in tree.level_slice(k - 1).items():
        sig = sign(relay_body(label, relay.items, relay.chain))
        out[label] = relay.extended(sig)
    return out


def eig_round(
    tree: EigTree,
    k: int,
    inbound: Mapping[NodeId, Mapping[Label, Relay]],
    check: SignatureCheck,
) -> EigTree:
    """Absorb round k: neighbors' level-(k-1) vertices become level-k ones.

    A vertex labeled lbl received from neighbor m lands at lbl + (m,), and
    is kept only when the whole relay chain and every item signature verify.
    Anything malformed (wrong level, repeated id, m already in the chain, a
    broken chain, an unverifiable item) degrades to absent rather than
    erroring: misbehaving senders must not be able to crash the round.
    """
    if not 1 <= k <= tree.n:
        raise ValueError(f"round {k} outside 1..{tree.n}")
    values = dict(tree.values)
    for m in sorted(inbound):
        if m == tree.origin:
            continue
        for label, relay in inbound[m].items():
            if not isinstance(label, tuple) or len(label) != k - 1:
                continue
            if m in label or len(set(label)) != len(label):
                continue
            stored = label + (m,)
            if not isinstance(relay, Relay) or not relay.items:
                continue
            if not _chain_verified(stored, relay, check):
                continue
            if not all(_item_verified(x, check) for x in relay.items):
                continue
            values[stored] = relay
    return EigTree(tree.origin, tree.n, values)


def eig_decide(tree: EigTree, check: SignatureCheck) -> frozenset:
    """Common payload view: verified items minus same-signer conflicts."""
    seen = set()
    for relay in tree.values.values():
        seen.update(relay.items)
    verified = {x for x in seen if _item_verified(x, check)}
    groups: dict[tuple, set] = {}
    for x in verified:
        for signer, _, _ in x.claims():
            groups.setdefault((signer, x.conflict_key()), set()).add(x)
    conflicted = {g for g, xs in groups.items() if len(xs) > 1}
    return frozenset(
        x
        for x in verified
        if not any(
            (signer, x.conflict_key()) in conflicted for signer, _, _ in x.claims()
        )
    )


# ---------------------------------------------------------------------------
# Link certificates
# ---------------------------------------------------------------------------


def certificate_body(
    i: NodeId,
    j: NodeId,
    a_ij: Fraction,
    b_ij: Fraction,
    a_ji: Fraction,
    b_ji: Fraction,
    rates: tuple,
) -> tuple:
    """Canonical signed content of a link certificate (everything but the
    signatures themselves); both endpoints sign exactly this tuple."""
    return ("link-cert", i, j, a_ij, b_ij, a_ji, b_ji, rates)


@dataclass(frozen=True)
class LinkCertificate:
    """Dual-signed declaration of one link's timing maps and claimed rates.

    a_ij, b_ij map endpoint i's clock reading onto endpoint j's (the same
    direction convention as the timing-exchange estimates); a_ji, b_ji map
    the other way. `rates` is a canonical tuple of (mode, rate) claims.
    """

    i: NodeId
    j: NodeId
    a_ij: Fraction
    b_ij: Fraction
    a_ji: Fraction
    b_ji: Fraction
    rates: tuple
    sig_i: object
    sig_j: object

    def __post_init__(self) -> None:
        if not self.i < self.j:
            raise ValueError("certificate endpoints must satisfy i < j")
        for f in ("a_ij", "b_ij", "a_ji", "b_ji"):
            object.__setattr__(self, f, frac(getattr(self, f)))
        if self.a_ij <= 0 or self.a_ji <= 0:
            raise ValueError("declared skews must be positive")
        object.__setattr__(self, "rates", tuple(sorted(self.rates)))

    def body(self) -> tuple:
        return certificate_body(
            self.i, self.j, self.a_ij, self.b_ij, self.a_ji, self.b_ji, self.rates
        )

    def claims(self):
        body = self.body()
        return ((self.i, body, self.sig_i), (self.j, body, self.sig_j))

    def conflict_key(self) -> tuple:
        return ("link", self.i, self.j)

    @property
    def endpoints(self) -> frozenset:
        return frozenset((self.i, self.j))

    def estimate(self, src: NodeId, dst: NodeId) -> tuple[Fraction, Fraction]:
        """(a, b) mapping src's clock onto dst's, for either direction."""
        if (src, dst) == (self.i, self.j):
            return self.a_ij, self.b_ij
        if (src, dst) == (self.j, self.i):
            return self.a_ji, self.b_ji
        raise ValueError(f"({src}, {dst}) is not this certificate's link")
