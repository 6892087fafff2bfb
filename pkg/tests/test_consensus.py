"""Tests for the authenticated flood: tree mechanics, agreement, conflicts."""

import itertools
from dataclasses import dataclass

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byzwire.consensus import (
    EigTree,
    LinkCertificate,
    Relay,
    certificate_body,
    eig_decide,
    eig_round,
    new_tree,
    relay_body,
    relay_slice,
)
from byzwire.model import frac


def make_registry():
    """Ideal-signature fake: a ledger of (signer, body) pairs. Forging means
    building the sig tuple without a ledger entry, and check catches it."""
    ledger = set()

    def sign_for(node):
        def sign(body):
            ledger.add((node, body))
            return ("sig", node, body)

        return sign

    def check(signer, body, sig):
        return sig == ("sig", signer, body) and (signer, body) in ledger

    return sign_for, check


@dataclass(frozen=True)
class Note:
    """Minimal single-signer payload item for flood tests."""

    author: int
    text: str
    sig: object

    def claims(self):
        return ((self.author, ("note", self.author, self.text), self.sig),)

    def conflict_key(self):
        return ("note", self.author)


def note(sign_for, author, text):
    return Note(author, text, sign_for(author)(("note", author, text)))


def forged_note(author, text):
    return Note(author, text, ("sig", author, ("note", author, text)))


def make_cert(sign_for, i, j, a_ij=1, b_ij=0, a_ji=1, b_ji=0, rates=()):
    rates = tuple(sorted(rates))
    body = certificate_body(
        i, j, frac(a_ij), frac(b_ij), frac(a_ji), frac(b_ji), rates
    )
    return LinkCertificate(
        i, j, a_ij, b_ij, a_ji, b_ji, rates, sign_for(i)(body), sign_for(j)(body)
    )


def run_flood(n, nodes, edges, payloads, sign_for, check, script=None):
    """Drive n rounds over an undirected edge set and decide.

    Every node (good or bad) maintains an honest tree; `script(k, sender,
    receiver, slice)` may replace the honest outgoing slice per receiver
    (None drops the message). Returns {node: decided frozenset}.
    """
    adj = {u: set() for u in nodes}
    for e in edges:
        a, b = tuple(e)
        adj[a].add(b)
        adj[b].add(a)
    trees = {u: new_tree(u, n, payloads.get(u, ())) for u in nodes}
    for k in range(1, n + 1):
        outgoing = {u: relay_slice(trees[u], k, sign_for(u)) for u in nodes}
        inbound = {u: {} for u in nodes}
        for u in nodes:
            for v in sorted(adj[u]):
                msg = outgoing[v]
                if script is not None:
                    msg = script(k, v, u, msg)
                if msg is not None:
                    inbound[u][v] = msg
        trees = {u: eig_round(trees[u], k, inbound[u], check) for u in nodes}
    return {u: eig_decide(trees[u], check) for u in nodes}


class TestTreeMechanics:
    def test_root_and_first_round(self):
        sign_for, check = make_registry()
        n1 = note(sign_for, 1, "a")
        n2 = note(sign_for, 2, "b")
        t1 = new_tree(1, 3, [n1])
        t2 = new_tree(2, 3, [n2])
        assert t1.values[()] == Relay(frozenset([n1]), ())
        out2 = relay_slice(t2, 1, sign_for(2))
        t1 = eig_round(t1, 1, {2: out2}, check)
        assert t1.values[(2,)].items == frozenset([n2])
        assert t1.depth == 1
        assert set(t1.level_slice(1)) == {(2,)}

    def test_second_round_extends_labels(self):
        sign_for, check = make_registry()
        n3 = note(sign_for, 3, "c")
        t3 = new_tree(3, 3, [n3])
        t2 = eig_round(
            new_tree(2, 3, []), 1, {3: relay_slice(t3, 1, sign_for(3))}, check
        )
        t1 = eig_round(
            new_tree(1, 3, []), 2, {2: relay_slice(t2, 2, sign_for(2))}, check
        )
        assert t1.values[(3, 2)].items == frozenset([n3])
        # two chain layers: 3's root broadcast, then 2's relay of it
        assert len(t1.values[(3, 2)].chain) == 2

    def test_round_bounds(self):
        sign_for, check = make_registry()
        t = new_tree(1, 2, [])
        with pytest.raises(ValueError):
            eig_round(t, 0, {}, check)
        with pytest.raises(ValueError):
            eig_round(t, 3, {}, check)
        with pytest.raises(ValueError):
            relay_slice(t, 0, sign_for(1))
        with pytest.raises(ValueError):
            relay_slice(t, 3, sign_for(1))

    def test_tree_validation(self):
        r = Relay(frozenset(["x"]), ())
        with pytest.raises(ValueError):
            EigTree(1, 0, {})
        with pytest.raises(ValueError):
            EigTree(1, 1, {(2, 3): Relay(frozenset(["x"]), ("s", "s"))})
        with pytest.raises(ValueError):
            EigTree(1, 3, {(2, 2): Relay(frozenset(["x"]), ("s", "s"))})
        with pytest.raises(ValueError):
            EigTree(1, 3, {(2,): r})  # chain shorter than label

    def test_malformed_inbound_degrades_to_absent(self):
        sign_for, check = make_registry()
        n2 = note(sign_for, 2, "b")
        t1 = new_tree(1, 4, [])
        good = relay_slice(new_tree(2, 4, [n2]), 1, sign_for(2))
        (sig,) = good[()].chain
        junk = {
            (9,): Relay(frozenset([n2]), (sig,)),  # wrong level for k=1
            "bogus": Relay(frozenset([n2]), (sig,)),  # label not a tuple
            (): "not a relay",
        }
        t1 = eig_round(t1, 1, {2: junk, 3: {(): Relay(frozenset(), ())}}, check)
        assert t1.values == {(): Relay(frozenset(), ())}
        # self-echo and repeated/containing-sender labels at round 2
        t1b = eig_round(
            t1,
            2,
            {
                1: good,  # sender claims to be the origin itself
                2: {(2,): Relay(frozenset([n2]), (sig, sig))},
                3: {(3,): Relay(frozenset([n2]), (sig, sig))},
            },
            check,
        )
        assert t1b.level_slice(2) == {}

    def test_broken_chain_rejected(self):
        sign_for, check = make_registry()
        n2 = note(sign_for, 2, "b")
        items = frozenset([n2])
        # forged root signature: right shape, but node 2 never signed this
        # body (built before any honest relay puts it in the ledger)
        fake = Relay(items, (("sig", 2, relay_body((), items, ())),))
        t1 = eig_round(new_tree(1, 3, []), 1, {2: {(): fake}}, check)
        assert (2,) not in t1.values
        # chain signed over different items than carried
        honest = relay_slice(new_tree(2, 3, [n2]), 1, sign_for(2))[()]
        mixed = Relay(frozenset([n2, note(sign_for, 2, "bb")]), honest.chain)
        t1 = eig_round(new_tree(1, 3, []), 1, {2: {(): mixed}}, check)
        assert (2,) not in t1.values

    def test_unverifiable_item_poisons_vertex(self):
        sign_for, check = make_registry()
        bad = forged_note(5, "fake")
        slice_ = relay_slice(new_tree(2, 3, [bad]), 1, sign_for(2))
        t1 = eig_round(new_tree(1, 3, []), 1, {2: slice_}, check)
        assert (2,) not in t1.values


class TestDecide:
    def test_union_and_verification(self):
        sign_for, check = make_registry()
        n1 = note(sign_for, 1, "a")
        n2 = note(sign_for, 2, "b")
        t = new_tree(1, 3, [n1])
        t = eig_round(t, 1, {2: relay_slice(new_tree(2, 3, [n2]), 1, sign_for(2))}, check)
        assert eig_decide(t, check) == frozenset([n1, n2])

    def test_forged_item_in_own_root_not_decided(self):
        # own-root items skip round filtering, so decide must re-verify
        sign_for, check = make_registry()
        t = new_tree(1, 2, [forged_note(2, "z")])
        assert eig_decide(t, check) == frozenset()

    def test_same_signer_conflict_discards_both(self):
        sign_for, check = make_registry()
        a = note(sign_for, 4, "x")
        b = note(sign_for, 4, "y")
        keep = note(sign_for, 2, "k")
        t = new_tree(1, 3, [a, b, keep])
        assert eig_decide(t, check) == frozenset([keep])

    def test_distinct_domains_do_not_conflict(self):
        sign_for, check = make_registry()
        c12 = make_cert(sign_for, 1, 2, b_ij=5)
        c13 = make_cert(sign_for, 1, 3, b_ij=7)
        t = new_tree(1, 3, [c12, c13])
        assert eig_decide(t, check) == frozenset([c12, c13])

    def test_conflicting_certificates_discarded(self):
        sign_for, check = make_registry()
        good = make_cert(sign_for, 2, 3)
        v1 = make_cert(sign_for, 1, 2, b_ij=0)
        v2 = make_cert(sign_for, 1, 2, b_ij=1)
        t = new_tree(3, 3, [good, v1, v2])
        assert eig_decide(t, check) == frozenset([good])


class TestFloodAgreement:
    def line(self, n):
        return [frozenset((i, i + 1)) for i in range(1, n)]

    def test_honest_clique(self):
        sign_for, check = make_registry()
        notes = {u: note(sign_for, u, f"p{u}") for u in (1, 2, 3)}
        edges = [frozenset((1, 2)), frozenset((1, 3)), frozenset((2, 3))]
        out = run_flood(
            3, [1, 2, 3], edges, {u: [v] for u, v in notes.items()}, sign_for, check
        )
        want = frozenset(notes.values())
        assert out == {1: want, 2: want, 3: want}

    def test_honest_line_needs_relays(self):
        sign_for, check = make_registry()
        notes = {u: note(sign_for, u, f"p{u}") for u in (1, 2, 3, 4)}
        out = run_flood(
            4, [1, 2, 3, 4], self.line(4), {u: [v] for u, v in notes.items()},
            sign_for, check,
        )
        want = frozenset(notes.values())
        assert all(out[u] == want for u in (1, 2, 3, 4))

    def test_equivocating_root_reconciled(self):
        # node 4 shows a different root payload to each neighbor; the two
        # variants conflict (same author), so everyone discards both and
        # all views still match
        sign_for, check = make_registry()
        notes = {u: note(sign_for, u, f"p{u}") for u in (1, 2, 3)}
        va = note(sign_for, 4, "va")
        vb = note(sign_for, 4, "vb")
        alt = new_tree(4, 4, [vb])

        def script(k, sender, receiver, slice_):
            if sender == 4 and k == 1 and receiver == 1:
                return relay_slice(alt, 1, sign_for(4))
            return slice_

        nodes = [1, 2, 3, 4]
        edges = [frozenset(p) for p in itertools.combinations(nodes, 2)]
        payloads = {u: [v] for u, v in notes.items()}
        payloads[4] = [va]
        out = run_flood(4, nodes, edges, payloads, sign_for, check, script)
        want = frozenset(notes.values())
        assert out[1] == out[2] == out[3] == want

    def test_late_injection_cannot_split_views(self):
        # a silent bad end node reveals its (validly signed) note only in the
        # final round; fabricated relay labels need signatures it cannot
        # produce, and its honest-looking root is at the wrong level, so no
        # good node accepts anything and views stay equal
        sign_for, check = make_registry()
        notes = {u: note(sign_for, u, f"p{u}") for u in (2, 3)}
        secret = note(sign_for, 1, "late")
        items = frozenset([secret])

        def script(k, sender, receiver, slice_):
            if sender != 1:
                return slice_
            if k < 3:
                return None
            fake_chain = (
                ("sig", 3, relay_body((), items, ())),
                ("sig", 2, relay_body((3,), items, ("x",))),
            )
            return {
                (): Relay(items, (sign_for(1)(relay_body((), items, ())),)),
                (3, 2): Relay(items, fake_chain),
            }

        payloads = {1: [secret], 2: [notes[2]], 3: [notes[3]]}
        out = run_flood(3, [1, 2, 3], self.line(3), payloads, sign_for, check, script)
        want = frozenset(notes.values())
        assert out[2] == out[3] == want

    def test_partial_reveal_still_floods(self):
        # the bad node gives its note to exactly one good neighbor in round
        # one; relays carry it to everyone, so either all good nodes decide
        # it or none do, never a split
        sign_for, check = make_registry()
        notes = {u: note(sign_for, u, f"p{u}") for u in (1, 2, 3)}
        gift = note(sign_for, 4, "gift")

        def script(k, sender, receiver, slice_):
            if sender == 4 and receiver != 2:
                return None
            return slice_

        nodes = [1, 2, 3, 4]
        edges = [frozenset(p) for p in itertools.combinations(nodes, 2)]
        payloads = {u: [v] for u, v in notes.items()}
        payloads[4] = [gift]
        out = run_flood(4, nodes, edges, payloads, sign_for, check, script)
        assert out[1] == out[2] == out[3] == frozenset(notes.values()) | {gift}

    @pytest.mark.parametrize("bad", [frozenset(), frozenset([5]), frozenset([1, 2])])
    def test_line_exhaustive_drop_scripts(self, bad):
        # every per-(bad node, round) drop pattern on a 5-line whose good
        # part stays connected: views agree and contain all good notes
        sign_for, check = make_registry()
        nodes = [1, 2, 3, 4, 5]
        notes = {u: note(sign_for, u, f"p{u}") for u in nodes}
        payloads = {u: [v] for u, v in notes.items()}
        good = [u for u in nodes if u not in bad]
        want = frozenset(notes[u] for u in good)
        slots = [(b, k) for b in sorted(bad) for k in range(1, 6)]
        for mask in range(1 << len(slots)):
            dropped = {s for i, s in enumerate(slots) if mask >> i & 1}

            def script(k, sender, receiver, slice_, dropped=dropped):
                return None if (sender, k) in dropped else slice_

            out = run_flood(5, nodes, self.line(5), payloads, sign_for, check, script)
            views = {out[u] for u in good}
            assert len(views) == 1
            assert want <= views.pop()

    @given(
        gift_to=st.sets(st.sampled_from([1, 2, 3]), max_size=3),
        acts=st.lists(
            st.sampled_from(["honest", "silent", "alt", "junk"]),
            min_size=12,
            max_size=12,
        ),
    )
    @settings(max_examples=80, deadline=None)
    def test_agreement_random_adversary(self, gift_to, acts):
        # node 4 misbehaves arbitrarily (per round, per receiver: honest copy,
        # silence, an equivocating alternate, or malformed junk); good nodes
        # on a line must still end with identical views containing every good
        # note
        sign_for, check = make_registry()
        notes = {u: note(sign_for, u, f"p{u}") for u in (1, 2, 3)}
        alt = new_tree(4, 4, [note(sign_for, 4, "alt")])
        act = {}
        i = 0
        for k in (1, 2, 3, 4):
            for r in (1, 2, 3):
                act[(k, r)] = acts[i]
                i += 1

        def script(k, sender, receiver, slice_):
            if sender != 4:
                return slice_
            a = act[(k, receiver)]
            if a == "honest":
                return slice_ if receiver in gift_to else None
            if a == "silent":
                return None
            if a == "alt":
                return relay_slice(alt, k, sign_for(4)) or None
            return {("junk",): "junk", (): Relay(frozenset(["raw"]), ())}

        edges = self.line(3) + [frozenset((u, 4)) for u in (1, 2, 3)]
        payloads = {u: [v] for u, v in notes.items()}
        payloads[4] = [note(sign_for, 4, "main")]
        out = run_flood(4, [1, 2, 3, 4], edges, payloads, sign_for, check, script)
        assert out[1] == out[2] == out[3]
        assert frozenset(notes.values()) <= out[1]


class TestLinkCertificate:
    def test_round_trip_and_estimates(self):
        sign_for, check = make_registry()
        c = make_cert(
            sign_for, 1, 2,
            a_ij=frac(3, 2), b_ij=frac(-1, 4), a_ji=frac(2, 3), b_ji=frac(1, 6),
            rates=(("qpsk", frac(2)), ("bpsk", frac(1))),
        )
        assert c.endpoints == frozenset((1, 2))
        assert c.estimate(1, 2) == (frac(3, 2), frac(-1, 4))
        assert c.estimate(2, 1) == (frac(2, 3), frac(1, 6))
        with pytest.raises(ValueError):
            c.estimate(1, 3)
        assert c.rates == (("bpsk", frac(1)), ("qpsk", frac(2)))
        assert all(check(s, b, g) for s, b, g in c.claims())

    def test_validation(self):
        sign_for, _ = make_registry()
        with pytest.raises(ValueError):
            make_cert(sign_for, 2, 1)
        with pytest.raises(ValueError):
            make_cert(sign_for, 1, 2, a_ij=0)
        with pytest.raises(ValueError):
            make_cert(sign_for, 1, 2, a_ji=-1)

    def test_single_forged_endpoint_rejected_everywhere(self):
        # one bad endpoint cannot fabricate a second dual-signed certificate,
        # so no spurious conflict can evict the genuine one
        sign_for, check = make_registry()
        genuine = make_cert(sign_for, 1, 2, b_ij=0)
        body = certificate_body(1, 2, frac(1), frac(9), frac(1), frac(0), ())
        fake = LinkCertificate(
            1, 2, 1, 9, 1, 0, (), sign_for(1)(body), ("sig", 2, body)
        )
        t = new_tree(3, 3, [genuine, fake])
        assert eig_decide(t, check) == frozenset([genuine])
