"""Pure-Python reference implementation of the search kernels.

Two hot loops live here (and, compiled, in ``_core.pyx``):

  * ``delay_min_search`` -- exhaustive minimum-forwarding-delay search over
    integer stamp grids for a relay chain whose interior nodes may fabricate
    clocks, used as the brute-force oracle for the delay-sum bound.
  * ``find_delivery`` -- first successful packet delivery for an ordered node
    pair under the rendezvous schedule: sender transmitting, receiver
    listening, every other good node silent for a whole packet (``None``
    when the burst holds no such packet).

Both operate on plain integers only; the compiled twin must return identical
values. Python ints here are unbounded, so this module is also the fallback
when magnitudes would overflow the compiled kernel's 64-bit arithmetic.
"""

from __future__ import annotations

from typing import Optional, Sequence

# Pattern state codes shared with the compiled kernel.
STATE_SILENT = 0
STATE_TX = 1
STATE_RX = 2


def delay_min_search(
    num_a: Sequence[int],
    den_a: Sequence[int],
    num_b: Sequence[int],
    s0: int,
    floor_rn: int,
    cap: int,
) -> int:
    """Minimum total forwarding delay over all admissible stamp assignments.

    The chain has h = len(num_a) hops between nodes 0..h. Hop i (1-based in
    the math, index i-1 here) declares the affine map
    tau_i = (num_a/den_a) * tau_{i-1} + (num_b/den_a), so a receive stamp is
    admissible only when the image of the predecessor's send stamp is an
    exact integer grid point. Interior nodes choose send stamps s >= r
    (causality); the final receive stamp is forced by consistency and must be
    >= floor_rn (the last node is honest, so its stamp cannot precede its
    clock reading at initiation time).

    Only assignments with total delay < cap are of interest (per-hop delays
    are nonnegative, so any assignment with a hop delay >= cap cannot beat
    cap). Returns the minimum total delay found, or -1 if no admissible
    assignment has total delay < cap.
    """
    h = len(num_a)
    if not (len(den_a) == len(num_b) == h):
        raise ValueError("hop arrays must share a length")
    if h < 1:
        raise ValueError("need at least one hop")

    best = -1

    def image(i: int, s_prev: int) -> Optional[int]:
        num = num_a[i] * s_prev + num_b[i]
        if num % den_a[i]:
            return None
        return num // den_a[i]

    def descend(i: int, s_prev: int, spent: int) -> None:
        nonlocal best
        r = image(i, s_prev)
        if r is None:
            return
        if i == h - 1:
            # Final hop: the last node is honest; admissible iff its forced
            # stamp is not in its past.
            if r >= floor_rn:
                if best < 0 or spent < best:
                    best = spent
            return
        limit = cap if best < 0 else best
        budget = limit - spent
        for delay in range(budget):
            descend(i + 1, r + delay, spent + delay)
            if best == spent:
                return  # cannot improve below already-spent delay

    descend(0, s0, 0)
    return best


# ---------------------------------------------------------------------------
# Rendezvous-schedule delivery search
# ---------------------------------------------------------------------------
#
# A node's schedule is periodic in its local clock counts: frames of length
# ``pi`` containing one active section of length ``sigma`` whose position
# rotates by sigma each frame (offset (k mod rot) * sigma in frame k). The
# active section is a fixed run of segments (seg_len/seg_state/seg_peer).
# Everything outside the section is silence.
#
# Node clocks enter as integer affine maps over a shared denominator:
# the reference time of node u's count boundary c is (c * qu[u] + bu[u]),
# expressed in 1/DEN reference units (DEN itself never appears here).


def _segment_at(
    pi: int,
    sigma: int,
    rot: int,
    seg_len: Sequence[int],
    seg_state: Sequence[int],
    seg_peer: Sequence[int],
    c: int,
) -> tuple[int, int, int, int]:
    """(state, peer, seg_start, seg_end) of the segment containing count c."""
    k = c // pi
    frame0 = k * pi
    pos = c - frame0
    o = (k % rot) * sigma
    if pos < o:
        return STATE_SILENT, 0, frame0, frame0 + o
    if pos >= o + sigma:
        return STATE_SILENT, 0, frame0 + o + sigma, frame0 + pi
    rel = pos - o
    acc = 0
    for idx in range(len(seg_len)):
        nxt = acc + seg_len[idx]
        if rel < nxt:
            return (
                seg_state[idx],
                seg_peer[idx],
                frame0 + o + acc,
                frame0 + o + nxt,
            )
        acc = nxt
    raise AssertionError("section layout shorter than sigma")


class NodePattern:
    """Flat per-node schedule + clock data consumed by the delivery search."""

    __slots__ = ("pi", "sigma", "rot", "seg_len", "seg_state", "seg_peer", "qu", "bu")

    def __init__(self, pi, sigma, rot, seg_len, seg_state, seg_peer, qu, bu):
        self.pi = pi
        self.sigma = sigma
        self.rot = rot
        self.seg_len = tuple(seg_len)
        self.seg_state = tuple(seg_state)
        self.seg_peer = tuple(seg_peer)
        self.qu = qu  # reference units (numerator) per local count
        self.bu = bu  # reference numerator of local count 0
        if sum(self.seg_len) != sigma:
            raise ValueError("segment lengths must sum to sigma")
        if not (1 <= rot and sigma * rot <= pi or (rot == 1 and sigma == pi)):
            raise ValueError("rotation does not fit the frame")

    def state_at(self, c: int) -> tuple[int, int, int, int]:
        return _segment_at(
            self.pi, self.sigma, self.rot, self.seg_len, self.seg_state, self.seg_peer, c
        )

    def t_of(self, c: int) -> int:
        return c * self.qu + self.bu

    def count_at(self, t: int) -> int:
        return (t - self.bu) // self.qu


def _tx_free(patterns: Sequence[NodePattern], good_mask: Sequence[int], skip_a: int, skip_b: int, t0: int, t1: int) -> bool:
    """True iff no good node outside {skip_a, skip_b} transmits in [t0, t1)."""
    for w, pat in enumerate(patterns):
        if w == skip_a or w == skip_b or not good_mask[w]:
            continue
        c = pat.count_at(t0)
        while True:
            # every segment visited here overlaps [t0, t1): the first one
            # contains t0 and each later one starts at a prior end < t1
            state, _, _, seg_end = pat.state_at(c)
            if state == STATE_TX:
                return False
            if pat.t_of(seg_end) >= t1:
                break
            c = seg_end
    return True


def _packets_in(
    patterns: Sequence[NodePattern],
    good_mask: Sequence[int],
    i: int,
    j: int,
    lo: int,
    hi: int,
    anchor: int,
    w_num: int,
    t_from: int,
) -> Optional[int]:
    """First packet start within [lo, hi) whose whole [start, start+W) window
    is fit, starts no earlier than t_from, and is interference-free; None
    when no packet qualifies. Instants may be negative, so no in-band
    sentinel is available."""
    if hi - lo < w_num:
        return None
    start = max(lo, t_from)
    # packets are sent back-to-back from the anchor
    if start > anchor:
        m = (start - anchor + w_num - 1) // w_num
    else:
        m = 0
    while True:
        p0 = anchor + m * w_num
        if p0 < lo:
            m += 1
            continue
        p1 = p0 + w_num
        if p1 > hi:
            return None
        if _tx_free(patterns, good_mask, i, j, p0, p1):
            return p0
        m += 1


def find_delivery(
    patterns: Sequence[NodePattern],
    good_mask: Sequence[int],
    i: int,
    j: int,
    burst_t0: int,
    burst_t1: int,
    t_from: int,
    w_num: int,
    driver: int,
) -> Optional[int]:
    """Reference time (shared-denominator numerator) at which the first whole
    packet from i is captured by j, or None.

    A capture needs, for a full packet duration: i in a TX-to-j segment, j in
    an RX-from-i segment, no other good node transmitting, and the packet
    inside i's burst window [burst_t0, burst_t1). Packets are transmitted
    back-to-back from the start of each of i's TX-to-j segments (clipped to
    the burst). Only instants >= t_from are reported.

    `driver` must be whichever of i, j has the longer frame; walking the
    driver's frames keeps the search linear in the coarse structure instead
    of in the other node's (possibly tiny) frame count.
    """
    pat_d = patterns[driver]
    other = j if driver == i else i
    want_state = STATE_TX if driver == i else STATE_RX
    want_peer = other
    t_lo = max(burst_t0, t_from)
    if t_lo >= burst_t1:
        return None

    kd = pat_d.count_at(t_lo) // pat_d.pi
    while True:
        frame0 = kd * pat_d.pi
        if pat_d.t_of(frame0) >= burst_t1:
            return None
        o = (kd % pat_d.rot) * pat_d.sigma
        acc = 0
        for idx in range(len(pat_d.seg_len)):
            ln = pat_d.seg_len[idx]
            if (
                pat_d.seg_state[idx] == want_state
                and pat_d.seg_peer[idx] == want_peer
            ):
                s_c0 = frame0 + o + acc
                d0 = pat_d.t_of(s_c0)
                d1 = pat_d.t_of(s_c0 + ln)
                lo = max(d0, burst_t0)
                hi = min(d1, burst_t1)
                if lo < hi:
                    if driver == i:
                        hit = _scan_counterpart(
                            patterns, good_mask, i, j, j, STATE_RX, i,
                            lo, hi, d0, burst_t0, w_num, t_from,
                        )
                    else:
                        hit = _scan_counterpart(
                            patterns, good_mask, i, j, i, STATE_TX, j,
                            lo, hi, None, burst_t0, w_num, t_from,
                        )
                    if hit is not None:
                        return hit
            acc += ln
        kd += 1


def _scan_counterpart(
    patterns: Sequence[NodePattern],
    good_mask: Sequence[int],
    i: int,
    j: int,
    node: int,
    want_state: int,
    want_peer: int,
    lo: int,
    hi: int,
    tx_anchor: Optional[int],
    burst_t0: int,
    w_num: int,
    t_from: int,
) -> Optional[int]:
    """Walk `node`'s matching segments across [lo, hi) looking for a clean
    packet. When the driver was the sender, `tx_anchor` is the sender's
    segment start (packets run back-to-back from it); otherwise the sender's
    segments are the ones being walked and each provides its own anchor."""
    pat = patterns[node]
    c = pat.count_at(lo)
    while True:
        state, peer, seg_start, seg_end = pat.state_at(c)
        t_seg0 = pat.t_of(seg_start)
        t_seg1 = pat.t_of(seg_end)
        if t_seg0 >= hi:
            return None
        if state == want_state and peer == want_peer:
            w_lo = max(t_seg0, lo)
            w_hi = min(t_seg1, hi)
            if w_lo < w_hi:
                anchor = tx_anchor if tx_anchor is not None else t_seg0
                anchor = max(anchor, burst_t0)
                hit = _packets_in(
                    patterns, good_mask, i, j, w_lo, w_hi, anchor, w_num, t_from
                )
                if hit is not None:
                    return hit
        if t_seg1 >= hi:
            return None
        c = seg_end
