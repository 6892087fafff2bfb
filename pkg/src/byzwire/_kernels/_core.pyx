# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of the pure-Python search kernels.

Same integer semantics as ``_fallback``; callers guarantee all intermediate
values fit in signed 64-bit (the package-level adapter checks magnitudes and
falls back to the Python implementation otherwise).
"""

DEF MAX_HOPS = 8
DEF MAX_NODES = 8
DEF MAX_SEGS = 256

cdef inline long long floordiv(long long a, long long b) nogil:
    # C division truncates toward zero; emulate Python floor division.
    cdef long long q = a / b
    if a % b != 0 and ((a < 0) != (b < 0)):
        q -= 1
    return q

cdef inline long long floormod(long long a, long long b) nogil:
    cdef long long r = a % b
    if r != 0 and ((r < 0) != (b < 0)):
        r += b
    return r


# ---------------------------------------------------------------------------
# Minimum-delay search
# ---------------------------------------------------------------------------

cdef struct DelayCtx:
    long long num_a[MAX_HOPS]
    long long den_a[MAX_HOPS]
    long long num_b[MAX_HOPS]
    int h
    long long floor_rn
    long long cap
    long long best

cdef void _descend(DelayCtx* ctx, int i, long long s_prev, long long spent) nogil:
    cdef long long num = ctx.num_a[i] * s_prev + ctx.num_b[i]
    cdef long long r, limit, budget, delay
    if num % ctx.den_a[i] != 0:
        return
    # remainder is zero, so truncating division is exact for any sign
    r = num / ctx.den_a[i]
    if i == ctx.h - 1:
        if r >= ctx.floor_rn:
            if ctx.best < 0 or spent < ctx.best:
                ctx.best = spent
        return
    limit = ctx.cap if ctx.best < 0 else ctx.best
    budget = limit - spent
    for delay in range(budget):
        _descend(ctx, i + 1, r + delay, spent + delay)
        if ctx.best == spent:
            return


def delay_min_search(num_a, den_a, num_b, long long s0, long long floor_rn, long long cap):
    """See ``_fallback.delay_min_search``."""
    cdef DelayCtx ctx
    cdef int h = len(num_a)
    cdef int i
    if h < 1 or h > MAX_HOPS:
        raise ValueError("hop count out of range for compiled kernel")
    if len(den_a) != h or len(num_b) != h:
        raise ValueError("hop arrays must share a length")
    for i in range(h):
        ctx.num_a[i] = num_a[i]
        ctx.den_a[i] = den_a[i]
        ctx.num_b[i] = num_b[i]
        if ctx.den_a[i] <= 0:
            raise ValueError("hop denominators must be positive")
    ctx.h = h
    ctx.floor_rn = floor_rn
    ctx.cap = cap
    ctx.best = -1
    with nogil:
        _descend(&ctx, 0, s0, 0)
    return ctx.best


# ---------------------------------------------------------------------------
# Delivery search
# ---------------------------------------------------------------------------

# No-delivery sentinel. Delivery instants can be any sign, so the sentinel
# sits outside the magnitude envelope the adapter enforces (< 2**62).
cdef long long NO_HIT = (-(<long long>1 << 62)) - 1

cdef struct Mesh:
    int n
    long long pi[MAX_NODES]
    long long sigma[MAX_NODES]
    long long rot[MAX_NODES]
    int seg_ptr[MAX_NODES]
    int seg_cnt[MAX_NODES]
    long long qu[MAX_NODES]
    long long bu[MAX_NODES]
    int good[MAX_NODES]
    long long seg_len[MAX_SEGS]
    int seg_state[MAX_SEGS]
    int seg_peer[MAX_SEGS]

cdef struct Seg:
    int state
    int peer
    long long start
    long long end

cdef void _segment_at(Mesh* m, int u, long long c, Seg* out) nogil:
    cdef long long k = floordiv(c, m.pi[u])
    cdef long long frame0 = k * m.pi[u]
    cdef long long pos = c - frame0
    cdef long long o = floormod(k, m.rot[u]) * m.sigma[u]
    cdef long long rel, acc, nxt
    cdef int idx
    if pos < o:
        out.state = 0
        out.peer = 0
        out.start = frame0
        out.end = frame0 + o
        return
    if pos >= o + m.sigma[u]:
        out.state = 0
        out.peer = 0
        out.start = frame0 + o + m.sigma[u]
        out.end = frame0 + m.pi[u]
        return
    rel = pos - o
    acc = 0
    for idx in range(m.seg_cnt[u]):
        nxt = acc + m.seg_len[m.seg_ptr[u] + idx]
        if rel < nxt:
            out.state = m.seg_state[m.seg_ptr[u] + idx]
            out.peer = m.seg_peer[m.seg_ptr[u] + idx]
            out.start = frame0 + o + acc
            out.end = frame0 + o + nxt
            return
        acc = nxt
    # unreachable when layouts sum to sigma
    out.state = 0
    out.peer = 0
    out.start = c
    out.end = c + 1

cdef inline long long _t_of(Mesh* m, int u, long long c) nogil:
    return c * m.qu[u] + m.bu[u]

cdef inline long long _count_at(Mesh* m, int u, long long t) nogil:
    return floordiv(t - m.bu[u], m.qu[u])

cdef bint _tx_free(Mesh* m, int skip_a, int skip_b, long long t0, long long t1) nogil:
    cdef int w
    cdef long long c
    cdef Seg seg
    for w in range(m.n):
        if w == skip_a or w == skip_b or m.good[w] == 0:
            continue
        c = _count_at(m, w, t0)
        while True:
            _segment_at(m, w, c, &seg)
            if seg.state == 1:
                return False
            if _t_of(m, w, seg.end) >= t1:
                break
            c = seg.end
    return True

cdef long long _packets_in(Mesh* m, int i, int j, long long lo, long long hi,
                           long long anchor, long long w_num, long long t_from) nogil:
    cdef long long start, mm, p0, p1
    if hi - lo < w_num:
        return NO_HIT
    start = lo if lo > t_from else t_from
    if start > anchor:
        mm = floordiv(start - anchor + w_num - 1, w_num)
    else:
        mm = 0
    while True:
        p0 = anchor + mm * w_num
        if p0 < lo:
            mm += 1
            continue
        p1 = p0 + w_num
        if p1 > hi:
            return NO_HIT
        if _tx_free(m, i, j, p0, p1):
            return p0
        mm += 1

cdef long long _scan_counterpart(Mesh* m, int i, int j, int node,
                                 int want_state, int want_peer,
                                 long long lo, long long hi,
                                 long long tx_anchor, bint use_anchor,
                                 long long burst_t0, long long w_num,
                                 long long t_from) nogil:
    cdef long long c = _count_at(m, node, lo)
    cdef Seg seg
    cdef long long t_seg0, t_seg1, anchor, w_lo, w_hi, hit
    while True:
        _segment_at(m, node, c, &seg)
        t_seg0 = _t_of(m, node, seg.start)
        t_seg1 = _t_of(m, node, seg.end)
        if t_seg0 >= hi:
            return NO_HIT
        if seg.state == want_state and seg.peer == want_peer:
            w_lo = t_seg0 if t_seg0 > lo else lo
            w_hi = t_seg1 if t_seg1 < hi else hi
            if w_lo < w_hi:
                anchor = tx_anchor if use_anchor else t_seg0
                if anchor < burst_t0:
                    anchor = burst_t0
                hit = _packets_in(m, i, j, w_lo, w_hi, anchor, w_num, t_from)
                if hit != NO_HIT:
                    return hit
        if t_seg1 >= hi:
            return NO_HIT
        c = seg.end

cdef long long _find(Mesh* m, int i, int j, long long burst_t0, long long burst_t1,
                     long long t_from, long long w_num, int driver) nogil:
    cdef long long t_lo = burst_t0 if burst_t0 > t_from else t_from
    cdef long long kd, frame0, o, acc, ln, s_c0, d0, d1, lo, hi, hit
    cdef int idx, other, want_state
    if t_lo >= burst_t1:
        return NO_HIT
    other = j if driver == i else i
    want_state = 1 if driver == i else 2
    kd = floordiv(_count_at(m, driver, t_lo), m.pi[driver])
    while True:
        frame0 = kd * m.pi[driver]
        if _t_of(m, driver, frame0) >= burst_t1:
            return NO_HIT
        o = floormod(kd, m.rot[driver]) * m.sigma[driver]
        acc = 0
        for idx in range(m.seg_cnt[driver]):
            ln = m.seg_len[m.seg_ptr[driver] + idx]
            if (m.seg_state[m.seg_ptr[driver] + idx] == want_state
                    and m.seg_peer[m.seg_ptr[driver] + idx] == other):
                s_c0 = frame0 + o + acc
                d0 = _t_of(m, driver, s_c0)
                d1 = _t_of(m, driver, s_c0 + ln)
                lo = d0 if d0 > burst_t0 else burst_t0
                hi = d1 if d1 < burst_t1 else burst_t1
                if lo < hi:
                    if driver == i:
                        hit = _scan_counterpart(m, i, j, j, 2, i, lo, hi,
                                                d0, True, burst_t0, w_num, t_from)
                    else:
                        hit = _scan_counterpart(m, i, j, i, 1, j, lo, hi,
                                                0, False, burst_t0, w_num, t_from)
                    if hit != NO_HIT:
                        return hit
            acc += ln
        kd += 1


def find_delivery_flat(pi, sigma, rot, seg_ptr, seg_cnt, seg_len, seg_state, seg_peer,
                       qu, bu, good_mask, int i, int j,
                       long long burst_t0, long long burst_t1,
                       long long t_from, long long w_num, int driver):
    """Flat-array form of ``_fallback.find_delivery``."""
    cdef Mesh m
    cdef int n = len(pi)
    cdef int s_total = len(seg_len)
    cdef int u
    if n > MAX_NODES or s_total > MAX_SEGS:
        raise ValueError("mesh too large for compiled kernel")
    m.n = n
    for u in range(n):
        m.pi[u] = pi[u]
        m.sigma[u] = sigma[u]
        m.rot[u] = rot[u]
        m.seg_ptr[u] = seg_ptr[u]
        m.seg_cnt[u] = seg_cnt[u]
        m.qu[u] = qu[u]
        m.bu[u] = bu[u]
        m.good[u] = good_mask[u]
    for u in range(s_total):
        m.seg_len[u] = seg_len[u]
        m.seg_state[u] = seg_state[u]
        m.seg_peer[u] = seg_peer[u]
    cdef long long out
    with nogil:
        out = _find(&m, i, j, burst_t0, burst_t1, t_from, w_num, driver)
    return None if out == NO_HIT else out
