"""Search kernels with a compiled fast path and a pure-Python fallback.

``delay_min_search`` and ``find_delivery`` pick the compiled extension when
it imported successfully and every intermediate value provably fits signed
64-bit arithmetic; otherwise they run the exact unbounded-int Python
implementation. Both produce identical results by construction, which the
parity tests check.
"""

from __future__ import annotations

import os
from typing import Optional, Sequence

from . import _fallback
from ._fallback import STATE_RX, STATE_SILENT, STATE_TX, NodePattern

try:  # pragma: no cover - exercised indirectly via IMPL
    from . import _core  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover
    _core = None

_I64_SAFE = 1 << 62

if os.environ.get("BYZWIRE_PURE_PYTHON"):
    _core = None

HAVE_COMPILED = _core is not None
IMPL = "compiled+python" if HAVE_COMPILED else "python"


def _delay_fits_i64(num_a, den_a, num_b, s0, floor_rn, cap) -> bool:
    if len(num_a) > 8:
        return False
    bound = abs(s0) + cap
    for i in range(len(num_a)):
        prod = abs(num_a[i]) * bound + abs(num_b[i])
        if prod >= _I64_SAFE:
            return False
        bound = prod // den_a[i] + cap + 1
    return abs(floor_rn) < _I64_SAFE and bound < _I64_SAFE


def delay_min_search(
    num_a: Sequence[int],
    den_a: Sequence[int],
    num_b: Sequence[int],
    s0: int,
    floor_rn: int,
    cap: int,
) -> int:
    if _core is not None and _delay_fits_i64(num_a, den_a, num_b, s0, floor_rn, cap):
        return _core.delay_min_search(
            list(num_a), list(den_a), list(num_b), s0, floor_rn, cap
        )
    return _fallback.delay_min_search(num_a, den_a, num_b, s0, floor_rn, cap)


def _mesh_fits_i64(patterns, burst_t0, burst_t1, t_from, w_num) -> bool:
    if len(patterns) > 8 or sum(len(p.seg_len) for p in patterns) > 256:
        return False
    horizon = max(abs(burst_t0), abs(burst_t1), abs(t_from)) + abs(w_num)
    for p in patterns:
        span = horizon + abs(p.bu) + 2 * p.pi * p.qu
        if span >= _I64_SAFE:
            return False
    return True


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
) -> int:
    if _core is not None and _mesh_fits_i64(patterns, burst_t0, burst_t1, t_from, w_num):
        seg_ptr, seg_cnt = [], []
        seg_len, seg_state, seg_peer = [], [], []
        for p in patterns:
            seg_ptr.append(len(seg_len))
            seg_cnt.append(len(p.seg_len))
            seg_len.extend(p.seg_len)
            seg_state.extend(p.seg_state)
            seg_peer.extend(p.seg_peer)
        return _core.find_delivery_flat(
            [p.pi for p in patterns],
            [p.sigma for p in patterns],
            [p.rot for p in patterns],
            seg_ptr,
            seg_cnt,
            seg_len,
            seg_state,
            seg_peer,
            [p.qu for p in patterns],
            [p.bu for p in patterns],
            list(good_mask),
            i,
            j,
            burst_t0,
            burst_t1,
            t_from,
            w_num,
            driver,
        )
    return _fallback.find_delivery(
        patterns, good_mask, i, j, burst_t0, burst_t1, t_from, w_num, driver
    )


def python_impl():
    """The pure-Python module, for parity tests and benchmarks."""
    return _fallback


def compiled_impl() -> Optional[object]:
    """The compiled module when built, else None."""
    return _core
