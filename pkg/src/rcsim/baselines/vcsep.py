"""VC separation: outbound traffic and everything else use disjoint VC halves."""

from __future__ import annotations

from typing import Tuple


def vcsep_vc_range(outbound: bool, dst_chiplet: int, location_chiplet: int, vc_count: int) -> Tuple[int, int]:
    """Half-open VC range a packet may occupy at ``location_chiplet``.

    The outbound leg (source chiplet and interposer) gets the lower half;
    the inbound leg and intra-chiplet packets get the upper half.
    """
    if vc_count % 2:
        raise ValueError("vc_count must be even")
    half = vc_count // 2
    if outbound and location_chiplet != dst_chiplet:
        return 0, half
    return half, vc_count
