"""Intermediate-buffer stations for the ITB baseline.

An inter-chiplet packet first travels to its egress boundary node, where
it is fully ejected into the station buffer.  The station answers the
source with ACK (buffered) or NACK (dropped, the source retries later) and
re-injects buffered packets, in FIFO order, toward the destination.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Tuple


@dataclass
class ItbStation:
    node: int
    capacity: int = 4
    # (ready cycle, packet)
    buffer: Deque[Tuple[int, object]] = field(default_factory=deque)
    reserved: int = 0
    # packet currently being re-injected still holds its slot
    outgoing: int = 0
    accepted: int = 0
    dropped: int = 0

    @property
    def occupancy(self) -> int:
        return len(self.buffer) + self.reserved + self.outgoing

    def try_reserve(self) -> bool:
        """Decide acceptance when a HEAD ejects into the station."""
        if self.occupancy < self.capacity:
            self.reserved += 1
            return True
        return False

    def commit(self, pkt: object, ready: int) -> None:
        """TAIL of a reserved packet arrived; it becomes eligible to reinject."""
        self.reserved -= 1
        self.buffer.append((ready, pkt))
        self.accepted += 1

    def push_local(self, pkt: object, ready: int) -> None:
        """A packet sourced at the boundary node itself (no network trip)."""
        self.buffer.append((ready, pkt))
        self.accepted += 1

    def head(self, now: int):
        if self.buffer and self.buffer[0][0] <= now:
            return self.buffer[0][1]
        return None
