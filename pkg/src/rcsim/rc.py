"""Remote Control: OPIC permit trees and the boundary rc_buffer (RCB).

Each boundary router owns an RCB of ``capacity`` packet-sized FIFOs and the
root of an OPIC tree.  A node may inject an outbound packet only while
holding a permit; permits are counted at the root and released when a
packet's tail leaves the RCB, so every outbound packet that reaches the
boundary finds a free FIFO.
"""

from __future__ import annotations

from collections import deque
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple

from .topology import SocTopology


class HardFault(RuntimeError):
    """Invariant violation inside the simulated hardware."""


class OpicBlock:
    """One permit block.  CM slots are the children (in id order) followed by
    the node's own NI."""

    __slots__ = (
        "node", "parent", "slot_in_parent", "children", "reg", "pc", "rr",
        "pending_up", "req_next", "resp_next", "is_root", "nslots", "tree",
    )

    def __init__(self, node: int, children: Sequence[int], is_root: bool, tree: int) -> None:
        self.node = node
        self.parent: Optional[OpicBlock] = None
        self.slot_in_parent = -1
        self.children: List[OpicBlock] = []
        self.nslots = len(children) + 1
        self.reg = [0] * self.nslots
        self.req_next = [0] * self.nslots
        self.resp_next = 0
        self.pc = 0
        self.rr = 0
        self.pending_up = 0
        self.is_root = is_root
        self.tree = tree

    @property
    def ni_slot(self) -> int:
        return self.nslots - 1

    def state(self) -> tuple:
        return (tuple(self.reg), tuple(self.req_next), self.resp_next, self.pc, self.rr, self.pending_up)


class OpicTree:
    """Blocks of one boundary's tree plus root-side permit bookkeeping."""

    def __init__(self, root: int, capacity: int) -> None:
        self.root = root
        self.capacity = capacity
        self.blocks: List[OpicBlock] = []
        self.release_next = 0
        self.busy = False

    def state(self) -> tuple:
        return (self.release_next,) + tuple(b.state() for b in self.blocks)


class OpicSystem:
    """All OPIC trees of an SoC.

    Timing: a request placed on a wire during cycle ``t`` is registered at
    the parent at ``t + 1``; a response likewise.  Inside one block the CM
    ring is combinational, and a node's own NI talks to its block in the
    same cycle.  Permit release at the root lands one cycle after the RCB
    signals it.
    """

    def __init__(
        self,
        topo: SocTopology,
        capacity: int,
        wire_bits: int = 2,
        pipeline: int = 1,
        grant: Optional[Callable[[int, int], None]] = None,
    ) -> None:
        if capacity < 1:
            raise ValueError("rc_capacity must be >= 1")
        self.wire_max = (1 << wire_bits) - 1
        self.pipeline = pipeline
        self.block_of: Dict[int, OpicBlock] = {}
        self.trees: Dict[int, OpicTree] = {}
        self.tree_list: List[OpicTree] = []
        self._grant = grant
        self._delayed: List[Tuple[int, OpicBlock, int]] = []
        for ci, plan in enumerate(topo.opic_plan):
            base = topo.node_offset[ci]
            for b in topo.boundaries[ci]:
                tree = OpicTree(b, capacity)
                self.trees[b] = tree
                self.tree_list.append(tree)
                members = [base + v for v in plan.members(b - base)]
                for g in members:
                    kids = [base + c for c in plan.children[g - base]]
                    blk = OpicBlock(g, kids, g == b, b)
                    self.block_of[g] = blk
                    tree.blocks.append(blk)
                root_blk = self.block_of[b]
                root_blk.pc = capacity
            for b in topo.boundaries[ci]:
                for g in [base + v for v in plan.members(b - base)]:
                    blk = self.block_of[g]
                    for i, c in enumerate(base + k for k in plan.children[g - base]):
                        child = self.block_of[c]
                        child.parent = blk
                        child.slot_in_parent = i
                        blk.children.append(child)
                # deepest first so a block's inputs are settled before use
                self.trees[b].blocks.sort(key=lambda k: (-plan.depth[k.node - base], k.node))

    # -- NI-facing ---------------------------------------------------------
    def request(self, node: int) -> None:
        blk = self.block_of[node]
        blk.reg[blk.ni_slot] += 1
        self.trees[blk.tree].busy = True

    def release(self, boundary: int) -> None:
        tree = self.trees[boundary]
        tree.release_next += 1
        tree.busy = True

    # -- per cycle ---------------------------------------------------------
    def cycle(self, t: int) -> int:
        """Advance all trees one cycle.  Returns a count of state changes
        (grants, wire transfers, releases); zero means nothing moved."""
        grants = 0
        if self._delayed:
            keep = []
            for when, blk, g in self._delayed:
                if when <= t:
                    blk.resp_next += g
                    self.trees[blk.tree].busy = True
                else:
                    keep.append((when, blk, g))
            self._delayed = keep
        for tree in self.tree_list:
            if tree.busy:
                grants += self._tree_cycle(tree, t)
            else:
                for blk in tree.blocks:
                    blk.rr = (blk.rr + 1) % blk.nslots
        return grants

    def idle_advance(self, cycles: int) -> None:
        """Fast-forward ``cycles`` cycles of a tree system with no activity."""
        for tree in self.tree_list:
            for blk in tree.blocks:
                blk.rr = (blk.rr + cycles) % blk.nslots

    def _tree_cycle(self, tree: OpicTree, t: int) -> int:
        wire_max = self.wire_max
        grants = 0
        moves = 0
        pending = False
        # register last cycle's wires everywhere before any block computes
        for blk in tree.blocks:
            reg, nxt = blk.reg, blk.req_next
            for i in range(blk.nslots - 1):
                if nxt[i]:
                    reg[i] += nxt[i]
                    nxt[i] = 0
                    moves += 1
            if blk.resp_next:
                moves += 1
                blk.pc += blk.resp_next
                blk.pending_up -= blk.resp_next
                if blk.pending_up < 0:
                    raise HardFault(f"OPIC block {blk.node}: more permits received than requested")
                blk.resp_next = 0
        root = self.block_of[tree.root]
        if tree.release_next:
            root.pc += tree.release_next
            tree.release_next = 0
            moves += 1
            if root.pc > tree.capacity:
                raise HardFault(f"OPIC root {tree.root}: permit counter above capacity")
        for blk in tree.blocks:
            reg = blk.reg
            total = sum(reg)
            if total:
                pending = True
            if total and blk.pc:
                ns = blk.nslots
                for k in range(ns):
                    i = (blk.rr + k) % ns
                    if not reg[i] or not blk.pc:
                        continue
                    is_ni = i == ns - 1
                    g = min(reg[i], blk.pc, 1 if is_ni else wire_max)
                    if g <= 0:
                        continue
                    reg[i] -= g
                    blk.pc -= g
                    total -= g
                    grants += g
                    if is_ni:
                        if self._grant is not None:
                            self._grant(blk.node, t)
                    else:
                        child = blk.children[i]
                        if self.pipeline > 1 and ns > 8:
                            self._delayed.append((t + self.pipeline, child, g))
                        else:
                            child.resp_next += g
            if blk.pc < 0:
                raise HardFault(f"OPIC block {blk.node}: negative permit counter")
            if not blk.is_root:
                deficit = total - blk.pending_up
                if deficit > 0:
                    send = min(deficit, wire_max)
                    blk.pending_up += send
                    blk.parent.req_next[blk.slot_in_parent] += send
                    moves += 1
            blk.rr = (blk.rr + 1) % blk.nslots
        if not pending:
            for blk in tree.blocks:
                if blk.resp_next or any(blk.req_next):
                    pending = True
                    break
        tree.busy = pending or tree.release_next > 0 or bool(self._delayed)
        return grants + moves

    # -- accounting ----------------------------------------------------------
    def permits_in_tree(self, boundary: int) -> int:
        """Permits sitting in counters and on response wires of one tree."""
        tree = self.trees[boundary]
        total = tree.release_next
        for blk in tree.blocks:
            total += blk.pc + blk.resp_next
        for _, blk, g in self._delayed:
            if blk.tree == boundary:
                total += g
        return total

    def outstanding_requests(self, boundary: int) -> int:
        tree = self.trees[boundary]
        return sum(sum(b.reg) + sum(b.req_next) for b in tree.blocks)


class RcBuffer:
    """Packet FIFOs of one boundary router plus the single-port RCVA."""

    __slots__ = (
        "router", "capacity", "fifos", "owner", "out_vc", "alloc_rr", "send_rr",
        "vc_rr", "occupied",
    )

    def __init__(self, router: int, capacity: int) -> None:
        self.router = router
        self.capacity = capacity
        self.fifos: List[Deque] = [deque() for _ in range(capacity)]
        self.owner: List[Optional[object]] = [None] * capacity
        self.out_vc = [-1] * capacity
        self.alloc_rr = 0
        self.send_rr = 0
        self.vc_rr = 0
        self.occupied = 0

    def admit_head(self, pkt: object) -> int:
        """Reserve the lowest free FIFO for a packet whose HEAD is arriving."""
        for i in range(self.capacity):
            if self.owner[i] is None:
                self.owner[i] = pkt
                self.occupied += 1
                return i
        raise HardFault(f"rc_buffer at router {self.router} full on HEAD admission")

    def append(self, idx: int, flit: object) -> None:
        self.fifos[idx].append(flit)

    def cycle(
        self,
        t: int,
        credits: List[int],
        busy: List[bool],
        vc_range: Callable[[object], Tuple[int, int]],
        send: Callable[[object, int, int], None],
    ) -> Tuple[int, Optional[object]]:
        """One RCVA/RCB cycle.

        Allocates at most one downstream VC, then sends at most one flit
        whose FIFO holds a VC and whose VC has a credit.  Returns
        ``(activity, released_packet)``; the packet is reported when its
        TAIL leaves, freeing the FIFO.
        """
        if not self.occupied:
            return 0, None
        cap = self.capacity
        activity = 0
        for k in range(cap):
            i = (self.alloc_rr + k) % cap
            if self.owner[i] is None or self.out_vc[i] >= 0:
                continue
            q = self.fifos[i]
            if not q or q[0].ready > t:
                continue
            lo, hi = vc_range(self.owner[i])
            span = hi - lo
            for j in range(span):
                v = lo + (self.vc_rr + j) % span
                if not busy[v]:
                    busy[v] = True
                    self.out_vc[i] = v
                    self.vc_rr = (v - lo + 1) % span
                    self.alloc_rr = (i + 1) % cap
                    if q[0].ready <= t:
                        q[0].ready = t + 1
                    activity += 1
                    break
            break  # RCVA grants one candidate per cycle
        released = None
        for k in range(cap):
            i = (self.send_rr + k) % cap
            v = self.out_vc[i]
            if v < 0:
                continue
            q = self.fifos[i]
            if not q or q[0].ready > t or credits[v] <= 0:
                continue
            f = q.popleft()
            credits[v] -= 1
            send(f, v, t)
            activity += 1
            self.send_rr = (i + 1) % cap
            if f.tail:
                released = self.owner[i]
                self.owner[i] = None
                self.out_vc[i] = -1
                self.occupied -= 1
            break
        return activity, released

    def flit_count(self) -> int:
        return sum(len(q) for q in self.fifos)
