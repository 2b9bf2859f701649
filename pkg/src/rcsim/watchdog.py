"""Deadlock oracle built on a VC-level wait-for graph.

Vertices are occupied resources: router input VCs ``(router, port, vc)``
and rc_buffer FIFOs ``("rcb", router, slot)``.  An edge ``a -> b`` means
the packet at the front of ``a`` is stalled waiting for ``b``.  A cycle
that persists unchanged for a whole window, with none of its packets
moving a flit meanwhile, is a deadlock.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Hashable, List, Optional, Sequence, Tuple

import networkx as nx

from .network import VC_ACTIVE, VC_ROUTED, Network
from .topology import LOCAL, TSV

Vertex = Hashable


class Verdict(str, Enum):
    LIVE = "LIVE"
    DEADLOCK = "DEADLOCK"
    STARVATION = "STARVATION"


@dataclass
class WaitForGraph:
    time: int
    edges: Dict[Vertex, List[Vertex]] = field(default_factory=dict)
    owner: Dict[Vertex, int] = field(default_factory=dict)
    # last flit movement of every packet owning a vertex
    last_move: Dict[int, int] = field(default_factory=dict)

    def add(self, a: Vertex, b: Vertex) -> None:
        self.edges.setdefault(a, []).append(b)

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for a, bs in self.edges.items():
            for b in bs:
                g.add_edge(a, b)
        return g

    def cycles(self) -> List[FrozenSet[Vertex]]:
        """Vertex sets of the strongly connected components that contain a
        cycle, in a canonical order."""
        if not self.edges:
            return []
        g = self.graph()
        out = []
        for comp in nx.strongly_connected_components(g):
            if len(comp) > 1 or any(g.has_edge(v, v) for v in comp):
                out.append(frozenset(comp))
        out.sort(key=lambda c: sorted(map(repr, c)))
        return out

    def packets_of(self, comp: FrozenSet[Vertex]) -> List[int]:
        return sorted({self.owner[v] for v in comp if v in self.owner})


def snapshot_wfg(net: Network) -> WaitForGraph:
    """Current wait-for graph; read-only with respect to ``net``."""
    t = net.now
    g = WaitForGraph(t)
    links = net.topo.links
    feeder: Dict[Vertex, Vertex] = {}
    held: List[Tuple[Vertex, object]] = []
    for rt in net.routers:
        for p, vcs in enumerate(rt.in_vcs):
            for vc in vcs:
                if vc.state == 0:
                    continue
                me = (rt.id, p, vc.index)
                g.owner[me] = vc.pkt.id
                g.last_move[vc.pkt.id] = vc.pkt.last_move
                o = vc.out_port
                if vc.state == VC_ACTIVE and vc.out_vc >= 0 and o != LOCAL:
                    feeder[(rt.down[o].id, links[rt.id][o][1], vc.out_vc)] = me
                if not vc.fifo:
                    held.append((me, vc))
                    continue
                if vc.fifo[0].ready > t or o == LOCAL:
                    continue
                if vc.state == VC_ROUTED:
                    lo, hi = net.vc_range(vc.pkt, rt.down_chiplet[o], len(rt.busy[o]))
                    busy = rt.busy[o]
                    if all(busy[v] for v in range(lo, hi)):
                        dp = links[rt.id][o][1]
                        for v in range(lo, hi):
                            g.add(me, (rt.down[o].id, dp, v))
                elif vc.out_vc >= 0 and rt.credits[o][vc.out_vc] <= 0:
                    dp = links[rt.id][o][1]
                    # an empty VC without credits has flits on the wire: no wait
                    if rt.down[o].in_vcs[dp][vc.out_vc].fifo:
                        g.add(me, (rt.down[o].id, dp, vc.out_vc))
    for b, rcb in net.rcbs.items():
        rt = net.routers[b]
        dp = links[b][TSV][1]
        down = rt.down[TSV]
        for i in range(rcb.capacity):
            pkt = rcb.owner[i]
            if pkt is None:
                continue
            me = ("rcb", b, i)
            g.owner[me] = pkt.id
            g.last_move[pkt.id] = pkt.last_move
            v = rcb.out_vc[i]
            if v >= 0:
                feeder[(down.id, dp, v)] = me
            q = rcb.fifos[i]
            if not q or q[0].ready > t:
                continue
            if v < 0:
                lo, hi = net.vc_range(pkt, down.chiplet, len(rt.busy[TSV]))
                if all(rt.busy[TSV][k] for k in range(lo, hi)):
                    for k in range(lo, hi):
                        g.add(me, (down.id, dp, k))
            elif rt.credits[TSV][v] <= 0 and down.in_vcs[dp][v].fifo:
                g.add(me, (down.id, dp, v))
    # an allocated VC whose flits are still upstream waits on its feeder
    for me, vc in held:
        src = feeder.get(me)
        if src is not None:
            g.add(me, src)
    # allocated-but-empty downstream VCs not yet seen as occupied
    for target, src in feeder.items():
        if target not in g.owner and src in g.owner:
            g.owner[target] = g.owner[src]
            g.add(target, src)
    return g


def check_deadlock(history: Sequence[WaitForGraph], window: int) -> Tuple[Verdict, Optional[FrozenSet]]:
    """DEADLOCK iff some cycle (same vertex set) is present in every
    snapshot of the last ``window`` cycles and none of its packets moved a
    flit during that window."""
    if not history:
        return Verdict.LIVE, None
    last = history[-1]
    since = last.time - window
    if history[0].time > since:
        return Verdict.LIVE, None
    span = [s for s in history if s.time >= since]
    later = [set(s.cycles()) for s in span]
    for comp in last.cycles():
        if not all(comp in cs for cs in later):
            continue
        pk = last.packets_of(comp)
        if all(last.last_move.get(p, -1) < since for p in pk):
            return Verdict.DEADLOCK, comp
    return Verdict.LIVE, None


class Watchdog:
    """Samples the wait-for graph periodically and tracks persistent cycles.

    Equivalent to :func:`check_deadlock` over the full snapshot history but
    keeps only first-seen times per cycle.
    """

    def __init__(self, sample_period: int = 100, window: int = 10_000, starvation_window: int = 10_000) -> None:
        self.sample_period = sample_period
        self.window = window
        self.starvation_window = starvation_window
        self.next_sample = 0
        self._seen: Dict[FrozenSet, int] = {}
        self.verdict = Verdict.LIVE
        self.cycle_channels: Optional[List] = None
        self.starved: List[int] = []
        self.samples = 0

    def sample(self, net: Network) -> Verdict:
        t = net.now
        self.next_sample = t + self.sample_period
        self.samples += 1
        if self.verdict == Verdict.DEADLOCK:
            self.next_sample = 1 << 62
            return self.verdict
        g = snapshot_wfg(net)
        comps = g.cycles()
        seen = {}
        for comp in comps:
            first = self._seen.get(comp, t)
            seen[comp] = first
            if t - first >= self.window:
                pk = g.packets_of(comp)
                if all(g.last_move.get(p, -1) < first for p in pk):
                    self.verdict = Verdict.DEADLOCK
                    sub = g.graph().subgraph(comp)
                    self.cycle_channels = [e[0] for e in nx.find_cycle(sub)]
                    return self.verdict
        self._seen = seen
        if self.verdict == Verdict.LIVE and self.starvation_window:
            for pkt in net.alive.values():
                if pkt.kind != 0 or pkt.t_inject < 0:
                    continue
                # moves made by attempts that were later dropped do not count
                since = pkt.t_inject if pkt.stage == 0 and pkt.retries else max(pkt.last_move, pkt.t_inject)
                if t - since > self.starvation_window:
                    self.verdict = Verdict.STARVATION
                    self.starved.append(pkt.id)
                    break
        return self.verdict

    def report(self) -> str:
        if self.verdict == Verdict.DEADLOCK:
            return "DEADLOCK " + " -> ".join(map(str, self.cycle_channels or []))
        return self.verdict.value
