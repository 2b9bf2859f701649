"""Flit-level cycle engine.

Routers are input-queued with virtual channels and a four-stage pipeline
(BW/RC, VA, SA, ST) followed by a one-cycle link.  Flow control is
credit-based.  Timing, for a HEAD written into an input VC at cycle ``c``:

* VA at ``c + 1``, SA at ``c + 2`` (at the earliest);
* a flit winning SA at ``s`` frees its slot at once; the credit is usable
  upstream at ``s + 1``;
* it reaches the next router's input VC at ``s + 3`` (ST at ``s + 1``,
  link at ``s + 2``), or is consumed by the local NI at ``s + 2``.

Outbound flits at their egress boundary skip VA and go straight from BW
to SA into the rc_buffer (Remote Control).  Everything inside one cycle
only reads state produced in earlier cycles, so the per-router processing
order does not matter; routers are still visited in id order so runs are
reproducible.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Tuple

from .baselines.itb import ItbStation
from .baselines.vcsep import vcsep_vc_range
from .rc import HardFault, OpicSystem, RcBuffer
from .routing import Leg, Routing
from .topology import INTERPOSER, LOCAL, TSV, RoutingPolicy, SocTopology


class Scheme(str, Enum):
    NONE = "NONE"
    RC = "RC"
    MTR = "MTR"
    VCSEP = "VCSEP"
    ITB = "ITB"


DATA, ACK, NACK = 0, 1, 2
KIND_NAMES = ("DATA", "ACK", "NACK")

VC_IDLE, VC_ROUTED, VC_ACTIVE = 0, 1, 2


class Packet:
    __slots__ = (
        "id", "src", "dst", "flits", "kind", "outbound", "src_chiplet", "dst_chiplet",
        "egress", "ingress", "ing_router", "ing_port", "t_created", "t_request",
        "t_grant", "t_inject", "t_delivered", "retries", "measured", "stage",
        "last_move", "token", "requested", "ref", "accept",
    )

    def __init__(self, pid: int, src: int, dst: int, flits: int, kind: int = DATA) -> None:
        self.id = pid
        self.src = src
        self.dst = dst
        self.flits = flits
        self.kind = kind
        self.outbound = False
        self.src_chiplet = self.dst_chiplet = 0
        self.egress = self.ingress = self.ing_router = self.ing_port = -1
        self.t_created = self.t_request = self.t_grant = self.t_inject = self.t_delivered = -1
        self.retries = 0
        self.measured = False
        # ITB: 0 = heading to the egress station, 1 = past it
        self.stage = 1
        self.last_move = -1
        self.token = False
        self.requested = False
        self.ref: Optional[Packet] = None  # ACK/NACK: packet being answered
        self.accept = False

    def __repr__(self) -> str:
        return f"Packet({self.id}, {self.src}->{self.dst}, {self.flits}f, {KIND_NAMES[self.kind]})"


class Flit:
    __slots__ = ("pkt", "seq", "head", "tail", "ready", "arrived")

    def __init__(self, pkt: Packet, seq: int) -> None:
        self.pkt = pkt
        self.seq = seq
        self.head = seq == 0
        self.tail = seq == pkt.flits - 1
        self.ready = 0
        self.arrived = 0

    @property
    def kind(self) -> str:
        if self.head and self.tail:
            return "HEAD_TAIL"
        return "HEAD" if self.head else ("TAIL" if self.tail else "BODY")


class InputVC:
    __slots__ = (
        "router", "port", "index", "fifo", "depth", "state", "out_port", "out_vc",
        "rcb_slot", "pkt", "up_credits", "up_busy",
    )

    def __init__(self, router: "Router", port: int, index: int, depth: int) -> None:
        self.router = router
        self.port = port
        self.index = index
        self.fifo: Deque[Flit] = deque()
        self.depth = depth
        self.state = VC_IDLE
        self.out_port = -1
        self.out_vc = -1
        self.rcb_slot = -1
        self.pkt: Optional[Packet] = None
        self.up_credits: List[int] = []
        self.up_busy: List[bool] = []


class Router:
    __slots__ = (
        "id", "chiplet", "nports", "in_vcs", "credits", "busy", "down", "down_vcs",
        "down_chiplet", "nflits", "va_rr", "vc_rr", "sa_in_rr", "sa_out_rr", "rcb",
        "policy", "is_boundary", "stride",
    )

    def __init__(self, rid: int, chiplet: int, nports: int) -> None:
        self.id = rid
        self.chiplet = chiplet
        self.nports = nports
        self.in_vcs: List[List[InputVC]] = [[] for _ in range(nports)]
        self.credits: List[List[int]] = [[] for _ in range(nports)]
        self.busy: List[List[bool]] = [[] for _ in range(nports)]
        self.down: List[Optional["Router"]] = [None] * nports
        self.down_vcs: List[List[InputVC]] = [[] for _ in range(nports)]
        self.down_chiplet = [INTERPOSER] * nports
        self.nflits = 0
        self.va_rr = [0] * nports
        self.vc_rr = [0] * nports
        self.sa_in_rr = [0] * nports
        self.sa_out_rr = [0] * nports
        self.rcb: Optional[RcBuffer] = None
        self.policy = RoutingPolicy.XY
        self.is_boundary = False
        self.stride = 1

    def all_vcs(self):
        for vcs in self.in_vcs:
            yield from vcs


class NetworkInterface:
    __slots__ = (
        "node", "router", "queue", "ctrl", "retry", "credits", "busy", "cur",
        "cur_vc", "cur_seq", "cur_source", "station", "depth",
    )

    def __init__(self, node: int, router: Router, vcs: int, depth: int) -> None:
        self.node = node
        self.router = router
        self.queue: Deque[Packet] = deque()
        self.ctrl: Deque[Packet] = deque()
        self.retry: Deque[Tuple[int, Packet]] = deque()
        self.credits = [depth] * vcs
        self.busy = [False] * vcs
        self.depth = depth
        self.cur: Optional[Packet] = None
        self.cur_vc = -1
        self.cur_seq = 0
        self.cur_source = 0
        self.station: Optional[ItbStation] = None

    def has_work(self) -> bool:
        return bool(
            self.cur is not None or self.queue or self.ctrl or self.retry
            or (self.station is not None and self.station.buffer)
        )


SRC_MAIN, SRC_CTRL, SRC_STATION, SRC_RETRY = 0, 1, 2, 3


@dataclass
class DrainReport:
    cycles: int
    residue_flits: int
    residue_packets: int
    residency: Dict[int, int] = field(default_factory=dict)

    @property
    def drained(self) -> bool:
        return self.residue_flits == 0 and self.residue_packets == 0


class Network:
    """A complete SoC instance: routers, NIs and the selected scheme."""

    def __init__(
        self,
        topo: SocTopology,
        scheme: Scheme = Scheme.NONE,
        routing: Optional[Routing] = None,
        *,
        rc_capacity: int = 4,
        opic_wire_bits: int = 2,
        opic_pipeline: int = 1,
        itb_capacity: int = 4,
        retry_delay: int = 32,
        event_log: bool = False,
        strict: bool = False,
    ) -> None:
        self.topo = topo
        self.scheme = Scheme(scheme)
        self.routing = routing if routing is not None else Routing(topo)
        self.rc = self.scheme == Scheme.RC
        self.itb = self.scheme == Scheme.ITB
        self.vcsep = self.scheme == Scheme.VCSEP
        self.rc_capacity = rc_capacity
        self.retry_delay = retry_delay
        self.strict = strict
        self.now = 0
        self.events: Optional[List[tuple]] = [] if event_log else None
        self._next_pid = 0

        if self.vcsep:
            for r in range(topo.router_count):
                if topo.vc_count_of(r) % 2:
                    raise ValueError("vc_count must be even for VCSEP")

        n = topo.router_count
        self.routers: List[Router] = []
        for r in range(n):
            rt = Router(r, topo.router_chiplet[r], len(topo.links[r]))
            rt.policy = topo.policy_of(r)
            rt.is_boundary = topo.is_boundary(r)
            self.routers.append(rt)
        for rt in self.routers:
            v, d = topo.vc_count_of(rt.id), topo.vc_depth_of(rt.id)
            for p in range(rt.nports):
                if topo.links[rt.id][p] is not None or (p == LOCAL and rt.chiplet != INTERPOSER):
                    rt.in_vcs[p] = [InputVC(rt, p, i, d) for i in range(v)]
            rt.stride = v
        for rt in self.routers:
            for p, link in enumerate(topo.links[rt.id]):
                if link is None:
                    continue
                nb, nip = link
                down = self.routers[nb]
                rt.down[p] = down
                rt.down_chiplet[p] = down.chiplet
                rt.down_vcs[p] = down.in_vcs[nip]
                rt.credits[p] = [vc.depth for vc in down.in_vcs[nip]]
                rt.busy[p] = [False] * len(down.in_vcs[nip])
                for vc in down.in_vcs[nip]:
                    vc.up_credits = rt.credits[p]
                    vc.up_busy = rt.busy[p]
            if rt.chiplet != INTERPOSER:
                rt.down_chiplet[LOCAL] = rt.chiplet

        self.nis: List[NetworkInterface] = []
        for node in range(topo.node_count):
            rt = self.routers[node]
            vcs = rt.in_vcs[LOCAL]
            ni = NetworkInterface(node, rt, len(vcs), topo.vc_depth_of(node))
            for vc in vcs:
                vc.up_credits = ni.credits
                vc.up_busy = ni.busy
            self.nis.append(ni)

        self.opic: Optional[OpicSystem] = None
        self.rcbs: Dict[int, RcBuffer] = {}
        if self.rc:
            self.opic = OpicSystem(topo, rc_capacity, opic_wire_bits, opic_pipeline, self._on_grant)
            for ci in range(len(topo.chiplets)):
                for b in topo.boundaries[ci]:
                    rcb = RcBuffer(b, rc_capacity)
                    self.routers[b].rcb = rcb
                    self.rcbs[b] = rcb
            self._rcb_list = [self.rcbs[b] for b in sorted(self.rcbs)]
            # packets holding a token until their HEAD enters the RCB
            self._in_flight_to_rcb: Dict[int, int] = {b: 0 for b in self.rcbs}
            self._tokens_held: Dict[int, int] = {b: 0 for b in self.rcbs}
        self.stations: Dict[int, ItbStation] = {}
        if self.itb:
            for ci in range(len(topo.chiplets)):
                for b in topo.boundaries[ci]:
                    st = ItbStation(b, itb_capacity)
                    self.stations[b] = st
                    self.nis[b].station = st

        # time-indexed buckets
        self._arrivals: List[list] = [[] for _ in range(4)]
        self._credits: List[list] = [[], []]
        self._ejects: List[list] = [[] for _ in range(4)]
        self._head_changed: List[NetworkInterface] = []
        self._idle_streak = 0

        # counters
        self.created = 0
        self.injected_flits = 0
        self.ejected_flits = 0
        self.flits_in_routers = 0
        self.delivered_packets = 0
        self.delivered_ids: set = set()
        self.duplicates = 0
        self.itb_drops = 0
        self.itb_nacks = 0
        self.itb_acks = 0
        self.itb_retransmits = 0
        self.vcsep_violations = 0
        self.permit_violations = 0
        self.max_queue = 0
        self.on_deliver = None  # callback(pkt, t)
        self.alive: Dict[int, Packet] = {}

        # metric accumulators; enabled by the phase driver
        self.collect = False
        self.window = (0, 0)
        self.residency_sum = [0] * n
        self.residency_cnt = [0] * n
        self.link_busy: Dict[Tuple[int, int], Dict[int, int]] = {}
        self.link_window = 10_000

    # ------------------------------------------------------------------
    # packet creation / NI queue
    # ------------------------------------------------------------------
    def new_packet(self, src: int, dst: int, flits: int, kind: int = DATA) -> Packet:
        topo = self.topo
        if not (0 <= src < topo.node_count and 0 <= dst < topo.node_count):
            raise ValueError(f"node out of range: {src}->{dst}")
        pkt = Packet(self._next_pid, src, dst, flits, kind)
        self._next_pid += 1
        pkt.src_chiplet = topo.router_chiplet[src]
        pkt.dst_chiplet = topo.router_chiplet[dst]
        pkt.outbound = pkt.src_chiplet != pkt.dst_chiplet
        if pkt.outbound:
            pkt.egress = self.routing.egress(src)
            pkt.ingress = self.routing.ingress(pkt.egress, dst)
            pkt.ing_router = topo.tsv_router[pkt.ingress]
            pkt.ing_port = topo.tsv_port[pkt.ingress]
            if self.itb:
                pkt.stage = 0
        return pkt

    def ni_enqueue(self, pkt: Packet, now: Optional[int] = None) -> None:
        """Append a packet to its source NI's FIFO injection queue."""
        t = self.now if now is None else now
        pkt.t_created = t
        ni = self.nis[pkt.src]
        ni.queue.append(pkt)
        self.created += 1
        self.alive[pkt.id] = pkt
        if len(ni.queue) == 1:
            self._head_changed.append(ni)
        if len(ni.queue) > self.max_queue:
            self.max_queue = len(ni.queue)
        if self.events is not None:
            self.events.append((t, "create", pkt.id, pkt.src, pkt.dst))

    def send(self, src: int, dst: int, flits: int, now: Optional[int] = None) -> Packet:
        pkt = self.new_packet(src, dst, flits)
        self.ni_enqueue(pkt, now)
        return pkt

    # ------------------------------------------------------------------
    # routing helpers
    # ------------------------------------------------------------------
    def _target(self, pkt: Packet, rt: Router) -> Tuple[int, int, int]:
        """(target router, exit port, leg) for a packet sitting at ``rt``."""
        c = rt.chiplet
        if c == INTERPOSER:
            return pkt.ing_router, pkt.ing_port, Leg.INTERPOSER
        if not pkt.outbound:
            return pkt.dst, LOCAL, Leg.INTRA
        if c == pkt.dst_chiplet:
            return pkt.dst, LOCAL, Leg.IN
        if pkt.stage == 0:
            return pkt.egress, LOCAL, Leg.OUT
        return pkt.egress, TSV, Leg.OUT

    def vc_range(self, pkt: Packet, down_chiplet: int, nvc: int) -> Tuple[int, int]:
        """VCs a packet may take in a router of ``down_chiplet``."""
        if not self.vcsep:
            return 0, nvc
        return vcsep_vc_range(pkt.outbound, pkt.dst_chiplet, down_chiplet, nvc)

    def _route(self, rt: Router, in_port: int, pkt: Packet) -> int:
        target, exit_port, leg = self._target(pkt, rt)
        rid = rt.id
        routing = self.routing
        if rid == target and not routing.restricted:
            return exit_port
        pol = rt.policy
        if pol == RoutingPolicy.ADAPTIVE_XY_YX and rid != target:
            a = routing.port(rid, in_port, target, exit_port, leg, True)
            b = routing.port(rid, in_port, target, exit_port, leg, False)
            if a == b:
                return a
            ca, cb = rt.credits[a], rt.credits[b]
            lo, hi = self.vc_range(pkt, rt.down_chiplet[a], len(ca))
            sa = sum(ca[lo:hi])
            lo, hi = self.vc_range(pkt, rt.down_chiplet[b], len(cb))
            sb = sum(cb[lo:hi])
            return b if sb > sa else a
        return routing.port(rid, in_port, target, exit_port, leg, pol != RoutingPolicy.YX)

    # ------------------------------------------------------------------
    # flit arrival at an input VC (BW + route computation)
    # ------------------------------------------------------------------
    def _arrive(self, rt: Router, port: int, v: int, f: Flit, t: int) -> None:
        vc = rt.in_vcs[port][v]
        if len(vc.fifo) >= vc.depth:
            raise HardFault(f"VC overflow at router {rt.id} port {port} vc {v}")
        vc.fifo.append(f)
        rt.nflits += 1
        self.flits_in_routers += 1
        f.arrived = t
        f.ready = t + 1
        pkt = f.pkt
        if self.vcsep:
            lo, hi = self.vc_range(pkt, rt.chiplet, len(rt.in_vcs[port]))
            if not lo <= v < hi:
                self.vcsep_violations += 1
        if f.head:
            if vc.state != VC_IDLE:
                raise HardFault(f"HEAD into busy VC at router {rt.id} port {port} vc {v}")
            vc.pkt = pkt
            out = self._route(rt, port, pkt)
            vc.out_port = out
            vc.out_vc = -1
            if rt.rcb is not None and out == TSV:
                # outbound at its egress: BW -> SA directly into the RCB
                vc.state = VC_ACTIVE
            else:
                vc.state = VC_ROUTED
        elif vc.pkt is not pkt:
            raise HardFault(f"flit interleaving at router {rt.id} port {port} vc {v}")

    # ------------------------------------------------------------------
    # OPIC grant callback
    # ------------------------------------------------------------------
    def _on_grant(self, node: int, t: int) -> None:
        ni = self.nis[node]
        pkt = ni.queue[0] if ni.queue else None
        if pkt is None or not pkt.requested or pkt.token:
            raise HardFault(f"unexpected OPIC grant at node {node}")
        pkt.token = True
        pkt.t_grant = t
        self._tokens_held[pkt.egress] += 1

    # ------------------------------------------------------------------
    # one cycle
    # ------------------------------------------------------------------
    def step(self) -> int:
        """Advance one cycle; returns the number of state changes."""
        t = self.now
        act = 0
        ev = self.events

        # credits returned at t-1 become usable now
        bucket = self._credits[t & 1]
        if bucket:
            for credits, busy, v, free in bucket:
                credits[v] += 1
                if free:
                    busy[v] = False
            act += len(bucket)
            bucket.clear()

        bucket = self._arrivals[t & 3]
        if bucket:
            arrive = self._arrive
            for rt, port, v, f in bucket:
                arrive(rt, port, v, f, t)
            act += len(bucket)
            bucket.clear()

        bucket = self._ejects[t & 3]
        if bucket:
            for node, f in bucket:
                self._eject(node, f, t)
            act += len(bucket)
            bucket.clear()

        # retransmissions that matured
        # (retry queues are checked lazily in _ni_inject)

        # new heads: stamp request time and issue OPIC requests
        if self._head_changed:
            act += len(self._head_changed)
            for ni in self._head_changed:
                if not ni.queue:
                    continue
                pkt = ni.queue[0]
                if pkt.t_request >= 0:
                    continue
                pkt.t_request = t
                if self.rc and pkt.outbound:
                    pkt.requested = True
                    self.opic.request(ni.node)
                else:
                    pkt.t_grant = t
            self._head_changed = []

        if self.opic is not None:
            act += self.opic.cycle(t)

        for ni in self.nis:
            if ni.cur is not None or ni.queue or ni.ctrl or ni.retry or (
                ni.station is not None and ni.station.buffer
            ):
                act += self._ni_inject(ni, t)

        if self.flits_in_routers:
            for rt in self.routers:
                if rt.nflits:
                    act += self._router_cycle(rt, t)

        if self.rc:
            for rcb in self._rcb_list:
                if rcb.occupied:
                    act += self._rcb_cycle(rcb, t)

        if self.strict:
            self.check_invariants()
        self.now = t + 1
        if act:
            self._idle_streak = 0
        else:
            self._idle_streak += 1
        return act

    # ------------------------------------------------------------------
    # NI injection
    # ------------------------------------------------------------------
    def _free_local_vc(self, ni: NetworkInterface, pkt: Packet) -> int:
        lo, hi = self.vc_range(pkt, ni.router.chiplet, len(ni.busy))
        for v in range(lo, hi):
            if not ni.busy[v] and ni.credits[v] > 0:
                return v
        return -1

    def _ni_inject(self, ni: NetworkInterface, t: int) -> int:
        if ni.cur is None:
            pkt, source, v = self._ni_pick(ni, t)
            if pkt is None:
                return 1 if source else 0
            ni.busy[v] = True
            ni.cur, ni.cur_vc, ni.cur_seq, ni.cur_source = pkt, v, 0, source
            if source == SRC_MAIN:
                ni.queue.popleft()
                if ni.queue:
                    self._head_changed.append(ni)
                pkt.t_inject = t
                if pkt.token:
                    self._tokens_held[pkt.egress] -= 1
                    self._in_flight_to_rcb[pkt.egress] += 1
            elif source == SRC_CTRL:
                ni.ctrl.popleft()
                pkt.t_inject = t
            elif source == SRC_STATION:
                ni.station.buffer.popleft()
                ni.station.outgoing += 1
            else:
                ni.retry.popleft()
            if self.events is not None:
                self.events.append((t, "inject", pkt.id, ni.node, source))
        elif ni.credits[ni.cur_vc] <= 0:
            return 0
        pkt = ni.cur
        v = ni.cur_vc
        f = Flit(pkt, ni.cur_seq)
        ni.credits[v] -= 1
        self.injected_flits += 1
        pkt.last_move = t
        self._arrive(ni.router, LOCAL, v, f, t)
        ni.cur_seq += 1
        if f.tail:
            if ni.cur_source == SRC_STATION:
                ni.station.outgoing -= 1
            ni.cur = None
        return 1

    def _ni_pick(self, ni: NetworkInterface, t: int):
        """Next packet to start injecting, by priority: control replies,
        station re-injection, retransmissions, then the main queue."""
        if ni.ctrl:
            pkt = ni.ctrl[0]
            v = self._free_local_vc(ni, pkt)
            if v >= 0:
                return pkt, SRC_CTRL, v
        st = ni.station
        if st is not None:
            pkt = st.head(t)
            if pkt is not None:
                v = self._free_local_vc(ni, pkt)
                if v >= 0:
                    return pkt, SRC_STATION, v
        if ni.retry and ni.retry[0][0] <= t:
            pkt = ni.retry[0][1]
            v = self._free_local_vc(ni, pkt)
            if v >= 0:
                return pkt, SRC_RETRY, v
        if ni.queue:
            pkt = ni.queue[0]
            if pkt.t_request < 0:
                return None, 0, -1  # becomes head next cycle
            if self.rc and pkt.outbound and not pkt.token:
                return None, 0, -1
            if self.itb and pkt.stage == 0 and pkt.src == pkt.egress:
                # sourced at the boundary: straight into the local station
                if st.occupancy < st.capacity:
                    ni.queue.popleft()
                    if ni.queue:
                        self._head_changed.append(ni)
                    pkt.t_inject = t
                    pkt.stage = 1
                    pkt.last_move = t
                    st.push_local(pkt, t + 1)
                    return None, 1, -1
                return None, 0, -1
            v = self._free_local_vc(ni, pkt)
            if v >= 0:
                return pkt, SRC_MAIN, v
        return None, 0, -1

    # ------------------------------------------------------------------
    # router: VA then SA
    # ------------------------------------------------------------------
    def _router_cycle(self, rt: Router, t: int) -> int:
        act = 0
        nports = rt.nports
        in_vcs = rt.in_vcs
        # VA: collect requests per output port
        requests = None
        for p in range(nports):
            for vc in in_vcs[p]:
                if vc.state == VC_ROUTED and vc.fifo and vc.fifo[0].ready <= t:
                    if requests is None:
                        requests = {}
                    requests.setdefault(vc.out_port, []).append(vc)
        if requests:
            for o in sorted(requests):
                reqs = requests[o]
                if o == LOCAL:
                    for vc in reqs:
                        vc.state = VC_ACTIVE
                        vc.out_vc = 0
                        vc.fifo[0].ready = t + 1
                        act += 1
                    continue
                busy = rt.busy[o]
                nvc = len(busy)
                stride = rt.stride
                nin = nports * stride
                if len(reqs) > 1:
                    start = rt.va_rr[o]
                    reqs.sort(key=lambda x: (x.port * stride + x.index - start) % nin)
                dchip = rt.down_chiplet[o]
                for vc in reqs:
                    lo, hi = self.vc_range(vc.pkt, dchip, nvc)
                    span = hi - lo
                    rr = rt.vc_rr[o]
                    got = -1
                    for j in range(span):
                        cand = lo + (rr + j) % span
                        if not busy[cand]:
                            got = cand
                            break
                    if got < 0:
                        continue
                    busy[got] = True
                    vc.out_vc = got
                    vc.state = VC_ACTIVE
                    vc.fifo[0].ready = t + 1
                    rt.vc_rr[o] = (got - lo + 1) % span
                    rt.va_rr[o] = (vc.port * stride + vc.index + 1) % nin
                    act += 1
        # SA: input-first separable, round robin at both stages
        winners = None
        for p in range(nports):
            vcs = in_vcs[p]
            nv = len(vcs)
            if not nv:
                continue
            start = rt.sa_in_rr[p]
            for k in range(nv):
                vc = vcs[(start + k) % nv]
                if vc.state != VC_ACTIVE or not vc.fifo or vc.fifo[0].ready > t:
                    continue
                o = vc.out_port
                if o != LOCAL and vc.out_vc >= 0 and rt.credits[o][vc.out_vc] <= 0:
                    continue
                if winners is None:
                    winners = {}
                winners.setdefault(o, []).append(vc)
                break
        if winners:
            for o in sorted(winners):
                cands = winners[o]
                if len(cands) > 1:
                    start = rt.sa_out_rr[o]
                    cands.sort(key=lambda x: (x.port - start) % nports)
                vc = cands[0]
                rt.sa_out_rr[o] = (vc.port + 1) % nports
                rt.sa_in_rr[vc.port] = (vc.index + 1) % len(in_vcs[vc.port])
                self._traverse(rt, vc, t)
                act += 1
        return act

    def _traverse(self, rt: Router, vc: InputVC, t: int) -> None:
        f = vc.fifo.popleft()
        pkt = f.pkt
        rt.nflits -= 1
        self.flits_in_routers -= 1
        pkt.last_move = t
        self._credits[(t + 1) & 1].append((vc.up_credits, vc.up_busy, vc.index, f.tail))
        o = vc.out_port
        if o == LOCAL:
            self._ejects[(t + 2) & 3].append((rt.id, f))
            link_t = -1
        elif vc.out_vc < 0:
            # outbound flit entering the rc_buffer
            rcb = rt.rcb
            if f.head:
                vc.rcb_slot = rcb.admit_head(pkt)
                self._in_flight_to_rcb[rt.id] -= 1
            f.ready = t + 2
            rcb.append(vc.rcb_slot, f)
            link_t = -1
        else:
            cr = rt.credits[o]
            cr[vc.out_vc] -= 1
            if cr[vc.out_vc] < 0:
                raise HardFault(f"credit underflow at router {rt.id} port {o}")
            down = rt.down[o]
            self._arrivals[(t + 3) & 3].append(
                (down, self.topo.links[rt.id][o][1], vc.out_vc, f)
            )
            link_t = t + 2
        if self.collect and (pkt.measured or link_t >= 0):
            self._record_hop(rt.id, o, f, t + 2, link_t)
        if self.events is not None:
            self.events.append((t, "flit", pkt.id, rt.id, o, f.seq))
        if f.tail:
            vc.state = VC_IDLE
            vc.pkt = None
            vc.out_port = vc.out_vc = vc.rcb_slot = -1

    def _record_hop(self, rid: int, o: int, f: Flit, leave: int, link_t: int) -> None:
        if f.pkt.measured:
            self.residency_sum[rid] += leave - f.arrived
            self.residency_cnt[rid] += 1
        lo, hi = self.window
        if link_t >= 0 and lo <= link_t < hi:
            w = (link_t - lo) // self.link_window
            d = self.link_busy.setdefault((rid, o), {})
            d[w] = d.get(w, 0) + 1

    # ------------------------------------------------------------------
    # rc_buffer drain toward the interposer
    # ------------------------------------------------------------------
    def _rcb_cycle(self, rcb: RcBuffer, t: int) -> int:
        rt = self.routers[rcb.router]
        nvc = len(rt.busy[TSV])
        down = rt.down[TSV]
        dport = self.topo.links[rt.id][TSV][1]
        dchip = down.chiplet

        def vc_range(pkt):
            return self.vc_range(pkt, dchip, nvc)

        def send(f, v, tt):
            f.pkt.last_move = tt
            self._arrivals[(tt + 1) & 3].append((down, dport, v, f))
            if self.collect:
                if f.pkt.measured:
                    self.residency_sum[rt.id] += tt - f.arrived
                    self.residency_cnt[rt.id] += 1
                lo, hi = self.window
                if lo <= tt < hi:
                    w = (tt - lo) // self.link_window
                    d = self.link_busy.setdefault((rt.id, TSV), {})
                    d[w] = d.get(w, 0) + 1
            if self.events is not None:
                self.events.append((tt, "rcb", f.pkt.id, rt.id, v, f.seq))

        act, released = rcb.cycle(t, rt.credits[TSV], rt.busy[TSV], vc_range, send)
        if released is not None:
            self.opic.release(rt.id)
        return act

    # ------------------------------------------------------------------
    # ejection, ITB station protocol, delivery
    # ------------------------------------------------------------------
    def _eject(self, node: int, f: Flit, t: int) -> None:
        pkt = f.pkt
        self.ejected_flits += 1
        pkt.last_move = t
        if self.itb and pkt.stage == 0 and pkt.kind == DATA:
            st = self.stations[node]
            if f.head:
                pkt.accept = st.try_reserve()
            if f.tail:
                if pkt.accept:
                    pkt.stage = 1
                    st.commit(pkt, t + 1)
                    self._control(node, pkt, ACK, t)
                else:
                    st.dropped += 1
                    self.itb_drops += 1
                    self._control(node, pkt, NACK, t)
            return
        if not f.tail:
            return
        if pkt.kind != DATA:
            ref = pkt.ref
            if pkt.kind == ACK:
                self.itb_acks += 1
            else:
                self.itb_nacks += 1
                ref.retries += 1
                self.nis[ref.src].retry.append((t + self.retry_delay, ref))
                self.itb_retransmits += 1
            self.alive.pop(pkt.id, None)
            return
        if pkt.id in self.delivered_ids:
            self.duplicates += 1
            return
        self.delivered_ids.add(pkt.id)
        pkt.t_delivered = t
        self.delivered_packets += 1
        self.alive.pop(pkt.id, None)
        if self.events is not None:
            self.events.append((t, "deliver", pkt.id, node))
        if self.on_deliver is not None:
            self.on_deliver(pkt, t)

    def _control(self, node: int, ref: Packet, kind: int, t: int) -> None:
        c = self.new_packet(node, ref.src, 1, kind)
        c.ref = ref
        c.t_created = c.t_request = c.t_grant = t
        self.alive[c.id] = c
        self.nis[node].ctrl.append(c)

    # ------------------------------------------------------------------
    # driving helpers
    # ------------------------------------------------------------------
    def quiet(self) -> bool:
        """True when nothing is in flight anywhere (timers excluded)."""
        if self.flits_in_routers or self._head_changed:
            return False
        for b in self._arrivals:
            if b:
                return False
        for b in self._ejects:
            if b:
                return False
        for b in self._credits:
            if b:
                return False
        return True

    def frozen(self) -> bool:
        """No state change for long enough that only external events
        (new traffic, retry timers) can change anything."""
        return self._idle_streak >= 4 and not self._head_changed

    def next_timer(self) -> Optional[int]:
        best = None
        for ni in self.nis:
            if ni.retry:
                w = ni.retry[0][0]
                if best is None or w < best:
                    best = w
        return best

    def skip_to(self, t: int) -> None:
        """Jump a frozen network forward to cycle ``t``."""
        k = t - self.now
        if k <= 0:
            return
        if self.opic is not None:
            self.opic.idle_advance(k)
        self.now = t

    def residue(self) -> Tuple[int, int]:
        """(flits inside the network, packets not yet delivered)."""
        flits = self.flits_in_routers
        flits += sum(len(b) for b in self._arrivals)
        flits += sum(len(b) for b in self._ejects)
        for rcb in self.rcbs.values():
            flits += rcb.flit_count()
        pk = sum(1 for p in self.alive.values() if p.kind == DATA)
        ctrl = sum(1 for p in self.alive.values() if p.kind != DATA)
        return flits, pk + ctrl

    def drain(self, max_cycles: int) -> DrainReport:
        """Run with no new traffic until empty or ``max_cycles`` pass."""
        start = self.now
        end = start + max_cycles
        while self.now < end:
            flits, pk = self.residue()
            if flits == 0 and pk == 0:
                break
            if self.frozen():
                nt = self.next_timer()
                if nt is None or nt >= end:
                    self.skip_to(end)
                    break
                if nt > self.now:
                    self.skip_to(nt)
            self.step()
        flits, pk = self.residue()
        occ = {}
        for rt in self.routers:
            if rt.nflits:
                occ[rt.id] = rt.nflits
        return DrainReport(self.now - start, flits, pk, occ)

    # ------------------------------------------------------------------
    # invariants
    # ------------------------------------------------------------------
    def check_invariants(self) -> None:
        """Credit, flit and permit conservation; raises HardFault."""
        t = self.now
        in_flight: Dict[Tuple[int, int, int], int] = {}
        for b in self._arrivals:
            for rt, port, v, f in b:
                key = (rt.id, port, v)
                in_flight[key] = in_flight.get(key, 0) + 1
        returning: Dict[int, int] = {}
        for b in self._credits:
            for credits, busy, v, free in b:
                key = (id(credits), v)
                returning[key] = returning.get(key, 0) + 1
        total_router = 0
        for rt in self.routers:
            for p, vcs in enumerate(rt.in_vcs):
                for vc in vcs:
                    total_router += len(vc.fifo)
                    held = vc.up_credits[vc.index]
                    pend = in_flight.get((rt.id, p, vc.index), 0)
                    ret = returning.get((id(vc.up_credits), vc.index), 0)
                    if held + len(vc.fifo) + pend + ret != vc.depth:
                        raise HardFault(
                            f"credit conservation broken at router {rt.id} port {p} vc {vc.index}"
                            f" (cycle {t}): {held}+{len(vc.fifo)}+{pend}+{ret} != {vc.depth}"
                        )
        if total_router != self.flits_in_routers:
            raise HardFault("router flit count drifted")
        in_net = self.flits_in_routers + sum(len(b) for b in self._arrivals)
        in_net += sum(len(b) for b in self._ejects)
        in_net += sum(r.flit_count() for r in self.rcbs.values())
        if self.injected_flits != self.ejected_flits + in_net:
            raise HardFault("flit conservation broken")
        if self.rc:
            for b, rcb in self.rcbs.items():
                total = (
                    self.opic.permits_in_tree(b)
                    + self._tokens_held[b]
                    + self._in_flight_to_rcb[b]
                    + rcb.occupied
                )
                if total != self.rc_capacity:
                    self.permit_violations += 1
                    raise HardFault(
                        f"permit conservation broken at boundary {b} (cycle {t}): {total}"
                    )
