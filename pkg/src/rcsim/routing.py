"""Composed SoC routing: per-leg targets, turn-restricted tables, paths.

A packet crossing chiplets travels three legs, each a routing problem
inside one sub-network: source chiplet to its egress boundary (leaving
through the TSV), interposer to the router hosting the ingress TSV, and
ingress boundary to the destination.  Intra-chiplet packets use a single
leg.
"""

from __future__ import annotations

from collections import deque
from enum import IntEnum
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from .topology import (
    E,
    INTERPOSER,
    LOCAL,
    N,
    OPPOSITE,
    S,
    TSV,
    W,
    RoutingPolicy,
    SocTopology,
    TopologyError,
    dor_port,
    min_ingress,
)


class Leg(IntEnum):
    INTRA = 0
    OUT = 1
    INTERPOSER = 2
    IN = 3


LEG_NAMES = {"intra": Leg.INTRA, "out": Leg.OUT, "interposer": Leg.INTERPOSER, "in": Leg.IN}

# (router, in_port, out_port, leg)
Turn = Tuple[int, int, int, int]
Channel = Tuple[int, int]  # (router, out_port)


def leg_at(topo: SocTopology, router: int, src: int, dst: int) -> Leg:
    rc = topo.router_chiplet[router]
    if rc == INTERPOSER:
        return Leg.INTERPOSER
    cs, cd = topo.router_chiplet[src], topo.router_chiplet[dst]
    if cs == cd:
        return Leg.INTRA
    return Leg.OUT if rc == cs else Leg.IN


class Routing:
    """Deterministic routing relation with optional forbidden turns.

    Without restrictions the chiplet/interposer policy (XY or YX) is used
    directly and egress follows OPIC tree membership.  With restrictions,
    each hop takes a minimal path in the restricted turn graph, preferring
    the policy's own port, then the lowest port index; egress becomes the
    nearest boundary still reachable under the restrictions.
    """

    def __init__(self, topo: SocTopology, restrictions: Iterable[Turn] = ()) -> None:
        self.topo = topo
        self.forbidden: FrozenSet[Turn] = frozenset(restrictions)
        self.restricted = bool(self.forbidden)
        n = topo.router_count
        self.xy: List[Dict[int, int]] = [dict() for _ in range(n)]
        self.yx: List[Dict[int, int]] = [dict() for _ in range(n)]
        for r in range(n):
            ci = topo.router_chiplet[r]
            base = r - topo.router_local[r]
            size = (
                topo.interposer_width * topo.interposer_height
                if ci == INTERPOSER
                else topo.chiplets[ci].size
            )
            for t in range(base, base + size):
                if t != r:
                    self.xy[r][t] = dor_port(topo, r, t, True)
                    self.yx[r][t] = dor_port(topo, r, t, False)
        self._dist_cache: Dict[Tuple[int, int, int], Dict[Tuple[int, int], int]] = {}
        self._egress: Dict[int, int] = {}
        self._ingress: Dict[Tuple[int, int], int] = {}

    # -- boundary choice ------------------------------------------------
    def egress(self, src: int) -> int:
        e = self._egress.get(src)
        if e is None:
            topo = self.topo
            if not self.restricted:
                e = topo.egress_of[src]
            else:
                best = None
                for b in topo.boundaries[topo.router_chiplet[src]]:
                    d = self.distance(src, LOCAL, b, TSV, Leg.OUT)
                    if d is not None and (best is None or (d, b) < best):
                        best = (d, b)
                if best is None:
                    raise TopologyError(f"node {src} cannot leave its chiplet under restrictions")
                e = best[1]
            self._egress[src] = e
        return e

    def ingress(self, egress: int, dst: int) -> int:
        key = (egress, dst)
        b = self._ingress.get(key)
        if b is None:
            topo = self.topo
            if not self.restricted:
                b = min_ingress(topo, egress, dst)
            else:
                def ih(e: int, cand: int) -> Optional[int]:
                    ir, tr = topo.tsv_router[e], topo.tsv_router[cand]
                    return self.distance(ir, topo.tsv_port[e], tr, topo.tsv_port[cand], Leg.INTERPOSER)

                def ch(cand: int, d: int) -> Optional[int]:
                    return self.distance(cand, TSV, d, LOCAL, Leg.IN)

                b = min_ingress(topo, egress, dst, ih, ch)
            self._ingress[key] = b
        return b

    # -- per-hop decisions ------------------------------------------------
    def port(self, r: int, in_port: int, target: int, exit_port: int, leg: int, x_first: bool = True) -> int:
        """Output port at ``r`` for a packet heading to ``(target, exit_port)``."""
        if not self.restricted:
            if r == target:
                return exit_port
            return self.xy[r][target] if x_first else self.yx[r][target]
        if r == target and (r, in_port, exit_port, leg) not in self.forbidden:
            return exit_port
        dist = self._distances(target, exit_port, leg)
        links = self.topo.links[r]
        best = None
        pref = None
        if r != target:
            pref = (self.xy if x_first else self.yx)[r][target]
        for o in (N, S, E, W):
            if links[o] is None or o == in_port or (r, in_port, o, leg) in self.forbidden:
                continue
            d = dist.get((links[o][0], OPPOSITE[o]))
            if d is None:
                continue
            key = (d, o != pref, o)
            if best is None or key < best:
                best = key
        if best is None:
            raise TopologyError(f"router {r} (in {in_port}) cannot reach {target} under restrictions")
        return best[2]

    def distance(self, r: int, in_port: int, target: int, exit_port: int, leg: int) -> Optional[int]:
        """Hops from ``r`` (entered via ``in_port``) until leaving ``target``."""
        if not self.restricted:
            if self.topo.router_chiplet[r] != self.topo.router_chiplet[target]:
                return None
            return self.topo.hops(r, target)
        return self._distances(target, exit_port, leg).get((r, in_port))

    def _distances(self, target: int, exit_port: int, leg: int) -> Dict[Tuple[int, int], int]:
        key = (target, exit_port, leg)
        dist = self._dist_cache.get(key)
        if dist is not None:
            return dist
        topo = self.topo
        forb = self.forbidden
        links = topo.links
        dist = {}
        todo: deque = deque()
        sub = topo.router_chiplet[target]

        def in_ports(r: int) -> List[int]:
            ports = [p for p in (N, S, E, W) if links[r][p] is not None]
            if topo.router_chiplet[r] != INTERPOSER:
                ports.append(LOCAL)
                if len(links[r]) > TSV:
                    ports.append(TSV)
            else:
                ports.extend(range(TSV, len(links[r])))
            return ports

        for ip in in_ports(target):
            if ip != exit_port and (target, ip, exit_port, leg) not in forb:
                dist[(target, ip)] = 0
                todo.append((target, ip))
        while todo:
            r2, ip2 = todo.popleft()
            d = dist[(r2, ip2)]
            if ip2 >= 4:
                continue  # entered from LOCAL/TSV: no in-subnetwork predecessor
            r = links[r2][ip2][0]
            if topo.router_chiplet[r] != sub:
                continue
            o = OPPOSITE[ip2]
            for ip in in_ports(r):
                if ip == o or (r, ip) in dist or (r, ip, o, leg) in forb:
                    continue
                dist[(r, ip)] = d + 1
                todo.append((r, ip))
        self._dist_cache[key] = dist
        return dist

    # -- whole paths ------------------------------------------------------
    def legs(self, src: int, dst: int) -> List[Tuple[int, int, int, int, int]]:
        """[(entry router, entry in-port, target, exit port, leg), ...]."""
        topo = self.topo
        cs, cd = topo.router_chiplet[src], topo.router_chiplet[dst]
        if cs == cd:
            return [(src, LOCAL, dst, LOCAL, Leg.INTRA)]
        e = self.egress(src)
        b = self.ingress(e, dst)
        ir, tr = topo.tsv_router[e], topo.tsv_router[b]
        return [
            (src, LOCAL, e, TSV, Leg.OUT),
            (ir, topo.tsv_port[e], tr, topo.tsv_port[b], Leg.INTERPOSER),
            (b, TSV, dst, LOCAL, Leg.IN),
        ]

    def leg_paths(
        self, entry: int, in_port: int, target: int, exit_port: int, leg: int, policy: RoutingPolicy
    ) -> List[List[Channel]]:
        """All channel sequences of one leg; ADAPTIVE_XY_YX branches over both."""
        out: List[List[Channel]] = []
        links = self.topo.links
        x_first = policy != RoutingPolicy.YX
        adaptive = policy == RoutingPolicy.ADAPTIVE_XY_YX

        def walk(r: int, ip: int, acc: List[Channel]) -> None:
            if len(acc) > 4 * self.topo.router_count:
                raise TopologyError("routing loop detected")
            choices = {self.port(r, ip, target, exit_port, leg, x_first)}
            if adaptive and r != target:
                choices.add(self.port(r, ip, target, exit_port, leg, False))
            for o in sorted(choices):
                step = acc + [(r, o)]
                if o == exit_port and r == target:
                    out.append(step)
                else:
                    nr, nip = links[r][o]
                    walk(nr, nip, step)

        walk(entry, in_port, [])
        return out

    def paths(self, src: int, dst: int, adaptive_chiplets: bool = False) -> List[List[Channel]]:
        """Every channel sequence a packet src->dst may take (LOCAL excluded at
        the source, the final LOCAL ejection included)."""
        topo = self.topo
        result: List[List[Channel]] = [[]]
        for entry, ip, target, exit_port, leg in self.legs(src, dst):
            pol = topo.policy_of(entry)
            if pol == RoutingPolicy.ADAPTIVE_XY_YX and not adaptive_chiplets:
                pol = RoutingPolicy.XY
            segs = self.leg_paths(entry, ip, target, exit_port, leg, pol)
            result = [p + s for p in result for s in segs]
        return result

    def hop_count(self, src: int, dst: int) -> int:
        """Routers on the deterministic (XY-preferred) path."""
        return len(self.paths(src, dst)[0])
