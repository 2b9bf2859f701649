"""Chiplet/interposer SoC graph, OPIC tree plans and next-hop routing.

Router ids are global: chiplet routers come first (their id equals the
canonical node id, chiplets concatenated in order), interposer routers
follow.  Mesh coordinates use ``id = y * width + x`` with north = +y.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

# Port indices.  Chiplet boundary routers expose one TSV port (5); an
# interposer router exposes one TSV port per attached boundary (5, 6, ...).
N, S, E, W, LOCAL, TSV = 0, 1, 2, 3, 4, 5
PORT_NAMES = ("N", "S", "E", "W", "L")
OPPOSITE = (S, N, W, E)
DELTA = ((0, 1), (0, -1), (1, 0), (-1, 0))

INTERPOSER = -1


class RoutingPolicy(str, Enum):
    XY = "XY"
    YX = "YX"
    ADAPTIVE_XY_YX = "ADAPTIVE_XY_YX"


class TopologyError(ValueError):
    pass


def port_name(port: int) -> str:
    if port < TSV:
        return PORT_NAMES[port]
    return "TSV" if port == TSV else f"TSV{port - TSV}"


def parse_port(name: str) -> int:
    name = name.strip().upper()
    if name in ("N", "S", "E", "W"):
        return "NSEW".index(name)
    if name in ("L", "LOCAL"):
        return LOCAL
    if name == "TSV":
        return TSV
    if name.startswith("TSV") and name[3:].isdigit():
        return TSV + int(name[3:])
    raise TopologyError(f"unknown port name {name!r}")


@dataclass(frozen=True)
class ChipletSpec:
    id: int
    width: int
    height: int
    boundary_routers: Tuple[int, ...]
    routing_policy: RoutingPolicy = RoutingPolicy.XY
    vc_count: int = 2
    vc_depth: int = 4

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise TopologyError(f"chiplet {self.id}: mesh dimensions must be >= 1")
        if not self.boundary_routers:
            raise TopologyError(f"chiplet {self.id}: needs at least one boundary router")
        n = self.width * self.height
        if len(set(self.boundary_routers)) != len(self.boundary_routers):
            raise TopologyError(f"chiplet {self.id}: duplicate boundary router")
        for b in self.boundary_routers:
            if not 0 <= b < n:
                raise TopologyError(f"chiplet {self.id}: boundary router {b} outside [0, {n})")
        if self.vc_count < 1 or self.vc_depth < 1:
            raise TopologyError(f"chiplet {self.id}: vc_count and vc_depth must be >= 1")

    @property
    def size(self) -> int:
        return self.width * self.height

    def xy(self, local: int) -> Tuple[int, int]:
        return local % self.width, local // self.width


@dataclass
class OpicTreePlan:
    """Forest over one chiplet's nodes; one tree per boundary router.

    All lists are indexed by chiplet-local node index.
    """

    root: List[int]
    parent: List[Optional[int]]
    depth: List[int]
    children: List[List[int]]

    def members(self, root: int) -> List[int]:
        return [n for n, r in enumerate(self.root) if r == root]

    def requesters(self, root: int) -> List[int]:
        return [n for n in self.members(root) if n != root]


def mesh_distance(width: int, a: int, b: int) -> int:
    return abs(a % width - b % width) + abs(a // width - b // width)


def assign_opic_trees(chiplet: ChipletSpec, reach: int = 2) -> OpicTreePlan:
    """Partition the chiplet into permit trees rooted at its boundary routers.

    Each node joins the nearest boundary (lowest index on ties).  A tree
    edge spans at most ``reach`` mesh hops: nodes within ``reach`` of the
    root hang off the root, deeper nodes attach to the closest node one
    level up (lowest index on ties).
    """
    if reach < 1:
        raise TopologyError("opic reach must be >= 1")
    w, n = chiplet.width, chiplet.size
    bounds = sorted(chiplet.boundary_routers)
    root = [min(bounds, key=lambda b: (mesh_distance(w, v, b), b)) for v in range(n)]
    parent: List[Optional[int]] = [None] * n
    depth = [0] * n
    children: List[List[int]] = [[] for _ in range(n)]
    for b in bounds:
        members = [v for v in range(n) if root[v] == b and v != b]
        level = [b]
        placed = {b}
        d = 0
        while len(placed) < len(members) + 1:
            d += 1
            nxt = []
            for v in members:
                if v in placed:
                    continue
                near = [u for u in level if mesh_distance(w, u, v) <= reach]
                if near:
                    p = min(near, key=lambda u: (mesh_distance(w, u, v), u))
                    parent[v] = p
                    depth[v] = d
                    nxt.append(v)
            if not nxt:
                raise TopologyError(f"chiplet {chiplet.id}: OPIC tree of {b} is disconnected")
            placed.update(nxt)
            level = nxt
    for v in range(n):
        if parent[v] is not None:
            children[parent[v]].append(v)
    return OpicTreePlan(root=root, parent=parent, depth=depth, children=children)


@dataclass
class SocTopology:
    chiplets: List[ChipletSpec]
    interposer_width: int
    interposer_height: int
    interposer_policy: RoutingPolicy
    interposer_vc_count: int
    interposer_vc_depth: int
    # (chiplet index, boundary local id) -> interposer local index
    tsv_map: Dict[Tuple[int, int], int]
    opic_reach: int = 2

    node_count: int = field(init=False)
    router_count: int = field(init=False)
    node_offset: List[int] = field(init=False)
    router_chiplet: List[int] = field(init=False)
    router_local: List[int] = field(init=False)
    router_xy: List[Tuple[int, int]] = field(init=False)
    # links[r][port] = (neighbor router, neighbor in-port) or None
    links: List[List[Optional[Tuple[int, int]]]] = field(init=False)
    boundaries: List[List[int]] = field(init=False)
    tsv_router: Dict[int, int] = field(init=False)
    tsv_port: Dict[int, int] = field(init=False)
    opic_plan: List[OpicTreePlan] = field(init=False)
    egress_of: List[int] = field(init=False)

    def __post_init__(self) -> None:
        self.node_offset = []
        off = 0
        for c in self.chiplets:
            self.node_offset.append(off)
            off += c.size
        self.node_count = off
        ipn = self.interposer_width * self.interposer_height
        self.router_count = off + ipn
        self.router_chiplet, self.router_local, self.router_xy = [], [], []
        for ci, c in enumerate(self.chiplets):
            for v in range(c.size):
                self.router_chiplet.append(ci)
                self.router_local.append(v)
                self.router_xy.append(c.xy(v))
        for v in range(ipn):
            self.router_chiplet.append(INTERPOSER)
            self.router_local.append(v)
            self.router_xy.append((v % self.interposer_width, v // self.interposer_width))

        self.links = [[None] * 5 for _ in range(self.router_count)]
        for r in range(self.router_count):
            ci = self.router_chiplet[r]
            w, h = self._dims(ci)
            x, y = self.router_xy[r]
            base = r - self.router_local[r]
            for p in (N, S, E, W):
                dx, dy = DELTA[p]
                nx, ny = x + dx, y + dy
                if 0 <= nx < w and 0 <= ny < h:
                    self.links[r][p] = (base + ny * w + nx, OPPOSITE[p])

        self.boundaries = []
        self.tsv_router, self.tsv_port = {}, {}
        for ci, c in enumerate(self.chiplets):
            self.boundaries.append([self.node_offset[ci] + b for b in sorted(c.boundary_routers)])
        for (ci, b), ir in sorted(self.tsv_map.items()):
            if not 0 <= ir < ipn:
                raise TopologyError(f"tsv_map: interposer router {ir} outside [0, {ipn})")
            g = self.node_offset[ci] + b
            gi = self.node_count + ir
            port = len(self.links[gi])
            self.links[gi].append((g, TSV))
            self.links[g].append((gi, port))
            self.tsv_router[g] = gi
            self.tsv_port[g] = port
        self.opic_plan = [assign_opic_trees(c, self.opic_reach) for c in self.chiplets]
        self.egress_of = []
        for ci, c in enumerate(self.chiplets):
            base = self.node_offset[ci]
            self.egress_of.extend(base + rt for rt in self.opic_plan[ci].root)

    def _dims(self, ci: int) -> Tuple[int, int]:
        if ci == INTERPOSER:
            return self.interposer_width, self.interposer_height
        return self.chiplets[ci].width, self.chiplets[ci].height

    # -- queries -------------------------------------------------------
    def chiplet_of(self, node: int) -> int:
        return self.router_chiplet[node]

    def is_boundary(self, r: int) -> bool:
        return r in self.tsv_router

    def policy_of(self, r: int) -> RoutingPolicy:
        ci = self.router_chiplet[r]
        return self.interposer_policy if ci == INTERPOSER else self.chiplets[ci].routing_policy

    def vc_count_of(self, r: int) -> int:
        ci = self.router_chiplet[r]
        return self.interposer_vc_count if ci == INTERPOSER else self.chiplets[ci].vc_count

    def vc_depth_of(self, r: int) -> int:
        ci = self.router_chiplet[r]
        return self.interposer_vc_depth if ci == INTERPOSER else self.chiplets[ci].vc_depth

    def hops(self, a: int, b: int) -> int:
        """Mesh hops between two routers of the same sub-network."""
        (ax, ay), (bx, by) = self.router_xy[a], self.router_xy[b]
        return abs(ax - bx) + abs(ay - by)

    def opic_depth(self, node: int) -> int:
        ci = self.router_chiplet[node]
        return self.opic_plan[ci].depth[self.router_local[node]]

    def global_node(self, chiplet: int, local: int) -> int:
        return self.node_offset[chiplet] + local


def default_tsv_map(
    chiplets: Sequence[ChipletSpec], width: int, height: int
) -> Dict[Tuple[int, int], int]:
    """Round-robin placement of boundaries along the interposer perimeter."""
    if width == 1 or height == 1:
        ring = list(range(width * height))
    else:
        ring = [x for x in range(width)]
        ring += [y * width + width - 1 for y in range(1, height)]
        ring += [(height - 1) * width + x for x in range(width - 2, -1, -1)]
        ring += [y * width for y in range(height - 2, 0, -1)]
    out = {}
    i = 0
    for ci, c in enumerate(chiplets):
        for b in sorted(c.boundary_routers):
            out[(ci, b)] = ring[i % len(ring)]
            i += 1
    return out


def build_soc(
    chiplets: Sequence[ChipletSpec],
    interposer_width: int,
    interposer_height: int,
    tsv_map: Optional[Dict[Tuple[int, int], int]] = None,
    interposer_policy: RoutingPolicy = RoutingPolicy.XY,
    interposer_vc_count: int = 2,
    interposer_vc_depth: int = 4,
    opic_reach: int = 2,
) -> SocTopology:
    """Validate the chiplet list and TSV attachments and assemble the SoC."""
    chiplets = list(chiplets)
    if not chiplets:
        raise TopologyError("SoC needs at least one chiplet")
    if interposer_width < 1 or interposer_height < 1:
        raise TopologyError("interposer dimensions must be >= 1")
    if interposer_vc_count < 1 or interposer_vc_depth < 1:
        raise TopologyError("interposer vc_count and vc_depth must be >= 1")
    if tsv_map is None:
        tsv_map = default_tsv_map(chiplets, interposer_width, interposer_height)
    expected = {(ci, b) for ci, c in enumerate(chiplets) for b in c.boundary_routers}
    for key in tsv_map:
        if key not in expected:
            raise TopologyError(f"tsv_map entry {key} is not a boundary router")
    missing = sorted(expected - set(tsv_map))
    if missing:
        raise TopologyError(f"unmapped boundary routers: {missing}")
    topo = SocTopology(
        chiplets=chiplets,
        interposer_width=interposer_width,
        interposer_height=interposer_height,
        interposer_policy=interposer_policy,
        interposer_vc_count=interposer_vc_count,
        interposer_vc_depth=interposer_vc_depth,
        tsv_map=dict(tsv_map),
        opic_reach=opic_reach,
    )
    _check_connected(topo)
    return topo


def _check_connected(topo: SocTopology) -> None:
    seen = {0}
    todo = deque([0])
    while todo:
        r = todo.popleft()
        for link in topo.links[r]:
            if link is not None and link[0] not in seen:
                seen.add(link[0])
                todo.append(link[0])
    if len(seen) != topo.router_count:
        raise TopologyError("SoC graph is not connected")


# -- boundary selection ------------------------------------------------

def select_boundary(topo: SocTopology, src: int, dst: int) -> Tuple[int, int]:
    """(egress, ingress) boundary routers for an inter-chiplet packet.

    Egress is the root of the source's OPIC tree.  Ingress is the
    destination-chiplet boundary closest over the interposer to the
    egress TSV, then closest to ``dst`` inside the chiplet, then lowest id.
    """
    cs, cd = topo.router_chiplet[src], topo.router_chiplet[dst]
    if cs == cd:
        raise TopologyError(f"nodes {src} and {dst} share chiplet {cs}")
    egress = topo.egress_of[src]
    ingress = min_ingress(topo, egress, dst)
    return egress, ingress


def min_ingress(
    topo: SocTopology,
    egress: int,
    dst: int,
    interposer_hops: Optional[Callable[[int, int], Optional[int]]] = None,
    chiplet_hops: Optional[Callable[[int, int], Optional[int]]] = None,
) -> int:
    cd = topo.router_chiplet[dst]
    ir = topo.tsv_router[egress]
    best = None
    for b in topo.boundaries[cd]:
        if interposer_hops is None:
            ih = topo.hops(ir, topo.tsv_router[b])
        else:
            ih = interposer_hops(egress, b)
        ch = topo.hops(b, dst) if chiplet_hops is None else chiplet_hops(b, dst)
        if ih is None or ch is None:
            continue
        key = (ih, ch, b)
        if best is None or key < best:
            best = key
    if best is None:
        raise TopologyError(f"no usable ingress boundary toward node {dst}")
    return best[2]


# -- routing -----------------------------------------------------------

def dor_port(topo: SocTopology, r: int, target: int, x_first: bool) -> int:
    (x, y), (tx, ty) = topo.router_xy[r], topo.router_xy[target]
    if x_first:
        if tx != x:
            return E if tx > x else W
        if ty != y:
            return N if ty > y else S
    else:
        if ty != y:
            return N if ty > y else S
        if tx != x:
            return E if tx > x else W
    raise TopologyError(f"router {r} is already at target {target}")


CreditView = Callable[[int, int], int]


@dataclass(frozen=True)
class RouteDecision:
    out_port: int
    out_vc_range: Tuple[int, int]

    def __post_init__(self) -> None:
        lo, hi = self.out_vc_range
        if not 0 <= lo < hi:
            raise ValueError(f"empty VC range {self.out_vc_range}")


def route_next_hop(
    topo: SocTopology,
    policy: RoutingPolicy,
    router: int,
    local_dest: int,
    credits: Optional[CreditView] = None,
    exit_port: int = LOCAL,
    vc_range: Optional[Tuple[int, int]] = None,
) -> RouteDecision:
    """Next output port toward ``local_dest`` within one sub-network.

    ``credits(router, port)`` returns the free downstream credits behind an
    output port; only ADAPTIVE_XY_YX consults it (ties go to XY).
    """
    if topo.router_chiplet[router] != topo.router_chiplet[local_dest]:
        raise TopologyError(f"router {router} and {local_dest} are in different sub-networks")
    if vc_range is None:
        nxt = local_dest if router == local_dest else topo.links[router][dor_port(topo, router, local_dest, True)][0]
        vc_range = (0, topo.vc_count_of(nxt))
    if router == local_dest:
        return RouteDecision(exit_port, vc_range)
    if policy == RoutingPolicy.XY:
        return RouteDecision(dor_port(topo, router, local_dest, True), vc_range)
    if policy == RoutingPolicy.YX:
        return RouteDecision(dor_port(topo, router, local_dest, False), vc_range)
    xy = dor_port(topo, router, local_dest, True)
    yx = dor_port(topo, router, local_dest, False)
    if xy == yx or credits is None:
        return RouteDecision(xy, vc_range)
    return RouteDecision(yx if credits(router, yx) > credits(router, xy) else xy, vc_range)
