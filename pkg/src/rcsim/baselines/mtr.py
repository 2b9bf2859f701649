"""MTR baseline: channel dependency graph and turn-restriction synthesis.

The CDG has one vertex per physical channel ``(router, out_port)``; every
VC of a channel is interchangeable under MTR, so the VC-level graph has
the same cycles.  Edges carry the turns ``(router, in_port, out_port,
leg)`` that create them, which is what the synthesizer forbids.
"""

from __future__ import annotations

import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx

from ..routing import LEG_NAMES, Leg, Routing, Turn
from ..topology import INTERPOSER, LOCAL, TSV, RoutingPolicy, SocTopology, TopologyError, parse_port, port_name

log = logging.getLogger(__name__)

Channel = Tuple[int, int]


class SynthesisError(RuntimeError):
    """No restriction set breaking all cycles keeps every pair connected."""


@dataclass
class ChannelDependencyGraph:
    graph: nx.DiGraph = field(default_factory=nx.DiGraph)

    def add(self, a: Channel, b: Channel, turn: Turn) -> None:
        if self.graph.has_edge(a, b):
            self.graph[a][b]["turns"].add(turn)
        else:
            self.graph.add_edge(a, b, turns={turn})

    @property
    def acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self.graph)

    def cycles(self, limit: int = 5000, length_bound: Optional[int] = None) -> List[List[Channel]]:
        it = nx.simple_cycles(self.graph, length_bound=length_bound)
        return list(islice(it, limit))

    def turns_on(self, cycle: List[Channel]) -> Set[Turn]:
        out: Set[Turn] = set()
        for i, a in enumerate(cycle):
            b = cycle[(i + 1) % len(cycle)]
            out |= self.graph[a][b]["turns"]
        return out


@dataclass(frozen=True)
class TurnRestrictionSet:
    forbidden: FrozenSet[Turn] = frozenset()

    def __len__(self) -> int:
        return len(self.forbidden)

    def for_leg(self, leg: Leg) -> FrozenSet[Turn]:
        return frozenset(t for t in self.forbidden if t[3] == leg)


def _leg_walk(routing: Routing, key, adaptive: bool):
    """First channels and internal edges of one leg, over every routing
    choice the policy allows."""
    entry, in_port, target, exit_port, leg = key
    topo = routing.topo
    policy = topo.policy_of(entry)
    modes = [policy != RoutingPolicy.YX]
    if adaptive and policy == RoutingPolicy.ADAPTIVE_XY_YX:
        modes = [True, False]
    links = topo.links
    first: Set[Tuple[Channel, Turn]] = set()
    edges: Set[Tuple[Channel, Channel, Turn]] = set()
    seen = set()
    todo = [(entry, in_port, None)]
    while todo:
        r, ip, prev = todo.pop()
        if (r, ip, prev) in seen:
            continue
        seen.add((r, ip, prev))
        outs = {routing.port(r, ip, target, exit_port, leg, m) for m in modes} if r != target or routing.restricted else {exit_port}
        for o in sorted(outs):
            ch = (r, o)
            turn = (r, ip, o, int(leg))
            if prev is None:
                first.add((ch, turn))
            else:
                edges.add((prev, ch, turn))
            if r == target and o == exit_port:
                continue
            nr, nip = links[r][o]
            todo.append((nr, nip, ch))
    return first, edges


def build_cdg(topo: SocTopology, routing: Routing, adaptive: bool = True) -> ChannelDependencyGraph:
    """Dependencies induced by the composed chiplet + interposer routing
    over all (src, dst) node pairs."""
    cdg = ChannelDependencyGraph()
    cache: Dict[tuple, tuple] = {}
    joins: Set[Tuple[Channel, tuple]] = set()
    n = topo.node_count
    for s in range(n):
        for d in range(n):
            if s == d:
                continue
            legs = routing.legs(s, d)
            for k, key in enumerate(legs):
                if key not in cache:
                    cache[key] = _leg_walk(routing, key, adaptive)
                if k:
                    prev = legs[k - 1]
                    joins.add(((prev[2], prev[3]), key))
    for first, edges in cache.values():
        for a, b, turn in edges:
            cdg.add(a, b, turn)
    for last, key in sorted(joins):
        for ch, turn in sorted(cache[key][0]):
            cdg.add(last, ch, turn)
    return cdg


def route_cost(topo: SocTopology, forbidden: Iterable[Turn]) -> Optional[int]:
    """Total hop count over all node pairs, or None if a pair is cut off."""
    routing = Routing(topo, forbidden)
    total = 0
    try:
        for s in range(topo.node_count):
            for d in range(topo.node_count):
                if s != d:
                    total += len(routing.paths(s, d)[0])
    except TopologyError:
        return None
    return total


def all_pairs_routable(topo: SocTopology, forbidden: Iterable[Turn]) -> bool:
    return route_cost(topo, forbidden) is not None


def _boundary_load(topo: SocTopology, routing: Routing) -> Dict[int, int]:
    load: Counter = Counter()
    for s in range(topo.node_count):
        for d in range(topo.node_count):
            if topo.router_chiplet[s] != topo.router_chiplet[d]:
                e = routing.egress(s)
                load[e] += 1
                load[routing.ingress(e, d)] += 1
    return load


def _touched_boundary(topo: SocTopology, r: int) -> int:
    if topo.router_chiplet[r] != INTERPOSER:
        return topo.egress_of[r]
    hosted = sorted(topo.tsv_router)
    return min(hosted, key=lambda b: (topo.hops(r, topo.tsv_router[b]), b))


def _feasible_legs(topo: SocTopology, r: int, ip: int, o: int) -> List[int]:
    """Legs in which a packet could enter ``r`` by ``ip`` and leave by ``o``."""
    if ip == o:
        return []
    if topo.router_chiplet[r] == INTERPOSER:
        return [int(Leg.INTERPOSER)]
    legs = []
    if ip != TSV and o != TSV:
        legs.append(int(Leg.INTRA))
    if ip != TSV and o != LOCAL:
        legs.append(int(Leg.OUT))
    if o != TSV and ip != LOCAL:
        legs.append(int(Leg.IN))
    return legs


def turn_graph(topo: SocTopology, forbidden: Iterable[Turn] = ()) -> ChannelDependencyGraph:
    """Every channel-to-channel turn some leg may still take.

    The dependency graph of any routing that only uses permitted turns is
    a subgraph of this one.
    """
    forb = set(forbidden)
    cdg = ChannelDependencyGraph()
    links = topo.links
    for r in range(topo.router_count):
        for ip, link in enumerate(links[r]):
            if link is None or ip == LOCAL:
                continue
            prev = (link[0], link[1])  # upstream channel feeding this in-port
            for o, out in enumerate(links[r]):
                if out is None or o == LOCAL or o == ip:
                    continue
                for leg in _feasible_legs(topo, r, ip, o):
                    turn = (r, ip, o, leg)
                    if turn not in forb:
                        cdg.add(prev, (r, o), turn)
    return cdg


def _turn_usage(topo: SocTopology) -> Counter:
    """How often each physical turn ``(router, in_port, out_port)`` appears
    on the unrestricted routes of all node pairs."""
    routing = Routing(topo)
    links = topo.links
    use: Counter = Counter()
    for s in range(topo.node_count):
        for d in range(topo.node_count):
            if s == d:
                continue
            path = routing.paths(s, d)[0]
            for (r, o), (r2, o2) in zip(path, path[1:]):
                use[(r2, links[r][o][1], o2)] += 1
    return use


def _bfs_levels(topo: SocTopology, root: int) -> Dict[int, int]:
    links = topo.links
    level = {root: 0}
    todo = [root]
    for r in todo:
        for p in range(4):
            if links[r][p] is not None and links[r][p][0] not in level:
                level[links[r][p][0]] = level[r] + 1
                todo.append(links[r][p][0])
    return level


Order = List[Optional[int]]  # routers of one chiplet, ``None`` = the outside


def default_orders(topo: SocTopology) -> List[Order]:
    """Per chiplet: the outside first, then routers by (BFS level, id)
    from the most central boundary."""
    out = []
    for ci in range(len(topo.chiplets)):
        level = min(
            (_bfs_levels(topo, b) for b in sorted(topo.boundaries[ci])),
            key=lambda lv: sum(lv.values()),
        )
        out.append([None] + sorted(level, key=lambda r: (level[r], r)))
    return out


def _valid_order(topo: SocTopology, ci: int, order: Order) -> bool:
    v = order.index(None)
    return all(order.index(b) > v for b in topo.boundaries[ci])


def _seed(topo: SocTopology, orders: List[Order]) -> Set[Tuple[int, int, int]]:
    """Physical turns forbidden by the starting construction.

    Inside each chiplet, up*/down* over the router graph plus one extra
    vertex standing for the rest of the system, joined to every boundary
    by its TSV.  A channel is "up" when it moves to an earlier vertex of
    the chiplet's order, and down-to-up turns are forbidden.  Any order
    makes each chiplet acyclic; putting the outside before every boundary
    makes each TSV hop up-bound and each TSV entry down-bound, so nothing
    entering through a TSV can leave through one and no cycle can close
    across the interposer.  A BFS order also keeps all pairs connected.
    The interposer keeps plain XY turns.
    """
    links = topo.links
    banned: Set[Tuple[int, int, int]] = set()
    for ci, order in enumerate(orders):
        if not _valid_order(topo, ci, order):
            raise SynthesisError(f"chiplet {ci}: the outside must precede every boundary")
        rank = {r: i for i, r in enumerate(order)}
        base = topo.node_offset[ci]
        for r in range(base, base + topo.chiplets[ci].size):
            ports = [p for p in range(len(links[r])) if p != LOCAL and links[r][p] is not None]
            far = {p: rank[None if p >= TSV else links[r][p][0]] for p in ports}
            for ip in ports:
                if far[ip] > rank[r]:
                    continue  # arrived on an up channel: anything goes
                for o in ports:
                    if o != ip and far[o] < rank[r]:
                        banned.add((r, ip, o))
    for r in range(topo.node_count, topo.router_count):
        for ip in (0, 1):  # N, S
            for o in (2, 3):  # E, W
                if links[r][ip] is not None and links[r][o] is not None:
                    banned.add((r, ip, o))
    return banned


def _expand(topo: SocTopology, phys: Iterable[Tuple[int, int, int]]) -> FrozenSet[Turn]:
    return frozenset((r, ip, o, leg) for r, ip, o in phys for leg in _feasible_legs(topo, r, ip, o))


def _construct(
    topo: SocTopology, orders: Optional[List[Order]] = None, use: Optional[Counter] = None
) -> TurnRestrictionSet:
    """Acyclic-by-construction turn restrictions, then greedy relaxation.

    Starts from the up*/down* construction of ``_seed`` and gives turns
    back one at a time, most used by unrestricted routing first, whenever
    the permitted-turn graph stays acyclic.  The result is irreducible: no
    single forbidden turn can be re-enabled without creating a cycle.  A
    physical turn is allowed or forbidden for every leg at once, since all
    legs share the same VCs.
    """
    banned = _seed(topo, orders or default_orders(topo))
    g = turn_graph(topo, _expand(topo, banned)).graph
    if not nx.is_directed_acyclic_graph(g):
        raise SynthesisError("starting construction is cyclic")
    use = use if use is not None else _turn_usage(topo)
    links = topo.links
    for t in sorted(banned, key=lambda t: (-use[t], t)):
        r, ip, o = t
        a, b = (links[r][ip][0], links[r][ip][1]), (r, o)
        if a in g and b in g and nx.has_path(g, b, a):
            continue
        banned.discard(t)
        g.add_edge(a, b)
    return TurnRestrictionSet(_expand(topo, banned))


Flows = Sequence[Tuple[int, int, float]]  # (src, dst, flits/cycle per unit rate)


def channel_load(routing: Routing, flows: Flows) -> Counter:
    """Expected flits per cycle on each channel, per unit injection rate."""
    load: Counter = Counter()
    for s, d, w in flows:
        for ch in routing.paths(s, d)[0]:
            if ch[1] != LOCAL:
                load[ch] += w
    return load


def _load_score(topo: SocTopology, forbidden: FrozenSet[Turn], workloads: Sequence[Flows]):
    if not all_pairs_routable(topo, forbidden):
        return None
    try:
        routing = Routing(topo, forbidden)
        loads = [channel_load(routing, f) for f in workloads]
    except TopologyError:
        return None
    return (round(max(max(l.values()) for l in loads), 6), round(sum(sum(l.values()) for l in loads), 6))


def search_restrictions(
    topo: SocTopology,
    workloads: Sequence[Flows],
    iterations: int = 2000,
    seed: int = 1,
) -> TurnRestrictionSet:
    """Hill-climb over chiplet orders for the ``_construct`` restrictions.

    A step swaps two vertices in one chiplet's order and is kept when the
    worst channel load over ``workloads`` (then the total load) does not
    get worse.  Orders that would let a TSV entry reach a TSV exit, or
    that disconnect a pair, are skipped, so every visited candidate is
    deadlock-free.  Deterministic for a given ``seed``.
    """
    rng = random.Random(seed)
    use = _turn_usage(topo)
    orders = default_orders(topo)
    best_rs = _construct(topo, orders, use)
    best = _load_score(topo, best_rs.forbidden, workloads)
    if best is None:
        raise SynthesisError("starting order disconnects some node pair")
    for it in range(iterations):
        ci = rng.randrange(len(orders))
        order = orders[ci][:]
        i, j = rng.sample(range(len(order)), 2)
        order[i], order[j] = order[j], order[i]
        if not _valid_order(topo, ci, order):
            continue
        cand = orders[:ci] + [order] + orders[ci + 1 :]
        rs = _construct(topo, cand, use)
        score = _load_score(topo, rs.forbidden, workloads)
        if score is not None and score <= best:
            if score < best:
                log.debug("step %d: worst load %.3f, total %.1f", it, *score)
            best, orders, best_rs = score, cand, rs
    if not build_cdg(topo, Routing(topo, best_rs.forbidden)).acyclic:
        raise SynthesisError("restricted routing CDG is cyclic")
    return best_rs


def break_cycles(
    cdg: ChannelDependencyGraph,
    topo: SocTopology,
    forbidden: Iterable[Turn] = (),
    cycle_limit: int = 2000,
    length_bound: Optional[int] = 12,
) -> FrozenSet[Turn]:
    """Greedy cycle breaking on a fixed CDG.

    Repeatedly removes the edge lying on the most enumerated cycles (so
    its removal cuts the cycle count the most), preferring edges near the
    least loaded boundary under uniform traffic, then the smallest edge.
    Edges whose turns would disconnect a node pair are skipped.  Returns
    ``forbidden`` plus the turns of every removed edge.
    """
    g = cdg.graph.copy()
    out = set(forbidden)
    load = _boundary_load(topo, Routing(topo))
    while not nx.is_directed_acyclic_graph(g):
        cycles = list(islice(nx.simple_cycles(g, length_bound=length_bound), cycle_limit))
        if not cycles:
            cycles = [[e[0] for e in nx.find_cycle(g)]]
        freq: Counter = Counter()
        for cyc in cycles:
            for i, a in enumerate(cyc):
                freq[(a, cyc[(i + 1) % len(cyc)])] += 1
        ranked = sorted(freq, key=lambda e: (-freq[e], load[_touched_boundary(topo, e[1][0])], e))
        for a, b in ranked:
            turns = g[a][b]["turns"]
            if all_pairs_routable(topo, out | turns):
                out |= turns
                g.remove_edge(a, b)
                break
        else:
            raise SynthesisError("every cycle edge disconnects some node pair")
    return frozenset(out)


def synthesize_restrictions(
    topo: SocTopology,
    cdg: Optional[ChannelDependencyGraph] = None,
    rounds: int = 30,
) -> TurnRestrictionSet:
    """Turn restrictions making the composed routing deadlock-free.

    With an explicit ``cdg`` only that graph's cycles are broken.
    Otherwise the CDG of the unrestricted routing is broken greedily;
    since restricted routing may detour through turns the original CDG
    never had, the CDG is rebuilt and broken again, up to ``rounds``
    times.  The up*/down* construction of ``_construct`` is computed as
    well, and the candidate with fewer total hops over all pairs wins.
    Every result is checked for full reachability and an acyclic routing
    CDG.
    """
    if cdg is not None:
        if cdg.acyclic:
            return TurnRestrictionSet()
        return TurnRestrictionSet(break_cycles(cdg, topo))
    cdg = build_cdg(topo, Routing(topo))
    if cdg.acyclic:
        return TurnRestrictionSet()
    candidates = []
    forbidden: FrozenSet[Turn] = frozenset()
    try:
        for _ in range(rounds):
            forbidden = break_cycles(cdg, topo, forbidden)
            cdg = build_cdg(topo, Routing(topo, forbidden))
            if cdg.acyclic:
                candidates.append(TurnRestrictionSet(forbidden))
                break
        else:
            log.info("greedy cycle breaking still cyclic after %d rounds", rounds)
    except SynthesisError as err:
        log.info("greedy cycle breaking failed: %s", err)
    candidates.append(_construct(topo))
    scored = [(route_cost(topo, rs.forbidden), i) for i, rs in enumerate(candidates)]
    scored = [x for x in scored if x[0] is not None]
    if not scored:
        raise SynthesisError("restrictions disconnect some node pair")
    rs = candidates[min(scored)[1]]
    if not build_cdg(topo, Routing(topo, rs.forbidden)).acyclic:
        raise SynthesisError("restricted routing CDG is cyclic")
    log.debug("%d turns forbidden", len(rs))
    return rs


# ----------------------------------------------------------------------
# restriction files: chiplet,router,in_port,out_port,leg
# ----------------------------------------------------------------------
_LEG_OUT = {v: k for k, v in LEG_NAMES.items()}


def format_restrictions(topo: SocTopology, rs: TurnRestrictionSet) -> str:
    lines = ["chiplet,router,in_port,out_port,leg"]
    for r, ip, op, leg in sorted(rs.forbidden):
        c = topo.router_chiplet[r]
        lines.append(
            f"{'I' if c == INTERPOSER else c},{topo.router_local[r]},"
            f"{port_name(ip)},{port_name(op)},{_LEG_OUT[Leg(leg)]}"
        )
    return "\n".join(lines) + "\n"


def save_restrictions(path, topo: SocTopology, rs: TurnRestrictionSet) -> None:
    Path(path).write_text(format_restrictions(topo, rs))


def load_restrictions(path, topo: SocTopology, check: bool = True) -> TurnRestrictionSet:
    """Read a restriction table; rejects tables that disconnect a pair."""
    return parse_restrictions(Path(path).read_text(), topo, check, source=str(path))


def parse_restrictions(
    text: str, topo: SocTopology, check: bool = True, source: str = "<table>"
) -> TurnRestrictionSet:
    out: Set[Turn] = set()
    path = source
    ipn = topo.interposer_width * topo.interposer_height
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.lower().startswith("chiplet"):
            continue
        parts = [p.strip() for p in line.split(",")]
        where = f"{path}:{lineno}"
        if len(parts) != 5:
            raise ValueError(f"{where}: expected chiplet,router,in_port,out_port,leg")
        c, r, ip, op, leg = parts
        try:
            local = int(r)
            if c.upper() == "I":
                if not 0 <= local < ipn:
                    raise ValueError
                g = topo.node_count + local
            else:
                ci = int(c)
                if not (0 <= ci < len(topo.chiplets) and 0 <= local < topo.chiplets[ci].size):
                    raise ValueError
                g = topo.node_offset[ci] + local
        except ValueError:
            raise ValueError(f"{where}: bad chiplet/router {c},{r}") from None
        try:
            turn = (g, parse_port(ip), parse_port(op), int(LEG_NAMES[leg.lower()]))
        except (KeyError, TopologyError) as exc:
            raise ValueError(f"{where}: {exc}") from None
        out.add(turn)
    rs = TurnRestrictionSet(frozenset(out))
    if check and not all_pairs_routable(topo, rs.forbidden):
        raise ValueError(f"{path}: restrictions disconnect some node pair")
    return rs
