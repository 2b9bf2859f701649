"""Run statistics, the analytic zero-load model and report files."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .network import Network, Scheme
from .routing import Routing
from .topology import LOCAL, TSV, SocTopology, port_name
from .traffic import Pattern, gen_destination

SATURATION_RULE = "saturation: largest rate with avg_latency <= 3x zero-load and accepted >= 0.95x offered"
LATENCY_FACTOR = 3.0
ACCEPT_FACTOR = 0.95

CSV_COLUMNS = (
    "rate", "scheme", "pattern", "avg_latency", "q_delay", "grant_delay",
    "net_delay", "accepted", "verdict", "drain_cycles",
)


@dataclass
class MetricsReport:
    avg_latency: float = float("nan")
    p50: float = float("nan")
    p95: float = float("nan")
    p99: float = float("nan")
    q_delay: float = float("nan")
    grant_delay: float = float("nan")
    net_delay: float = float("nan")
    accepted_rate: float = 0.0
    offered_rate: float = 0.0
    packets: int = 0
    per_router_residency: Dict[int, float] = field(default_factory=dict)
    per_link_utilization: Dict[Tuple[int, int], float] = field(default_factory=dict)
    drain_cycles: int = 0
    verdict: str = "LIVE"
    empty: bool = True

    def record(self, rate: float, scheme: str, pattern: str) -> Dict[str, object]:
        return {
            "rate": rate,
            "scheme": scheme,
            "pattern": pattern,
            "avg_latency": self.avg_latency,
            "q_delay": self.q_delay,
            "grant_delay": self.grant_delay,
            "net_delay": self.net_delay,
            "accepted": self.accepted_rate,
            "verdict": self.verdict,
            "drain_cycles": self.drain_cycles,
        }


def latency_breakdown(pkt) -> Tuple[int, int, int]:
    """(queue, grant, network) delays; they add up to the total latency."""
    q = (pkt.t_request - pkt.t_created) + (pkt.t_inject - pkt.t_grant)
    g = pkt.t_grant - pkt.t_request
    n = pkt.t_delivered - pkt.t_inject
    return q, g, n


def summarize(
    packets: Sequence,
    *,
    nodes: int = 1,
    measure: int = 0,
    accepted_flits: int = 0,
    offered_flits: int = 0,
    net: Optional[Network] = None,
    drain_cycles: int = 0,
    verdict: str = "LIVE",
) -> MetricsReport:
    """Statistics over delivered measurement-phase packets."""
    rep = MetricsReport(drain_cycles=drain_cycles, verdict=str(verdict))
    denom = nodes * measure
    if denom:
        rep.accepted_rate = accepted_flits / denom
        rep.offered_rate = offered_flits / denom
    if net is not None:
        for r, cnt in enumerate(net.residency_cnt):
            if cnt:
                rep.per_router_residency[r] = net.residency_sum[r] / cnt
        if measure:
            full = net.link_window
            for link, wins in net.link_busy.items():
                best = 0.0
                for w, busy in wins.items():
                    length = min(full, measure - w * full)
                    best = max(best, busy / length)
                rep.per_link_utilization[link] = best
    if not packets:
        return rep
    lat = np.array([p.t_delivered - p.t_created for p in packets], dtype=float)
    parts = np.array([latency_breakdown(p) for p in packets], dtype=float)
    rep.empty = False
    rep.packets = len(packets)
    rep.avg_latency = float(lat.mean())
    rep.p50, rep.p95, rep.p99 = (float(x) for x in np.percentile(lat, [50, 95, 99]))
    rep.q_delay, rep.grant_delay, rep.net_delay = (float(x) for x in parts.mean(axis=0))
    return rep


# ----------------------------------------------------------------------
# zero-load model
# ----------------------------------------------------------------------
def _hops(topo: SocTopology, routing: Routing, src: int, dst: int, itb: bool) -> List[List[Tuple[int, int]]]:
    """Legs as lists of (router, out_port); ITB splits at the egress station."""
    path = routing.paths(src, dst)[0]
    if not itb or topo.router_chiplet[src] == topo.router_chiplet[dst]:
        return [path]
    e = routing.egress(src)
    cut = next(i for i, (r, o) in enumerate(path) if r == e and o == TSV)
    first = path[:cut] + [(e, LOCAL)]
    second = path[cut:]
    if src == e:
        return [[], second]
    return [first, second]


def _leg_timing(topo: SocTopology, hops: List[Tuple[int, int]], t0: int, flits: int, rc: bool) -> int:
    """Tail delivery cycle of a packet whose HEAD is written at ``t0``.

    Max-plus recurrence over the pipeline: per router a HEAD needs two
    cycles from write to SA (one into an rc_buffer), bodies one, flits
    leave in order one per cycle, a flit needs a credit for the next VC
    (freed when the flit ``depth`` places earlier leaves it), and a link
    adds three cycles from SA to the next write.  rc_buffer flits are
    sent one cycle after the RCVA grant at the earliest and reach the
    interposer one cycle after sending.
    """
    H = len(hops)
    rcb = [rc and o == TSV and topo.router_chiplet[r] >= 0 for r, o in hops]
    depth = [topo.vc_depth_of(r) for r, _ in hops]
    arrive = [[0] * flits for _ in range(H)]
    sa = [[0] * flits for _ in range(H)]
    send = [0] * flits
    for k in range(flits):
        a = t0 if k == 0 else arrive[0][k - 1] + 1
        if k >= depth[0]:
            a = max(a, sa[0][k - depth[0]] + 1)
        arrive[0][k] = a
        for i in range(H):
            s = arrive[i][k] + (1 if k > 0 or rcb[i] else 2)
            if k > 0:
                s = max(s, sa[i][k - 1] + 1)
            credit_wait = i + 1 < H and k >= depth[i + 1]
            if credit_wait and not rcb[i]:
                s = max(s, sa[i + 1][k - depth[i + 1]] + 1)
            sa[i][k] = s
            if rcb[i]:
                x = max(s + 2, sa[i][0] + 3)
                if k > 0:
                    x = max(x, send[k - 1] + 1)
                if credit_wait:
                    x = max(x, sa[i + 1][k - depth[i + 1]] + 1)
                send[k] = x
                arrive[i + 1][k] = x + 1
            elif i + 1 < H:
                arrive[i + 1][k] = s + 3
    return sa[H - 1][flits - 1] + 2


def pair_zero_load(
    topo: SocTopology,
    routing: Routing,
    scheme: Scheme,
    src: int,
    dst: int,
    flits: int,
) -> int:
    """Uncontended creation-to-delivery latency of one packet."""
    scheme = Scheme(scheme)
    outbound = topo.router_chiplet[src] != topo.router_chiplet[dst]
    t0 = 0
    if scheme == Scheme.RC and outbound:
        t0 = 2 * topo.opic_depth(src)
    legs = _hops(topo, routing, src, dst, scheme == Scheme.ITB)
    t = t0
    for n, leg in enumerate(legs):
        if n > 0:
            t += 1  # station turnaround: buffered at tail arrival, reinjected next cycle
        if leg:
            t = _leg_timing(topo, leg, t, flits, scheme == Scheme.RC and outbound)
    return t


def pattern_pairs(pattern: Pattern, node_count: int) -> List[Tuple[int, int]]:
    pattern = Pattern(pattern)
    if pattern == Pattern.UNIFORM_RANDOM:
        return [(s, d) for s in range(node_count) for d in range(node_count) if s != d]
    return [(s, gen_destination(pattern, s, node_count)) for s in range(node_count)]


def zero_load_model(
    topo: SocTopology,
    scheme: Scheme,
    pattern: Pattern = Pattern.UNIFORM_RANDOM,
    flits: int = 8,
    routing: Optional[Routing] = None,
) -> float:
    """Mean uncontended latency over the (src, dst) pairs of a pattern."""
    routing = routing or Routing(topo)
    pairs = pattern_pairs(pattern, topo.node_count)
    return sum(pair_zero_load(topo, routing, scheme, s, d, flits) for s, d in pairs) / len(pairs)


# ----------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------
@dataclass
class CurvePoint:
    rate: float
    avg_latency: float
    accepted: float
    verdict: str


@dataclass
class ThroughputCurve:
    zero_load: float
    points: List[CurvePoint]

    @property
    def saturation(self) -> float:
        return saturation_of(self.points, self.zero_load)


def saturation_of(points: Iterable[CurvePoint], zero_load: float) -> float:
    """Largest rate meeting the declared cutoff (0 if none does)."""
    best = 0.0
    for p in points:
        ok = (
            p.verdict != "DEADLOCK"
            and p.avg_latency == p.avg_latency
            and p.avg_latency <= LATENCY_FACTOR * zero_load
            and p.accepted >= ACCEPT_FACTOR * p.rate
        )
        if ok and p.rate > best:
            best = p.rate
    return best


def saturation_sweep(config, rates: Sequence[float], jobs: int = 1, early_stop: int = 0) -> ThroughputCurve:
    """Run one simulation per rate and locate the saturation point.

    With ``early_stop=k`` the sweep runs sequentially and ends after ``k``
    consecutive points past the cutoff; runs deep in saturation are the
    expensive ones and cannot change the result unless the curve is
    non-monotone.
    """
    from .experiment import build_topology, build_routing, run_point

    if list(rates) != sorted(rates):
        raise ValueError("rates must be ascending")
    topo = build_topology(config)
    routing = build_routing(config, topo)
    zl = zero_load_model(
        topo, config.scheme.name, config.traffic.pattern, config.traffic.packet_flits, routing
    )
    points: List[CurvePoint] = []
    if early_stop > 0:
        misses = 0
        for r in rates:
            rep = run_point(config.with_rate(r)).report
            pt = CurvePoint(r, rep.avg_latency, rep.accepted_rate, rep.verdict)
            points.append(pt)
            misses = 0 if saturation_of([pt], zl) == r else misses + 1
            if misses >= early_stop:
                break
        return ThroughputCurve(zl, points)
    results = run_points([config.with_rate(r) for r in rates], jobs)
    for r, res in zip(rates, results):
        rep = res.report
        points.append(CurvePoint(r, rep.avg_latency, rep.accepted_rate, rep.verdict))
    return ThroughputCurve(zl, points)


def run_points(configs, jobs: int = 1):
    from .experiment import run_point

    if jobs <= 1 or len(configs) <= 1:
        return [run_point(c) for c in configs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(run_point, configs))


# ----------------------------------------------------------------------
# files
# ----------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, float):
        if v != v:
            return "nan"
        return f"{v:.6g}"
    return str(v)


def records_csv(records: Sequence[Dict[str, object]]) -> str:
    buf = io.StringIO()
    buf.write(f"# {SATURATION_RULE}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_records(path, records: Sequence[Dict[str, object]]) -> None:
    Path(path).write_text(records_csv(records))


def read_records(path) -> List[Dict[str, str]]:
    lines = [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def write_heatmap(path, residency: Dict[int, float], topo: SocTopology) -> None:
    lines = ["location,value"]
    for r in sorted(residency):
        lines.append(f"{router_label(topo, r)},{residency[r]:.6g}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_links(path, util: Dict[Tuple[int, int], float], topo: SocTopology) -> None:
    lines = ["location,value"]
    for r, o in sorted(util):
        lines.append(f"{router_label(topo, r)}:{port_name(o)},{util[(r, o)]:.6g}")
    Path(path).write_text("\n".join(lines) + "\n")


def router_label(topo: SocTopology, r: int) -> str:
    c = topo.router_chiplet[r]
    local = topo.router_local[r]
    return f"I.R{local}" if c < 0 else f"C{c}.R{local}"


def report_dict(rep: MetricsReport) -> Dict[str, object]:
    d = asdict(rep)
    d["per_link_utilization"] = {f"{k[0]}:{k[1]}": v for k, v in rep.per_link_utilization.items()}
    return d
