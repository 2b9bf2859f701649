"""Materialize a config into a network and run one measurement point."""

from __future__ import annotations

import functools
import traceback
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional

from .baselines.mtr import load_restrictions, parse_restrictions, synthesize_restrictions
from .config import SimConfig, build_topology
from .metrics import MetricsReport, summarize
from .network import Network, Scheme
from .rc import HardFault
from .routing import Routing
from .topology import SocTopology
from .traffic import load_scenario, run_phases
from .watchdog import Watchdog

__all__ = ["PointResult", "build_topology", "build_routing", "build_network", "run_point"]


@dataclass
class PointResult:
    rate: float
    scheme: str
    pattern: str
    seed: int
    report: MetricsReport
    residue_flits: int = 0
    residue_packets: int = 0
    counters: Dict[str, int] = field(default_factory=dict)
    deadlock_cycle: Optional[List] = None
    fault: Optional[str] = None
    state_dump: Optional[str] = None

    @property
    def record(self) -> Dict[str, object]:
        return self.report.record(self.rate, self.scheme, self.pattern)


def _shipped_table(preset: str) -> Optional[str]:
    res = resources.files("rcsim") / "data" / f"{preset}.mtr"
    return res.read_text() if res.is_file() else None


@functools.lru_cache(maxsize=8)
def _synthesized(topo_key: str, config_json: str):
    cfg = SimConfig.model_validate_json(config_json)
    return synthesize_restrictions(build_topology(cfg)).forbidden


def build_routing(config: SimConfig, topo: SocTopology) -> Routing:
    """Plain routing, or turn-restricted routing for MTR."""
    if config.scheme.name != Scheme.MTR:
        return Routing(topo)
    if config.scheme.restrictions:
        rs = load_restrictions(config.resolve(config.scheme.restrictions), topo)
        return Routing(topo, rs.forbidden)
    t = config.topology
    if t.preset is not None and t.interposer is None and t.tsv_map is None:
        text = _shipped_table(t.preset)
        if text is not None:
            return Routing(topo, parse_restrictions(text, topo).forbidden)
    key = config.topology.model_dump_json()
    return Routing(topo, _synthesized(key, config.model_dump_json()))


def build_network(config: SimConfig, topo: Optional[SocTopology] = None) -> Network:
    topo = topo or build_topology(config)
    s = config.scheme
    return Network(
        topo,
        s.name,
        build_routing(config, topo),
        rc_capacity=s.rc_capacity,
        opic_wire_bits=s.opic_wire_bits,
        opic_pipeline=s.opic_pipeline,
        itb_capacity=s.itb_capacity,
        retry_delay=s.retry_delay,
        strict=config.engine.strict,
    )


def _dump(net: Network) -> str:
    """Human-readable snapshot for post-mortems of hard faults."""
    lines = [f"cycle {net.now}", f"scheme {net.scheme.value}"]
    for rt in net.routers:
        for p, vcs in enumerate(rt.in_vcs):
            for vc in vcs:
                if vc.state or vc.fifo:
                    pid = vc.pkt.id if vc.pkt is not None else "-"
                    lines.append(
                        f"router {rt.id} port {p} vc {vc.index}: state {vc.state} pkt {pid}"
                        f" flits {len(vc.fifo)} out {vc.out_port}/{vc.out_vc}"
                    )
    for b, rcb in sorted(net.rcbs.items()):
        owners = [o.id if o is not None else "-" for o in rcb.owner]
        lines.append(f"rcb {b}: owners {owners} flits {rcb.flit_count()}")
    for pid in sorted(net.alive)[:200]:
        lines.append(f"alive {net.alive[pid]!r}")
    return "\n".join(lines) + "\n"


def _counters(net: Network) -> Dict[str, int]:
    return {
        "created": net.created,
        "delivered": net.delivered_packets,
        "duplicates": net.duplicates,
        "itb_drops": net.itb_drops,
        "itb_nacks": net.itb_nacks,
        "itb_acks": net.itb_acks,
        "itb_retransmits": net.itb_retransmits,
        "vcsep_violations": net.vcsep_violations,
        "permit_violations": net.permit_violations,
        "max_queue": net.max_queue,
    }


def run_point(config: SimConfig) -> PointResult:
    """One warmup/measure/drain run.  Hard faults are caught and reported."""
    spec = config.traffic_spec()
    e = config.engine
    topo = build_topology(config)
    net = build_network(config, topo)
    flows = load_scenario(config.resolve(config.traffic.scenario)) if config.traffic.scenario else None
    wd = Watchdog(e.sample_period, e.window, e.starvation_window)
    res = PointResult(
        rate=spec.rate,
        scheme=config.scheme.name.value,
        pattern=spec.pattern.value,
        seed=e.seed,
        report=MetricsReport(),
    )
    try:
        out = run_phases(net, spec, flows, wd)
    except HardFault as err:
        res.fault = str(err)
        res.state_dump = _dump(net) + "\n" + traceback.format_exc()
        res.report.verdict = "FAULT"
        res.counters = _counters(net)
        return res
    res.report = summarize(
        out.measured,
        nodes=topo.node_count,
        measure=spec.measure,
        accepted_flits=out.accepted_flits,
        offered_flits=out.offered_flits,
        net=net,
        drain_cycles=out.drain_cycles,
        verdict=out.verdict.value if hasattr(out.verdict, "value") else out.verdict,
    )
    res.residue_flits = out.residue_flits
    res.residue_packets = out.residue_packets
    res.deadlock_cycle = out.deadlock_cycle
    res.counters = _counters(net)
    return res
