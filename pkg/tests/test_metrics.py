import math
import random
from types import SimpleNamespace

import pytest

from rcsim.config import SimConfig
from rcsim.experiment import build_routing, build_topology
from rcsim.metrics import (
    CurvePoint,
    latency_breakdown,
    pair_zero_load,
    read_records,
    saturation_of,
    saturation_sweep,
    summarize,
    write_records,
    zero_load_model,
)
from rcsim.network import Network, Scheme
from rcsim.routing import Routing
from rcsim.traffic import Pattern, TrafficSpec, run_phases

from conftest import two_chiplets


def pkt(created, delivered, request=None, grant=None, inject=None):
    request = created if request is None else request
    grant = request if grant is None else grant
    inject = grant if inject is None else inject
    return SimpleNamespace(
        t_created=created, t_request=request, t_grant=grant, t_inject=inject, t_delivered=delivered
    )


def simulated(topo, scheme, s, d, flits, routing=None):
    net = Network(topo, scheme, routing=routing)
    p = net.send(s, d, flits)
    assert net.drain(10_000).drained
    return p.t_delivered - p.t_created


# -- summaries ---------------------------------------------------------------
def test_three_packets():
    rep = summarize([pkt(0, 10), pkt(0, 20), pkt(5, 35)])
    assert rep.avg_latency == 20 and rep.p50 == 20 and not rep.empty


def test_breakdown_adds_up():
    p = pkt(3, 70, request=5, grant=11, inject=14)
    q, g, n = latency_breakdown(p)
    assert (q, g, n) == (5, 6, 56)
    assert q + g + n == p.t_delivered - p.t_created


def test_empty_measurement_is_flagged():
    rep = summarize([], nodes=4, measure=100)
    assert rep.empty and math.isnan(rep.avg_latency)


def test_link_utilization_is_max_window_fraction():
    net = SimpleNamespace(
        residency_cnt=[2, 0], residency_sum=[10, 0],
        link_window=10_000, link_busy={(0, 2): {0: 2500, 1: 100}},
    )
    rep = summarize([], net=net, measure=20_000)
    assert rep.per_link_utilization[(0, 2)] == pytest.approx(0.25)
    assert rep.per_router_residency == {0: 5.0}


def test_accepted_never_exceeds_offered():
    net = Network(two_chiplets(), Scheme.RC)
    out = run_phases(net, TrafficSpec(rate=0.04, packet_flits=4, seed=3, warmup=500, measure=4000))
    n = net.topo.node_count
    rep = summarize(out.measured, nodes=n, measure=4000,
                    accepted_flits=out.accepted_flits, offered_flits=out.offered_flits)
    assert rep.accepted_rate <= rep.offered_rate * 1.01
    assert rep.accepted_rate == pytest.approx(rep.offered_rate, rel=0.03)


# -- saturation rule -----------------------------------------------------------
def test_saturation_rule():
    pts = [
        CurvePoint(0.1, 40.0, 0.1, "LIVE"),
        CurvePoint(0.2, 89.0, 0.195, "LIVE"),
        CurvePoint(0.3, 91.0, 0.3, "LIVE"),  # latency over 3x
        CurvePoint(0.4, 50.0, 0.37, "LIVE"),  # under 95% acceptance
    ]
    assert saturation_of(pts, 30.0) == 0.2


def test_deadlocked_point_never_counts():
    assert saturation_of([CurvePoint(0.1, 20.0, 0.1, "DEADLOCK")], 30.0) == 0.0
    assert saturation_of([CurvePoint(0.1, float("nan"), 0.1, "LIVE")], 30.0) == 0.0


def test_sweep_needs_ascending_rates():
    with pytest.raises(ValueError, match="ascending"):
        saturation_sweep(SimConfig(), [0.2, 0.1])


def test_tiny_rate_sits_on_the_plateau():
    cfg = SimConfig()
    cfg.engine.measure = 20_000
    curve = saturation_sweep(cfg, [0.001])
    (pt,) = curve.points
    assert curve.saturation == 0.001
    assert abs(pt.avg_latency - curve.zero_load) < 0.2 * curve.zero_load


def test_records_round_trip(tmp_path):
    recs = [{"rate": 0.1, "scheme": "RC", "pattern": "UR", "avg_latency": 42.5,
             "q_delay": 1.0, "grant_delay": 4.0, "net_delay": 37.5, "accepted": 0.1,
             "verdict": "LIVE", "drain_cycles": 12}]
    write_records(tmp_path / "r.csv", recs)
    assert tmp_path.joinpath("r.csv").read_text().startswith("# saturation:")
    (row,) = read_records(tmp_path / "r.csv")
    assert row["avg_latency"] == "42.5" and row["verdict"] == "LIVE"


# -- zero-load model ---------------------------------------------------------------
def test_adjacent_single_flit_hand_count(soc68):
    assert pair_zero_load(soc68, Routing(soc68), Scheme.NONE, 0, 1, 1) == 9


def test_intra_pair_same_for_all_schemes(soc68):
    r = Routing(soc68)
    values = {pair_zero_load(soc68, r, s, 0, 15, 8) for s in (Scheme.RC, Scheme.ITB, Scheme.VCSEP, Scheme.NONE)}
    assert len(values) == 1


def test_itb_slower_than_rc_across_chiplets(soc68):
    r = Routing(soc68)
    for s, d in [(0, 20), (5, 66), (64, 3)]:
        assert pair_zero_load(soc68, r, Scheme.ITB, s, d, 8) > pair_zero_load(soc68, r, Scheme.RC, s, d, 8)


@pytest.mark.parametrize("scheme", ["RC", "MTR", "VCSEP", "ITB", "NONE"])
def test_model_matches_simulation_on_sample_pairs(scheme):
    cfg = SimConfig().with_scheme(scheme)
    topo = build_topology(cfg)
    routing = build_routing(cfg, topo)
    rng = random.Random(7)
    for _ in range(25):
        s, d = rng.sample(range(topo.node_count), 2)
        model = pair_zero_load(topo, routing, scheme, s, d, 8)
        assert abs(simulated(topo, scheme, s, d, 8, routing) - model) <= 2


def test_model_mean_is_pair_average(soc32):
    r = Routing(soc32)
    pairs = [(s, 31 - s) for s in range(32)]
    expect = sum(pair_zero_load(soc32, r, Scheme.RC, s, d, 4) for s, d in pairs) / 32
    assert zero_load_model(soc32, Scheme.RC, Pattern.BIT_COMPLEMENT, 4, r) == pytest.approx(expect)
