import pytest

from rcsim.topology import (
    E, LOCAL, N, S, TSV, W,
    ChipletSpec,
    RoutingPolicy,
    TopologyError,
    assign_opic_trees,
    build_soc,
    parse_port,
    port_name,
    route_next_hop,
    select_boundary,
)

from conftest import preset
from rcsim.config import build_topology


def test_soc68_counts(soc68):
    assert (soc68.node_count, soc68.router_count) == (68, 84)


def test_soc272_counts():
    topo = build_topology(preset("soc272"))
    assert (topo.node_count, topo.router_count) == (272, 304)


def test_degenerate_soc():
    topo = build_soc([ChipletSpec(0, 1, 1, (0,))], 1, 1)
    assert (topo.node_count, topo.router_count) == (1, 2)
    assert topo.tsv_router == {0: 1}


@pytest.mark.parametrize(
    "kwargs, match",
    [
        (dict(boundary_routers=()), "at least one boundary"),
        (dict(boundary_routers=(16,)), "outside"),
        (dict(boundary_routers=(1, 1)), "duplicate"),
        (dict(boundary_routers=(0,), vc_count=0), "vc_count"),
    ],
)
def test_chiplet_spec_rejects(kwargs, match):
    with pytest.raises(TopologyError, match=match):
        ChipletSpec(0, 4, 4, **kwargs)


def test_unmapped_boundary_rejected():
    chips = [ChipletSpec(0, 2, 2, (0, 3))]
    with pytest.raises(TopologyError, match="unmapped"):
        build_soc(chips, 2, 2, tsv_map={(0, 0): 0})


def test_tsv_entry_for_non_boundary_rejected():
    chips = [ChipletSpec(0, 2, 2, (0,))]
    with pytest.raises(TopologyError, match="not a boundary"):
        build_soc(chips, 2, 2, tsv_map={(0, 0): 0, (0, 1): 1})


def test_opic_tree_8x8_fig7_children():
    plan = assign_opic_trees(ChipletSpec(0, 8, 8, (2, 5, 58, 61)))
    assert {0, 1, 3, 9, 10, 11, 18} <= set(plan.children[2])
    assert all(plan.parent[c] == 2 for c in (0, 1, 3, 9, 10, 11, 18))


def test_opic_tree_4x4_three_requesters_each(soc68):
    plan = soc68.opic_plan[0]
    for b in (1, 7, 8, 14):
        assert len(plan.requesters(b)) == 3


def test_opic_tree_single_node():
    plan = assign_opic_trees(ChipletSpec(0, 1, 1, (0,)))
    assert plan.root == [0] and plan.depth == [0] and plan.parent == [None]


def test_opic_partition(soc68):
    for ci, c in enumerate(soc68.chiplets):
        plan = soc68.opic_plan[ci]
        sizes = sum(len(plan.members(b)) for b in c.boundary_routers)
        assert sizes == c.size
        assert set(plan.root) <= set(c.boundary_routers)


def test_select_boundary_follows_tree(soc32):
    # R-6/C-0 hangs off R-2; the nearest C-1 boundary over the interposer is R-1
    src, dst = soc32.global_node(0, 6), soc32.global_node(1, 9)
    assert select_boundary(soc32, src, dst) == (soc32.global_node(0, 2), soc32.global_node(1, 1))
    # R-10/C-0 is one hop from R-14, so its tree (and egress) is R-14's
    src = soc32.global_node(0, 10)
    assert select_boundary(soc32, src, dst)[0] == soc32.global_node(0, 14)


def test_select_boundary_single_ingress():
    topo = build_soc([ChipletSpec(0, 2, 2, (0, 3)), ChipletSpec(1, 2, 2, (2,))], 2, 2)
    for s in range(4):
        for d in range(4, 8):
            assert select_boundary(topo, s, d)[1] == topo.global_node(1, 2)


def test_select_boundary_same_chiplet_is_error(soc32):
    with pytest.raises(TopologyError):
        select_boundary(soc32, 0, 1)


def test_xy_route_example():
    topo = build_soc([ChipletSpec(0, 4, 4, (0,))], 1, 1)
    r, dest, ports = 0, 3 + 2 * 4, []
    while r != dest:
        d = route_next_hop(topo, RoutingPolicy.XY, r, dest)
        ports.append(d.out_port)
        r = topo.links[r][d.out_port][0]
    assert ports == [E, E, E, N, N]
    assert route_next_hop(topo, RoutingPolicy.XY, dest, dest).out_port == LOCAL


def test_adaptive_tie_and_credit_choice():
    topo = build_soc([ChipletSpec(0, 4, 4, (0,))], 1, 1)
    same = lambda r, p: 4
    assert route_next_hop(topo, RoutingPolicy.ADAPTIVE_XY_YX, 0, 5, same).out_port == E
    skewed = lambda r, p: 0 if p == E else 3
    assert route_next_hop(topo, RoutingPolicy.ADAPTIVE_XY_YX, 0, 5, skewed).out_port == N


def test_yx_goes_vertical_first():
    topo = build_soc([ChipletSpec(0, 4, 4, (0,))], 1, 1)
    assert route_next_hop(topo, RoutingPolicy.YX, 0, 5).out_port == N


def test_route_deterministic(soc68):
    a = [route_next_hop(soc68, RoutingPolicy.XY, 0, t).out_port for t in range(1, 16)]
    b = [route_next_hop(soc68, RoutingPolicy.XY, 0, t).out_port for t in range(1, 16)]
    assert a == b


def test_route_across_subnetworks_is_error(soc68):
    with pytest.raises(TopologyError):
        route_next_hop(soc68, RoutingPolicy.XY, 0, 20)


def test_port_names_round_trip():
    for p in (N, S, E, W, LOCAL, TSV, TSV + 1):
        assert parse_port(port_name(p)) == p
