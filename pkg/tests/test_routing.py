from hypothesis import given, settings, strategies as st

from rcsim.routing import Routing
from rcsim.topology import LOCAL, TSV

from conftest import two_chiplets
from rcsim.topology import RoutingPolicy


def _walk_ok(topo, path, src, dst):
    routers = [r for r, _ in path]
    assert len(routers) == len(set(routers)), "route revisits a router"
    assert routers[0] == src and path[-1] == (dst, LOCAL)
    for (r, o), (r2, _) in zip(path, path[1:]):
        assert topo.links[r][o][0] == r2


def test_every_pair_routable_and_loop_free(soc68):
    routing = Routing(soc68)
    n = soc68.node_count
    for s in range(n):
        for d in range(n):
            if s != d:
                _walk_ok(soc68, routing.paths(s, d)[0], s, d)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 31), st.integers(0, 31))
def test_inter_chiplet_path_uses_one_egress_and_ingress(s, d):
    topo = two_chiplets()
    if topo.router_chiplet[s] == topo.router_chiplet[d]:
        return
    routing = Routing(topo)
    path = routing.paths(s, d)[0]
    tsvs = [(r, o) for r, o in path if o >= TSV and topo.router_chiplet[r] >= 0]
    assert tsvs == [(routing.egress(s), TSV)]
    entered = [r for r, _ in path if topo.router_chiplet[r] == topo.router_chiplet[d]]
    assert entered[0] == routing.ingress(routing.egress(s), d)


def test_adaptive_paths_include_xy_and_yx():
    topo = two_chiplets(RoutingPolicy.ADAPTIVE_XY_YX)
    paths = Routing(topo).paths(0, 15, adaptive_chiplets=True)
    firsts = {p[0][1] for p in paths}
    assert len(firsts) == 2


def test_hop_count_matches_mesh_distance():
    topo = two_chiplets()
    routing = Routing(topo)
    assert routing.hop_count(0, 15) == 7  # 6 links, 7 routers
