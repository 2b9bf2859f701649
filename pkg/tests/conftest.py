import pytest

from rcsim.config import SimConfig, build_topology
from rcsim.topology import ChipletSpec, RoutingPolicy, build_soc


def preset(name: str, **topology):
    cfg = SimConfig()
    cfg.topology.preset = name
    for k, v in topology.items():
        setattr(cfg.topology, k, v)
    return cfg


@pytest.fixture(scope="session")
def soc68():
    return build_topology(preset("soc68"))


@pytest.fixture(scope="session")
def soc32():
    return build_topology(preset("soc32"))


@pytest.fixture
def mesh2x2():
    """Single 2x2 chiplet on a 1x1 interposer."""
    return build_soc([ChipletSpec(0, 2, 2, (0,))], 1, 1)


def two_chiplets(policy=RoutingPolicy.XY, vc_count=2, vc_depth=4):
    return build_soc(
        [
            ChipletSpec(0, 4, 4, (2, 14), policy, vc_count, vc_depth),
            ChipletSpec(1, 4, 4, (1, 13), policy, vc_count, vc_depth),
        ],
        2,
        2,
        tsv_map={(0, 2): 0, (0, 14): 2, (1, 1): 1, (1, 13): 3},
        interposer_vc_count=vc_count,
        interposer_vc_depth=vc_depth,
    )


# -- acceptance reporting ------------------------------------------------------
_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    _, ok = _criteria.get(number, (title, True))
    _criteria[number] = (title, ok and rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")
