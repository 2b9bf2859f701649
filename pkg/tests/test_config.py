import pytest

from rcsim.config import ConfigError, SimConfig, build_topology, load_config
from rcsim.network import Scheme
from rcsim.traffic import Pattern


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_file_gives_defaults(tmp_path):
    cfg = load_config(write(tmp_path, ""))
    assert cfg.topology.preset == "soc68"
    assert cfg.scheme.name == Scheme.RC and cfg.scheme.rc_capacity == 4
    assert build_topology(cfg).node_count == 68


def test_scheme_shorthand_and_aliases(tmp_path):
    cfg = load_config(write(tmp_path, "scheme: mtr\ntraffic:\n  pattern: bc\n"))
    assert cfg.scheme.name == Scheme.MTR
    assert cfg.traffic.pattern == Pattern.BIT_COMPLEMENT


def test_overrides(tmp_path):
    cfg = load_config(write(tmp_path, "scheme: VCSEP\n"), ["scheme.rc_capacity=2", "traffic.rate=0.3"])
    assert cfg.scheme.name == Scheme.VCSEP and cfg.scheme.rc_capacity == 2
    assert cfg.traffic.rate == 0.3


def test_errors_carry_line_numbers(tmp_path):
    path = write(tmp_path, "scheme:\n  name: RC\n  rc_capacity: 0\n")
    with pytest.raises(ConfigError, match=r"run.yaml:3: scheme.rc_capacity"):
        load_config(path)


def test_all_violations_reported(tmp_path):
    path = write(tmp_path, "traffic:\n  rate: 2\nengine:\n  warmup: -1\n")
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert "traffic.rate" in str(err.value) and "engine.warmup" in str(err.value)


@pytest.mark.parametrize(
    "text, message",
    [
        ("bogus: 1\n", "bogus"),
        ("- 1\n", "mapping"),
        ("scheme: VCSEP\ntopology:\n  vc_count: 3\n", "even"),
        ("scheme:\n  restrictions: nope.mtr\n", "not found"),
        ("traffic:\n  rates: [0.2, 0.1]\n", "ascending"),
        ("topology:\n  preset: null\n", "preset or a chiplet"),
    ],
)
def test_rejected_configs(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message):
        load_config(write(tmp_path, text))


def test_explicit_chiplets(tmp_path):
    text = """
topology:
  preset: null
  chiplets:
    - {width: 2, height: 2, boundary_routers: [0]}
    - {width: 2, height: 2, boundary_routers: [3], vc_count: 4}
  interposer: {width: 2, height: 1}
"""
    topo = build_topology(load_config(write(tmp_path, text)))
    assert topo.node_count == 8
    assert len(topo.boundaries[0]) == 1 and len(topo.boundaries[1]) == 1


def test_relative_paths_resolve_next_to_the_file(tmp_path):
    (tmp_path / "flows.csv").write_text("0,1,0,1\n")
    cfg = load_config(write(tmp_path, "traffic:\n  scenario: flows.csv\n"))
    assert cfg.resolve(cfg.traffic.scenario) == tmp_path / "flows.csv"


def test_yaml_round_trip(tmp_path):
    cfg = SimConfig().with_scheme(Scheme.ITB).with_rate(0.25)
    again = load_config(write(tmp_path, cfg.to_yaml()))
    assert again.model_dump() == cfg.model_dump()
