"""Regenerate the shipped MTR turn-restriction tables in src/rcsim/data.

    python scripts/make_mtr_tables.py [preset ...] [--iterations N]

Each table is the up*/down* construction whose chiplet orders were
hill-climbed to minimise the worst channel load under uniform random and
bit-complement traffic.
"""

import argparse
from pathlib import Path

from rcsim.baselines.mtr import build_cdg, format_restrictions, search_restrictions
from rcsim.config import SimConfig
from rcsim.experiment import build_topology
from rcsim.metrics import pattern_pairs
from rcsim.routing import Routing
from rcsim.traffic import Pattern

DATA = Path(__file__).resolve().parents[1] / "src" / "rcsim" / "data"


def workloads(n):
    ur = [(s, d, 1 / (n - 1)) for s, d in pattern_pairs(Pattern.UNIFORM_RANDOM, n)]
    bc = [(s, d, 1.0) for s, d in pattern_pairs(Pattern.BIT_COMPLEMENT, n)]
    return [ur, bc]


def main():
    p = argparse.ArgumentParser()
    p.add_argument("presets", nargs="*", default=["soc32", "soc68", "soc272"])
    p.add_argument("--iterations", type=int, default=4000)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args()
    for preset in args.presets:
        cfg = SimConfig()
        cfg.topology.preset = preset
        topo = build_topology(cfg)
        rs = search_restrictions(topo, workloads(topo.node_count), args.iterations, args.seed)
        assert build_cdg(topo, Routing(topo, rs.forbidden)).acyclic
        header = (
            f"# MTR turn restrictions for the {preset} preset\n"
            f"# up*/down* construction, relaxed; orders hill-climbed for channel load "
            f"(scripts/make_mtr_tables.py --iterations {args.iterations} --seed {args.seed})\n"
        )
        (DATA / f"{preset}.mtr").write_text(header + format_restrictions(topo, rs))
        print(preset, len(rs), "turns")


if __name__ == "__main__":
    main()
