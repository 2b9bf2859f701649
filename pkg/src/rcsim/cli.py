"""Command-line experiment runner.

    rcsim single --config run.yaml --out results/
    rcsim sweep  --config run.yaml --override scheme.name=MTR --jobs 8
    rcsim matrix --config run.yaml --seed-list 1,2,3
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .config import ConfigError, SimConfig, config_from_dict, load_config
from .metrics import (
    SATURATION_RULE,
    run_points,
    write_heatmap,
    write_links,
    write_records,
    zero_load_model,
)
from .experiment import PointResult, build_routing, build_topology

log = logging.getLogger("rcsim")

MODES = ("single", "sweep", "matrix")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcsim", description="Chiplet NoC deadlock-avoidance simulator")
    p.add_argument("mode", choices=MODES, help="single run, rate sweep, or scheme x pattern x rate matrix")
    p.add_argument("--config", type=Path, help="YAML config file (defaults apply when omitted)")
    p.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="set a dotted config key, e.g. traffic.rate=0.3 (repeatable)",
    )
    p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    p.add_argument("--jobs", type=int, default=1, help="parallel simulation points")
    p.add_argument("--seed-list", help="comma-separated seeds; one report per seed")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _load(args) -> SimConfig:
    if args.config is not None:
        return load_config(args.config, args.override)
    from .config import apply_overrides

    return config_from_dict(apply_overrides({}, args.override), source="--override")


def _points(cfg: SimConfig, mode: str) -> List[SimConfig]:
    if mode == "single":
        return [cfg]
    if mode == "sweep":
        return [cfg.with_rate(r) for r in cfg.traffic.rates]
    schemes = cfg.scheme.compare or [cfg.scheme.name]
    patterns = cfg.traffic.patterns or [cfg.traffic.pattern]
    return [
        cfg.with_scheme(s).with_pattern(p).with_rate(r)
        for s in schemes
        for p in patterns
        for r in cfg.traffic.rates
    ]


def _write_point_files(out: Path, tag: str, cfg: SimConfig, res: PointResult, topo) -> None:
    name = f"{res.scheme}_{res.pattern}_{res.rate:g}{tag}"
    if res.fault:
        (out / f"fault_{name}.txt").write_text(f"{res.fault}\n\n{res.state_dump or ''}")
        return
    if cfg.output.heatmap:
        write_heatmap(out / f"heatmap_{name}.csv", res.report.per_router_residency, topo)
    if cfg.output.links:
        write_links(out / f"links_{name}.csv", res.report.per_link_utilization, topo)
    if res.deadlock_cycle:
        (out / f"deadlock_{name}.txt").write_text(
            "\n".join(map(str, res.deadlock_cycle)) + "\n"
        )


def run(cfg: SimConfig, mode: str, jobs: int = 1, seeds: Optional[Sequence[int]] = None, out: Optional[Path] = None) -> int:
    """Execute ``mode`` and write reports.  Returns the exit status."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    out = Path(out or cfg.resolve(cfg.output.dir))
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(seeds) if seeds else [cfg.engine.seed]
    topo = build_topology(cfg)
    faults = 0
    for seed in seeds:
        tag = f"_seed{seed}" if len(seeds) > 1 else ""
        points = [c.with_seed(seed) for c in _points(cfg, mode)]
        results = run_points(points, jobs)
        write_records(out / f"report{tag}.csv", [r.record for r in results])
        for c, r in zip(points, results):
            if r.fault:
                faults += 1
                log.error("hard fault at %s/%s rate %g: %s", r.scheme, r.pattern, r.rate, r.fault)
            _write_point_files(out, tag, c, r, topo)
    if mode == "sweep":
        routing = build_routing(cfg, topo)
        zl = zero_load_model(topo, cfg.scheme.name, cfg.traffic.pattern, cfg.traffic.packet_flits, routing)
        (out / "zero_load.txt").write_text(f"{zl:.6g}\n# {SATURATION_RULE}\n")
    return 1 if faults else 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        seeds = [int(s) for s in args.seed_list.split(",") if s.strip()] if args.seed_list else None
    except (ConfigError, ValueError, OSError) as err:
        print(f"rcsim: {err}", file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("rcsim: --jobs must be >= 1", file=sys.stderr)
        return 2
    return run(cfg, args.mode, args.jobs, seeds, args.out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
