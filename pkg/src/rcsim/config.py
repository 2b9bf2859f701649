"""Structured run configuration (YAML) with validation and presets."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .network import Scheme
from .topology import ChipletSpec, RoutingPolicy, SocTopology, build_soc
from .traffic import Pattern, TrafficSpec


class ConfigError(ValueError):
    """Invalid configuration; the message lists every violation."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ChipletConfig(_Model):
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    boundary_routers: List[int] = Field(min_length=1)
    routing_policy: Optional[RoutingPolicy] = None
    vc_count: Optional[int] = Field(default=None, ge=1)
    vc_depth: Optional[int] = Field(default=None, ge=1)


class TsvEntry(_Model):
    chiplet: int
    router: int
    interposer: int


class InterposerConfig(_Model):
    width: int = Field(default=4, ge=1)
    height: int = Field(default=4, ge=1)
    routing_policy: RoutingPolicy = RoutingPolicy.XY


class TopologyConfig(_Model):
    preset: Optional[Literal["soc68", "soc272", "soc32"]] = "soc68"
    chiplets: Optional[List[ChipletConfig]] = None
    interposer: Optional[InterposerConfig] = None
    tsv_map: Optional[List[TsvEntry]] = None
    routing_policy: RoutingPolicy = RoutingPolicy.XY
    vc_count: int = Field(default=2, ge=1)
    vc_depth: int = Field(default=4, ge=1)
    opic_reach: int = Field(default=2, ge=1)

    @model_validator(mode="after")
    def _preset_or_explicit(self) -> "TopologyConfig":
        if self.chiplets is None and self.preset is None:
            raise ValueError("give either a preset or a chiplet list")
        if self.chiplets is not None and self.preset is not None:
            raise ValueError("preset and explicit chiplets are mutually exclusive; set preset: null")
        return self


class SchemeConfig(_Model):
    name: Scheme = Scheme.RC
    rc_capacity: int = 4
    opic_wire_bits: int = Field(default=2, ge=1)
    opic_pipeline: int = Field(default=1, ge=1)
    itb_capacity: int = Field(default=4, ge=0)
    retry_delay: int = Field(default=32, ge=1)
    restrictions: Optional[str] = None
    compare: Optional[List[Scheme]] = None

    @field_validator("name", mode="before")
    @classmethod
    def _upper(cls, v):
        return v.upper() if isinstance(v, str) else v

    @field_validator("rc_capacity")
    @classmethod
    def _capacity(cls, v: int) -> int:
        if v < 1:
            raise ValueError("rc_capacity must be >= 1")
        return v


class TrafficConfig(_Model):
    pattern: Pattern = Pattern.UNIFORM_RANDOM
    rate: float = Field(default=0.1, gt=0, le=1)
    rates: List[float] = Field(default_factory=lambda: [round(0.05 * k, 2) for k in range(1, 11)])
    patterns: Optional[List[Pattern]] = None
    packet_flits: int = Field(default=8, ge=1)
    scenario: Optional[str] = None

    @field_validator("pattern", mode="before")
    @classmethod
    def _pattern(cls, v):
        return Pattern.parse(v) if isinstance(v, str) else v

    @field_validator("patterns", mode="before")
    @classmethod
    def _patterns(cls, v):
        if v is None:
            return v
        return [Pattern.parse(x) if isinstance(x, str) else x for x in v]

    @field_validator("rates")
    @classmethod
    def _rates(cls, v: List[float]) -> List[float]:
        if not v or any(not 0 < r <= 1 for r in v):
            raise ValueError("rates must be non-empty and within (0, 1]")
        if v != sorted(v):
            raise ValueError("rates must be ascending")
        return v


class EngineConfig(_Model):
    seed: int = 1
    warmup: int = Field(default=1000, ge=0)
    measure: int = Field(default=10_000, ge=0)
    drain_max: int = Field(default=100_000, ge=0)
    sample_period: int = Field(default=100, ge=1)
    window: int = Field(default=10_000, ge=1)
    starvation_window: int = Field(default=10_000, ge=0)
    strict: bool = False


class OutputConfig(_Model):
    dir: str = "out"
    verbosity: int = Field(default=0, ge=0)
    heatmap: bool = True
    links: bool = True


class SimConfig(_Model):
    topology: TopologyConfig = Field(default_factory=TopologyConfig)
    scheme: SchemeConfig = Field(default_factory=SchemeConfig)
    traffic: TrafficConfig = Field(default_factory=TrafficConfig)
    engine: EngineConfig = Field(default_factory=EngineConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    # directory that relative file names are resolved against
    base_dir: str = Field(default=".", exclude=True)

    @field_validator("scheme", mode="before")
    @classmethod
    def _scheme_shorthand(cls, v):
        if isinstance(v, str):
            return {"name": v}
        return v

    @model_validator(mode="after")
    def _cross_checks(self) -> "SimConfig":
        schemes = set(self.scheme.compare or []) | {self.scheme.name}
        if Scheme.VCSEP in schemes:
            counts = {self.topology.vc_count}
            for c in self.topology.chiplets or []:
                if c.vc_count is not None:
                    counts.add(c.vc_count)
            if any(n % 2 for n in counts):
                raise ValueError("vc_count must be even for VCSEP")
        if self.scheme.restrictions and not self.resolve(self.scheme.restrictions).is_file():
            raise ValueError(f"restriction file not found: {self.scheme.restrictions}")
        if self.traffic.scenario and not self.resolve(self.traffic.scenario).is_file():
            raise ValueError(f"scenario file not found: {self.traffic.scenario}")
        return self

    # -- helpers -----------------------------------------------------------
    def resolve(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def with_rate(self, rate: float) -> "SimConfig":
        return self.model_copy(update={"traffic": self.traffic.model_copy(update={"rate": rate})}, deep=True)

    def with_scheme(self, scheme: Scheme) -> "SimConfig":
        return self.model_copy(update={"scheme": self.scheme.model_copy(update={"name": Scheme(scheme)})}, deep=True)

    def with_pattern(self, pattern: Pattern) -> "SimConfig":
        return self.model_copy(update={"traffic": self.traffic.model_copy(update={"pattern": Pattern(pattern)})}, deep=True)

    def with_seed(self, seed: int) -> "SimConfig":
        return self.model_copy(update={"engine": self.engine.model_copy(update={"seed": seed})}, deep=True)

    def traffic_spec(self) -> TrafficSpec:
        e = self.engine
        return TrafficSpec(
            pattern=self.traffic.pattern,
            rate=self.traffic.rate,
            packet_flits=self.traffic.packet_flits,
            seed=e.seed,
            warmup=e.warmup,
            measure=e.measure,
            drain_max=e.drain_max,
        )

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


# ----------------------------------------------------------------------
# presets
# ----------------------------------------------------------------------
FOUR_BY_FOUR = (1, 7, 8, 14)
EIGHT_BY_EIGHT = (2, 5, 16, 23, 40, 47, 58, 61)

PRESETS: Dict[str, Dict[str, Any]] = {
    "soc68": {
        "chiplets": [(4, 4, FOUR_BY_FOUR)] * 4 + [(2, 2, (0, 1, 2, 3))],
        "interposer": (4, 4),
        "tsv_map": None,
    },
    "soc272": {
        "chiplets": [(8, 8, EIGHT_BY_EIGHT)] * 4 + [(4, 4, FOUR_BY_FOUR)],
        "interposer": (8, 4),
        "tsv_map": None,
    },
    "soc32": {
        "chiplets": [(4, 4, (2, 14)), (4, 4, (1, 13))],
        "interposer": (2, 2),
        "tsv_map": {(0, 2): 0, (0, 14): 2, (1, 1): 1, (1, 13): 3},
    },
}


def build_topology(config: SimConfig) -> SocTopology:
    t = config.topology
    if t.preset is not None:
        p = PRESETS[t.preset]
        chiplets = [
            ChipletConfig(width=w, height=h, boundary_routers=list(b)) for w, h, b in p["chiplets"]
        ]
        iw, ih = p["interposer"]
        interposer = t.interposer or InterposerConfig(width=iw, height=ih)
        tsv = p["tsv_map"]
    else:
        chiplets = t.chiplets
        interposer = t.interposer or InterposerConfig()
        tsv = None
    if t.tsv_map is not None:
        tsv = {(e.chiplet, e.router): e.interposer for e in t.tsv_map}
    specs = [
        ChipletSpec(
            i,
            c.width,
            c.height,
            tuple(c.boundary_routers),
            c.routing_policy or t.routing_policy,
            c.vc_count or t.vc_count,
            c.vc_depth or t.vc_depth,
        )
        for i, c in enumerate(chiplets)
    ]
    return build_soc(
        specs,
        interposer.width,
        interposer.height,
        tsv_map=tsv,
        interposer_policy=interposer.routing_policy,
        interposer_vc_count=t.vc_count,
        interposer_vc_depth=t.vc_depth,
        opic_reach=t.opic_reach,
    )


# ----------------------------------------------------------------------
# loading
# ----------------------------------------------------------------------
def _line_index(text: str) -> Dict[Tuple[Union[str, int], ...], int]:
    """Map key paths to 1-based source lines."""
    index: Dict[Tuple, int] = {}

    def walk(node, path):
        index[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                index[path + (k.value,)] = k.start_mark.line + 1
                walk(v, path + (k.value,))
                index[path + (k.value,)] = k.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return index


def _describe(err: ValidationError, lines: Dict[Tuple, int], source: str) -> str:
    out = []
    for e in err.errors():
        loc = tuple(x for x in e["loc"] if not (isinstance(x, str) and x.startswith("function-")))
        key = ".".join(str(x) for x in loc) or "<root>"
        line = None
        for n in range(len(loc), -1, -1):
            line = lines.get(tuple(str(x) if isinstance(x, str) else x for x in loc[:n]))
            if line is not None:
                break
        where = f"{source}:{line}" if line else source
        msg = e["msg"].removeprefix("Value error, ")
        out.append(f"{where}: {key}: {msg}")
    return "\n".join(out)


def _parse_override(item: str) -> Tuple[List[str], Any]:
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not key=value")
    key, raw = item.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override '{item}' has an empty key")
    return path, yaml.safe_load(raw) if raw.strip() else None


def apply_overrides(data: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    for item in overrides:
        path, value = _parse_override(item)
        node = data
        for p in path[:-1]:
            cur = node.get(p)
            if isinstance(cur, str) and p == "scheme":
                cur = {"name": cur}
            if not isinstance(cur, dict):
                cur = {}
            node[p] = cur
            node = cur
        node[path[-1]] = value
    return data


def config_from_dict(
    data: Optional[Dict[str, Any]],
    *,
    base_dir: Union[str, Path] = ".",
    lines: Optional[Dict[Tuple, int]] = None,
    source: str = "<config>",
) -> SimConfig:
    data = dict(data or {})
    data["base_dir"] = str(base_dir)
    try:
        return SimConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_describe(err, lines or {}, source)) from None


def load_config(path: Union[str, Path], overrides: Optional[List[str]] = None) -> SimConfig:
    """Parse, default and validate a YAML config file."""
    path = Path(path)
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
        lines = _line_index(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: {err}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: top level must be a mapping")
    if overrides:
        data = apply_overrides(data, overrides)
    return config_from_dict(data, base_dir=path.parent, lines=lines, source=str(path))
