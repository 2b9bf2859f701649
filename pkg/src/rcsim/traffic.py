"""Synthetic traffic: destination patterns, Bernoulli injection and the
warmup / measure / drain phase driver."""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .network import Network


class Pattern(str, Enum):
    UNIFORM_RANDOM = "UNIFORM_RANDOM"
    BIT_COMPLEMENT = "BIT_COMPLEMENT"
    TRANSPOSE = "TRANSPOSE"
    BIT_REVERSE = "BIT_REVERSE"
    SHUFFLE = "SHUFFLE"
    TORNADO = "TORNADO"
    NEIGHBOR = "NEIGHBOR"

    @classmethod
    def parse(cls, name: str) -> "Pattern":
        key = name.strip().upper()
        return cls(_ALIASES.get(key, key))


_ALIASES = {"UR": "UNIFORM_RANDOM", "BC": "BIT_COMPLEMENT"}

ALL_PATTERNS = tuple(Pattern)


def bit_width(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


def _permute(pattern: Pattern, src: int, n: int) -> int:
    w = bit_width(n)
    mask = (1 << w) - 1
    if pattern == Pattern.BIT_COMPLEMENT:
        d = ~src & mask
    elif pattern == Pattern.TRANSPOSE:
        h = w // 2
        lo = src & ((1 << h) - 1)
        hi = src >> h
        d = (lo << (w - h)) | hi
    elif pattern == Pattern.BIT_REVERSE:
        d = int(format(src, f"0{w}b")[::-1], 2)
    elif pattern == Pattern.SHUFFLE:
        d = ((src << 1) | (src >> (w - 1))) & mask
    elif pattern == Pattern.TORNADO:
        d = (src + (n + 1) // 2 - 1) % n
    elif pattern == Pattern.NEIGHBOR:
        d = (src + 1) % n
    else:
        raise ValueError(pattern)
    d %= n
    if d == src:
        d = (d + 1) % n
    return d


def gen_destination(pattern: Pattern, src: int, node_count: int, rng: Optional[random.Random] = None) -> int:
    """Destination for one packet; permutation patterns ignore ``rng``."""
    if node_count < 2:
        raise ValueError("need at least two nodes")
    if pattern == Pattern.UNIFORM_RANDOM:
        d = rng.randrange(node_count - 1)
        return d + 1 if d >= src else d
    return _permute(Pattern(pattern), src, node_count)


def injection_tick(p: float, rng: random.Random) -> bool:
    """One Bernoulli trial with success probability ``p``."""
    return p > 0 and rng.random() < p


def node_rng(seed: int, node: int) -> random.Random:
    """Independent per-node stream derived from (seed, node)."""
    state = np.random.SeedSequence([seed, node]).generate_state(2)
    return random.Random(int(state[0]) << 32 | int(state[1]))


def geometric_gap(p: float, rng: random.Random) -> int:
    """Cycles until the next success of a per-cycle Bernoulli(p) process.
    Same distribution as running one trial per cycle, far fewer draws."""
    if p >= 1.0:
        return 1
    u = rng.random()
    return int(math.log1p(-u) / math.log1p(-p)) + 1


@dataclass
class TrafficSpec:
    pattern: Pattern = Pattern.UNIFORM_RANDOM
    rate: float = 0.1
    packet_flits: int = 8
    seed: int = 1
    warmup: int = 1000
    measure: int = 10_000
    drain_max: int = 100_000

    def __post_init__(self) -> None:
        self.pattern = Pattern.parse(self.pattern) if isinstance(self.pattern, str) else self.pattern
        if not 0 <= self.rate <= 1:
            raise ValueError("rate must lie in [0, 1]")
        if self.packet_flits < 1:
            raise ValueError("packet_flits must be >= 1")


@dataclass(frozen=True)
class Flow:
    src: int
    dst: int
    start_cycle: int
    count: int


def load_scenario(path) -> List[Flow]:
    """Read ``src,dst,start_cycle,count`` records; '#' starts a comment."""
    flows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [x.strip() for x in line.split(",")]
        if parts[0].lower() == "src":
            continue
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected src,dst,start_cycle,count")
        try:
            flows.append(Flow(*(int(x) for x in parts)))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-integer field") from None
    return flows


def save_scenario(path, flows: Sequence[Flow]) -> None:
    lines = ["src,dst,start_cycle,count"]
    lines += [f"{f.src},{f.dst},{f.start_cycle},{f.count}" for f in flows]
    Path(path).write_text("\n".join(lines) + "\n")


class TrafficGenerator:
    """Creates packets on a network according to a traffic spec or a scenario.

    Each source (node, or flow for scenarios) draws geometric gaps from its
    own RNG stream, so arrival instants are known ahead of time and idle
    stretches can be skipped.
    """

    def __init__(self, net: Network, spec: TrafficSpec, flows: Optional[Sequence[Flow]] = None) -> None:
        self.net = net
        self.spec = spec
        self.p = spec.rate / spec.packet_flits
        n = net.topo.node_count
        self.rngs = [node_rng(spec.seed, v) for v in range(n)]
        self._heap: List[Tuple[int, int, int]] = []  # (time, source index, node)
        self.flows = list(flows) if flows is not None else None
        self._left: List[int] = []
        if self.p <= 0:
            return
        if self.flows is None:
            for v in range(n):
                heapq.heappush(self._heap, (geometric_gap(self.p, self.rngs[v]) - 1, v, v))
        else:
            for i, f in enumerate(self.flows):
                if not (0 <= f.src < n and 0 <= f.dst < n) or f.src == f.dst:
                    raise ValueError(f"bad flow {f}")
                self._left.append(f.count)
                if f.count > 0:
                    t0 = f.start_cycle + geometric_gap(self.p, self.rngs[f.src]) - 1
                    heapq.heappush(self._heap, (t0, i, f.src))

    def next_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def emit(self, t: int, measured: bool) -> int:
        """Create every packet due at cycle ``t``."""
        heap = self._heap
        made = 0
        net = self.net
        n = net.topo.node_count
        while heap and heap[0][0] <= t:
            when, idx, node = heapq.heappop(heap)
            rng = self.rngs[node]
            if self.flows is None:
                dst = gen_destination(self.spec.pattern, node, n, rng)
            else:
                dst = self.flows[idx].dst
            pkt = net.new_packet(node, dst, self.spec.packet_flits)
            pkt.measured = measured
            net.ni_enqueue(pkt, t)
            made += 1
            if self.flows is not None:
                self._left[idx] -= 1
                if self._left[idx] <= 0:
                    continue
            heapq.heappush(heap, (when + geometric_gap(self.p, rng), idx, node))
        return made


@dataclass
class RunOutcome:
    measured: List = field(default_factory=list)
    verdict: str = "LIVE"
    deadlock_cycle: Optional[List] = None
    residue_flits: int = 0
    residue_packets: int = 0
    drain_cycles: int = 0
    accepted_flits: int = 0
    offered_flits: int = 0
    cycles: int = 0

    @property
    def drained(self) -> bool:
        return self.residue_flits == 0 and self.residue_packets == 0


def run_phases(
    net: Network,
    spec: TrafficSpec,
    flows: Optional[Sequence[Flow]] = None,
    watchdog=None,
) -> RunOutcome:
    """Warmup, measurement (statistics on packets created here), then
    drain with injection off."""
    gen = TrafficGenerator(net, spec, flows)
    out = RunOutcome()
    lo, hi = spec.warmup, spec.warmup + spec.measure
    net.collect = True
    net.window = (lo, hi)
    measured = out.measured

    def on_deliver(pkt, t):
        if pkt.measured:
            measured.append(pkt)
        if lo <= t < hi:
            out.accepted_flits += pkt.flits

    net.on_deliver = on_deliver

    def advance(limit: int, generating: bool) -> bool:
        """Run until ``limit``; in drain mode stop once empty."""
        while net.now < limit:
            t = net.now
            if watchdog is not None and t >= watchdog.next_sample:
                watchdog.sample(net)
            if generating:
                made = gen.emit(t, lo <= t < hi)
                if made and lo <= t < hi:
                    out.offered_flits += made * spec.packet_flits
            elif net.quiet() and not net.alive:
                return True
            net.step()
            if net.frozen():
                nxt = limit
                if generating:
                    g = gen.next_time()
                    if g is not None:
                        nxt = min(nxt, g)
                timer = net.next_timer()
                if timer is not None:
                    nxt = min(nxt, timer)
                if watchdog is not None:
                    nxt = min(nxt, max(watchdog.next_sample, net.now))
                if nxt > net.now:
                    net.skip_to(nxt)
        return False

    advance(hi, True)
    start = net.now
    advance(hi + spec.drain_max, False)
    out.drain_cycles = net.now - start
    out.residue_flits, out.residue_packets = net.residue()
    out.cycles = net.now
    if watchdog is not None:
        out.verdict = watchdog.verdict
        out.deadlock_cycle = watchdog.cycle_channels
    return out
