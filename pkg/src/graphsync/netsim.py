"""Deterministic discrete-event network with lossy, reordering links.

The simulator owns the clock (integer simulated milliseconds) and a
seeded RNG; a (seed, scenario) pair fully determines the event log.
Frames between agents suffer configurable latency, loss, duplication
and reordering; group partitions cut inter-group links over scheduled
windows.  Agent logic runs as cooperative callbacks on a single thread.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .wire import KIND_NAMES, frame_kind


@dataclass(frozen=True)
class LinkPolicy:
    """Per-frame link behaviour.  latency is ("fixed", ms) or
    ("uniform", lo_ms, hi_ms); probabilities are in [0, 1]."""

    latency: tuple = ("fixed", 5)
    loss: float = 0.0
    duplication: float = 0.0
    reorder: float = 0.0

    def __post_init__(self):
        for p in (self.loss, self.duplication, self.reorder):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must be within [0, 1]")
        if self.latency[0] not in ("fixed", "uniform"):
            raise ValueError(f"unknown latency distribution {self.latency[0]!r}")

    def draw_latency(self, rng: random.Random) -> int:
        if self.latency[0] == "fixed":
            return int(self.latency[1])
        return rng.randint(int(self.latency[1]), int(self.latency[2]))

    @property
    def min_latency(self) -> int:
        return int(self.latency[1])


@dataclass
class Topology:
    """Group partition of the agents; links within a group are always
    up, links across groups obey the disconnection schedules."""

    groups: dict[str, int] = field(default_factory=dict)

    def group_of(self, name: str) -> int:
        return self.groups.get(name, 0)


@dataclass(frozen=True)
class Delivery:
    time: int
    src: str
    dst: str
    frame: bytes


class NetworkSim:
    def __init__(
        self,
        seed: int,
        policy: LinkPolicy | None = None,
        topology: Topology | None = None,
    ):
        self.rng = random.Random(seed)
        self.policy = policy or LinkPolicy()
        self.topology = topology or Topology()
        self._now = 0
        self._seq = itertools.count()
        self._heap: list[tuple[int, int, int, object]] = []
        self._endpoints: dict[str, Callable[[str, bytes, int], None]] = {}
        self._partition_windows: list[tuple[int, int]] = []
        self._offline_windows: dict[int, list[tuple[int, int]]] = {}
        self._blocked_pairs: dict[frozenset, list[tuple[int, int]]] = {}
        self.event_log: list[tuple[int, str, str, str, int]] = []
        self.dropped = 0

    # -- wiring ---------------------------------------------------------

    def register(self, name: str, on_frame: Callable[[str, bytes, int], None],
                 group: int = 0) -> None:
        self._endpoints[name] = on_frame
        self.topology.groups.setdefault(name, group)

    def clock(self) -> int:
        return self._now

    def call_at(self, time: int, fn: Callable[[int], None]) -> None:
        if time < self._now:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._heap, (time, next(self._seq), 0, fn))

    def call_later(self, delay: int, fn: Callable[[int], None]) -> None:
        self.call_at(self._now + delay, fn)

    # -- partitions -------------------------------------------------------

    def set_partition(self, windows: Iterable[tuple[int, int]]) -> None:
        """Windows during which every inter-group link is down."""
        self._partition_windows = sorted(tuple(w) for w in windows)

    def set_group_offline(self, group: int, start: int, end: int) -> None:
        self._offline_windows.setdefault(group, []).append((start, end))

    def block_pair(self, a: str, b: str, start: int, end: int) -> None:
        self._blocked_pairs.setdefault(frozenset((a, b)), []).append((start, end))

    @staticmethod
    def _in_windows(windows: Iterable[tuple[int, int]], t: int) -> bool:
        return any(start <= t < end for start, end in windows)

    def connected(self, src: str, dst: str, t: int) -> bool:
        if self._in_windows(self._blocked_pairs.get(frozenset((src, dst)), ()), t):
            return False
        g_src, g_dst = self.topology.group_of(src), self.topology.group_of(dst)
        if g_src == g_dst:
            return True
        if self._in_windows(self._partition_windows, t):
            return False
        if self._in_windows(self._offline_windows.get(g_src, ()), t):
            return False
        if self._in_windows(self._offline_windows.get(g_dst, ()), t):
            return False
        return True

    # -- traffic ----------------------------------------------------------

    def send(self, frame: bytes, src: str, dst: Optional[str] = None) -> list[int]:
        """Schedule deliveries of a frame; dst None broadcasts to every
        other endpoint.  Returns the scheduled delivery times."""
        if src not in self._endpoints:
            raise KeyError(f"unregistered sender {src!r}")
        targets = [dst] if dst is not None else sorted(
            name for name in self._endpoints if name != src
        )
        times = []
        for target in targets:
            if target not in self._endpoints:
                raise KeyError(f"unregistered destination {target!r}")
            if not self.connected(src, target, self._now):
                self.dropped += 1
                continue
            copies = 1
            if self.rng.random() < self.policy.loss:
                copies = 0
                self.dropped += 1
            elif self.rng.random() < self.policy.duplication:
                copies = 2
            for _ in range(copies):
                latency = self.policy.draw_latency(self.rng)
                if self.rng.random() < self.policy.reorder:
                    latency += self.policy.draw_latency(self.rng)
                when = self._now + latency
                heapq.heappush(
                    self._heap,
                    (when, next(self._seq), 1, Delivery(when, src, target, frame)),
                )
                times.append(when)
        return times

    # -- event loop ---------------------------------------------------------

    def advance(self, until: int) -> list[Delivery]:
        """Dispatch everything scheduled up to `until` in (time,
        insertion) order; returns the frames actually delivered."""
        delivered: list[Delivery] = []
        while self._heap and self._heap[0][0] <= until:
            time, _, tag, item = heapq.heappop(self._heap)
            self._now = time
            if tag == 0:
                item(time)
                continue
            ev: Delivery = item
            if not self.connected(ev.src, ev.dst, time):
                self.dropped += 1
                continue
            kind = KIND_NAMES.get(frame_kind(ev.frame), "?")
            self.event_log.append((time, ev.src, ev.dst, kind, len(ev.frame)))
            delivered.append(ev)
            self._endpoints[ev.dst](ev.src, ev.frame, time)
        self._now = until
        return delivered

    def run_until_idle(self, hard_limit: int) -> None:
        while self._heap and self._heap[0][0] <= hard_limit:
            self.advance(self._heap[0][0])
        self._now = max(self._now, min(hard_limit, self._now))

    def write_event_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ms", "src", "dst", "kind", "size"])
            w.writerows(self.event_log)


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------


@dataclass
class EditEvent:
    agent: str
    document: str
    time: int
    changes: int


@dataclass
class TransferRequest:
    sender: str
    receivers: list[str]
    dataset: str
    time: int
    chunk_size: int
    total_bytes: int


@dataclass
class Scenario:
    seed: int = 0
    agents: list[str] = field(default_factory=list)
    groups: dict[str, int] = field(default_factory=dict)
    policy: LinkPolicy = field(default_factory=LinkPolicy)
    status_period: int = 1000
    partitions: list[tuple[int, int]] = field(default_factory=list)
    offline: list[tuple[int, int, int]] = field(default_factory=list)
    blocks: list[tuple[str, str, int, int]] = field(default_factory=list)
    edits: list[EditEvent] = field(default_factory=list)
    transfers: list[TransferRequest] = field(default_factory=list)
    run_until: int = 60_000


class ScenarioError(ValueError):
    pass


def parse_scenario(text: str) -> Scenario:
    """Line-oriented key/value scenario description; '#' starts a
    comment.  See README for the full grammar."""
    sc = Scenario()
    latency: tuple = ("fixed", 5)
    loss = dup = reorder = 0.0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key, args = parts[0], parts[1:]
        try:
            if key == "seed":
                sc.seed = int(args[0])
            elif key == "agent":
                name = args[0]
                group = int(args[2]) if len(args) >= 3 and args[1] == "group" else 0
                sc.agents.append(name)
                sc.groups[name] = group
            elif key == "latency":
                if args[0] == "fixed":
                    latency = ("fixed", int(args[1]))
                elif args[0] == "uniform":
                    latency = ("uniform", int(args[1]), int(args[2]))
                else:
                    raise ScenarioError(f"line {lineno}: bad latency {args[0]!r}")
            elif key == "loss":
                loss = float(args[0])
            elif key == "duplication":
                dup = float(args[0])
            elif key == "reorder":
                reorder = float(args[0])
            elif key == "status-period":
                sc.status_period = int(args[0])
            elif key == "partition":
                sc.partitions.append((int(args[0]), int(args[1])))
            elif key == "offline":
                sc.offline.append((int(args[0]), int(args[1]), int(args[2])))
            elif key == "block":
                sc.blocks.append((args[0], args[1], int(args[2]), int(args[3])))
            elif key == "edit":
                sc.edits.append(EditEvent(args[0], args[1], int(args[2]), int(args[3])))
            elif key == "transfer":
                sc.transfers.append(
                    TransferRequest(
                        args[0], args[1].split(","), args[2], int(args[3]),
                        int(args[4]), int(args[5]),
                    )
                )
            elif key == "run-until":
                sc.run_until = int(args[0])
            else:
                raise ScenarioError(f"line {lineno}: unknown key {key!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"line {lineno}: malformed {key!r} entry") from exc
    sc.policy = LinkPolicy(latency, loss, dup, reorder)
    return sc
