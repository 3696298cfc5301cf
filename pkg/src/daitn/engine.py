"""Deterministic discrete-event engine with CP/DP message transport."""

from __future__ import annotations

import hashlib
import heapq
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

CP = "cp"
DP = "dp"
PLANES = (CP, DP)


class SchedulingInPast(ValueError):
    pass


class Unreachable(RuntimeError):
    pass


@dataclass(order=True)
class Event:
    fire_at: float
    seq: int
    target: str = field(compare=False)
    kind: str = field(compare=False)
    body: dict = field(default_factory=dict, compare=False)
    callback: Optional[Callable[["Event"], None]] = field(default=None, compare=False, repr=False)
    cancelled: bool = field(default=False, compare=False)

    def record(self) -> dict:
        """Trace record; only plain data from the body is kept."""
        rec = {"t": self.fire_at, "seq": self.seq, "target": self.target, "kind": self.kind}
        for k, v in self.body.items():
            if isinstance(v, (str, int, float, bool)) or v is None:
                rec[k] = v
        return rec


@dataclass
class Message:
    src: str
    dst: str
    plane: str
    size_bytes: int
    body: Any = None
    category: str = "other"

    def __post_init__(self):
        if self.plane not in PLANES:
            raise ValueError(f"unknown plane {self.plane!r}")
        if not isinstance(self.size_bytes, int) or self.size_bytes <= 0:
            raise ValueError(f"message size must be a positive integer, got {self.size_bytes!r}")


def hop_time(link, size_bytes: float) -> float:
    return link.latency + size_bytes / link.bandwidth


def transfer_time(links, size_bytes: float) -> float:
    """Store-and-forward time over a path. Every caller that predicts a
    transfer goes through here so predictions and executions add the same
    floats in the same order."""
    dt = 0.0
    for link in links:
        dt += hop_time(link, size_bytes)
    return dt


def stream_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed & 0xFFFFFFFFFFFFFFFF}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class Engine:
    """Single-threaded event loop. Events are ordered by (fire_at, seq)."""

    def __init__(self, seed: int = 0, reachable: Optional[Callable[[str], bool]] = None):
        self.seed = seed
        self.now = 0.0
        self._queue: list[Event] = []
        self._seq = 0
        self._streams: dict[str, random.Random] = {}
        self.reachable = reachable or (lambda node: True)
        self.trace: list[dict] = []
        self.plane_bytes = {CP: 0, DP: 0}
        self.link_bytes: dict[tuple, int] = defaultdict(int)
        self.category_bytes: dict[tuple, int] = defaultdict(int)
        self.messages_sent = 0

    # scheduling

    def schedule(self, fire_at: float, kind: str, target: str = "engine", body: Optional[dict] = None,
                 callback: Optional[Callable[[Event], None]] = None) -> Event:
        if fire_at < self.now:
            raise SchedulingInPast(f"fire_at={fire_at} < now={self.now}")
        ev = Event(float(fire_at), self._seq, target, kind, body or {}, callback)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def after(self, delay: float, kind: str, target: str = "engine", body=None, callback=None) -> Event:
        return self.schedule(self.now + delay, kind, target, body, callback)

    @staticmethod
    def cancel(handle: Event) -> None:
        handle.cancelled = True

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def step(self) -> Optional[Event]:
        while self._queue:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            assert ev.fire_at >= self.now, "clock moved backwards"
            self.now = ev.fire_at
            if ev.callback is not None:
                ev.callback(ev)
            self.trace.append(ev.record())
            return ev
        return None

    def run_until(self, t_end: float) -> list[Event]:
        dispatched = []
        while self._queue:
            head = self._queue[0]
            if head.cancelled:
                heapq.heappop(self._queue)
                continue
            if head.fire_at > t_end:
                break
            dispatched.append(self.step())
        self.now = max(self.now, t_end)
        return dispatched

    def run(self, until: Optional[Callable[[], bool]] = None) -> list[Event]:
        """Drain the queue, or stop as soon as ``until()`` is true."""
        dispatched = []
        while self._queue and not (until and until()):
            ev = self.step()
            if ev is not None:
                dispatched.append(ev)
        return dispatched

    # randomness

    def rng(self, label: str) -> random.Random:
        if label not in self._streams:
            self._streams[label] = random.Random(stream_seed(self.seed, label))
        return self._streams[label]

    # transport

    def transmit(self, msg: Message, links, on_arrival=None, on_failure=None) -> Event:
        """Send ``msg`` along ``links`` (one link or a routed path).

        Bytes are charged per hop at send time; arrival is
        now + sum(latency + size / bandwidth). If the destination is
        unreachable when the message lands, ``on_failure`` runs instead.
        """
        if not isinstance(links, (list, tuple)):
            links = [links]
        if not self.reachable(msg.src):
            raise Unreachable(msg.src)
        if not self.reachable(msg.dst):
            raise Unreachable(msg.dst)
        for link in links:
            if msg.plane not in link.planes:
                raise ValueError(f"link {link.key} does not carry {msg.plane}")
            self.link_bytes[link.key] += msg.size_bytes
            self.plane_bytes[msg.plane] += msg.size_bytes
            self.category_bytes[(msg.plane, msg.category)] += msg.size_bytes
        self.messages_sent += 1
        dt = transfer_time(links, msg.size_bytes)

        def land(ev, msg=msg):
            if self.reachable(msg.dst):
                ev.body["delivered"] = True
                if on_arrival:
                    on_arrival(msg)
            else:
                ev.body["delivered"] = False
                if on_failure:
                    on_failure(msg)

        body = {"src": msg.src, "dst": msg.dst, "plane": msg.plane, "bytes": msg.size_bytes,
                "category": msg.category, "hops": len(links)}
        return self.schedule(self.now + dt, "arrive", msg.dst, body, land)

    def bytes_conserved(self) -> bool:
        return sum(self.link_bytes.values()) == self.plane_bytes[CP] + self.plane_bytes[DP]
