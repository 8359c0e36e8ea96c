"""In-process message fabric: addressed endpoints, per-link FIFO, acks and a deterministic harness."""

from __future__ import annotations

import random
import threading
from collections import deque
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Protocol


class Kind(Enum):
    XACT = "XACT"
    ANTI_XACT = "ANTI_XACT"
    CANCELBACK = "CANCELBACK"
    ACK = "ACK"
    GVT_REQUEST = "GVT_REQUEST"
    GVT_PARAM_REQUEST = "GVT_PARAM_REQUEST"
    GVT_PARAM_REPLY = "GVT_PARAM_REPLY"
    GVT = "GVT"
    FORCE_GVT_AT = "FORCE_GVT_AT"
    END_BY_XACT = "END_BY_XACT"
    END_CONFIRM = "END_CONFIRM"
    REPORT_REQUEST = "REPORT_REQUEST"
    REPORT_REPLY = "REPORT_REPLY"
    USER = "USER"
    ERROR = "ERROR"
    STOP = "STOP"


ACKED_KINDS = frozenset({Kind.XACT, Kind.ANTI_XACT, Kind.CANCELBACK})


class TransportError(RuntimeError):
    """Send to an unknown or closed endpoint."""


@dataclass(frozen=True)
class Envelope:
    kind: Kind
    sender: str
    dest: str
    seq: int
    payload: Any = None
    deliver_at: int = 0


@dataclass
class AckLedger:
    """Unacknowledged transaction-carrying sends per destination: seq -> simulation time."""

    pending: dict[str, dict[int, int]] = field(default_factory=dict)

    def record(self, dest: str, seq: int, time: int) -> None:
        self.pending.setdefault(dest, {})[seq] = time

    def ack(self, dest: str, seq: int) -> int | None:
        times = self.pending.get(dest)
        if times is None:
            return None
        return times.pop(seq, None)

    def min_time(self) -> int | None:
        return min((t for times in self.pending.values() for t in times.values()), default=None)

    def is_empty(self) -> bool:
        return not any(self.pending.values())


class Network:
    """Registry of endpoints sharing a step clock used for delayed delivery."""

    def __init__(self, delays: Mapping[tuple[str, str], int] | None = None) -> None:
        self.endpoints: dict[str, Endpoint] = {}
        self.delays = dict(delays or {})
        self.now = 0
        self.lock = threading.RLock()
        self.sent_log: list[Envelope] = []
        self.record = False

    def endpoint(self, name: str) -> Endpoint:
        if name in self.endpoints:
            raise TransportError(f"endpoint {name} already exists")
        ep = Endpoint(name, self)
        self.endpoints[name] = ep
        return ep

    def pending(self) -> int:
        with self.lock:
            return sum(len(ep.mailbox) for ep in self.endpoints.values())

    def advance(self) -> None:
        self.now += 1


class Endpoint:
    def __init__(self, name: str, network: Network) -> None:
        self.name = name
        self.network = network
        self.mailbox: deque[Envelope] = deque()
        self.ledger = AckLedger()
        self.closed = False
        self._marked = False
        self._seq: dict[str, int] = {}
        self._ready = threading.Condition(network.lock)

    def send(self, dest: str, kind: Kind, payload: Any = None, *, time: int | None = None) -> Envelope:
        net = self.network
        with net.lock:
            target = net.endpoints.get(dest)
            if target is None:
                raise TransportError(f"unknown destination {dest}")
            if target.closed or self.closed:
                raise TransportError(f"send from {self.name} to closed endpoint {dest}")
            seq = self._seq.get(dest, 0) + 1
            self._seq[dest] = seq
            delay = net.delays.get((self.name, dest), 0)
            env = Envelope(kind, self.name, dest, seq, payload, net.now + delay)
            if kind in ACKED_KINDS:
                if time is None:
                    raise ValueError(f"{kind.value} send needs a simulation time")
                self.ledger.record(dest, seq, time)
            target.mailbox.append(env)
            if net.record:
                net.sent_log.append(env)
            target._ready.notify_all()
        return env

    def drain(self) -> list[Envelope]:
        """Remove and return every deliverable envelope, keeping per-link order.

        A closed endpoint hands out what is left, then one STOP marker addressed to itself.
        """
        net = self.network
        with net.lock:
            if not self.mailbox:
                return self._closed_marker()
            out: list[Envelope] = []
            keep: deque[Envelope] = deque()
            held: set[str] = set()
            for env in self.mailbox:
                if env.sender in held or env.deliver_at > net.now:
                    held.add(env.sender)
                    keep.append(env)
                else:
                    out.append(env)
            self.mailbox = keep
            if not keep:
                out.extend(self._closed_marker())
            return out

    def _closed_marker(self) -> list[Envelope]:
        if not self.closed or self._marked:
            return []
        self._marked = True
        return [Envelope(Kind.STOP, self.name, self.name, 0)]

    def wait(self, timeout: float) -> None:
        with self.network.lock:
            if not self.mailbox:
                self._ready.wait(timeout)

    def close(self) -> None:
        with self.network.lock:
            self.closed = True


class Actor(Protocol):
    name: str

    def step(self) -> bool:
        """Run one loop iteration; return True if anything happened."""


class World:
    """Deterministic single-threaded scheduler over actors sharing a network."""

    def __init__(
        self,
        network: Network,
        actors: list[Actor],
        *,
        seed: int = 0,
        weights: Mapping[str, int] | None = None,
        step_seconds: float = 0.001,
    ) -> None:
        self.network = network
        self.actors = {a.name: a for a in actors}
        self.rng = random.Random(seed)
        self.weights = dict(weights or {})
        self.step_seconds = step_seconds
        self.steps = 0
        self.idle_run = 0
        self._round: list[str] = []
        self.trace: list[tuple[int, str, bool]] | None = None
        self.current: str | None = None

    def now(self) -> float:
        """Virtual seconds elapsed, one step_seconds per harness step."""
        return self.steps * self.step_seconds

    def _next_actor(self) -> str:
        if not self._round:
            names = [n for n in self.actors for _ in range(max(1, self.weights.get(n, 1)))]
            self.rng.shuffle(names)
            self._round = names
        return self._round.pop()

    def _round_size(self) -> int:
        return sum(max(1, self.weights.get(n, 1)) for n in self.actors)

    def step(self) -> bool:
        name = self._next_actor()
        self.current = name
        try:
            progressed = self.actors[name].step()
        finally:
            self.current = None
        self.steps += 1
        self.network.advance()
        if self.trace is not None:
            self.trace.append((self.steps, name, progressed))
        if progressed:
            self.idle_run = 0
            return True
        self.idle_run += 1
        if self.idle_run < 2 * self._round_size():
            return True
        return self.network.pending() > 0

    def run(self, max_steps: int, on_quiescence: Callable[[], bool] | None = None) -> int:
        """Step until quiescent and on_quiescence declines to continue, or max_steps."""
        while self.steps < max_steps:
            if not harness_step(self):
                if on_quiescence is None or not on_quiescence():
                    return self.steps
                self.idle_run = 0
        raise TimeoutError(f"harness did not settle within {max_steps} steps")


def harness_step(world: World) -> bool:
    return world.step()
