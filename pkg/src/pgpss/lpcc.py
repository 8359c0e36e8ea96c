"""Shock Resistant Time Warp control: sensors, indicators, clustered state space and actuator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from pgpss import logs

log = logs.get(logs.LP_LPCC)
log_space = logs.get(logs.LP_LPCC_STATESPACE)

Z_95 = 1.96
UNBOUNDED_TEXT = "9223372036854775807"
DISTANCE_COMPONENTS = slice(2, 8)


@dataclass
class SensorSet:
    committed_moves: int = 0
    simulated_moves: int = 0
    xacts_sent: int = 0
    anti_xacts_sent: int = 0
    xacts_received: int = 0
    anti_xacts_received: int = 0
    moves_rolledback: int = 0

    def minus(self, other: SensorSet) -> SensorSet:
        return SensorSet(*(getattr(self, f.name) - getattr(other, f.name) for f in fields(self)))

    def copy(self) -> SensorSet:
        return SensorSet(*(getattr(self, f.name) for f in fields(self)))


@dataclass(frozen=True)
class IndicatorSet:
    committed_move_rate: float
    avg_uncommitted_moves: float
    simulate_rate: float
    xact_sent_rate: float
    anti_xact_sent_rate: float
    xact_received_rate: float
    anti_xact_received_rate: float
    moves_rolledback_rate: float

    def vector(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    @staticmethod
    def of(vector: tuple[float, ...] | list[float]) -> IndicatorSet:
        return IndicatorSet(*vector)

    def __str__(self) -> str:
        return "[" + ",".join(str(round(v)) for v in self.vector()) + "]"


@dataclass
class Cluster:
    mean: list[float]
    count: int = 1

    def absorb(self, vector: tuple[float, ...], weight: int = 1) -> None:
        total = self.count + weight
        self.mean = [(m * self.count + v * weight) / total for m, v in zip(self.mean, vector)]
        self.count = total


def distance(a: tuple[float, ...] | list[float], b: tuple[float, ...] | list[float]) -> float:
    """Euclidean distance over the six components other than committed rate and avg uncommitted."""
    return math.dist(a[DISTANCE_COMPONENTS], b[DISTANCE_COMPONENTS])


@dataclass
class ClusterSpace:
    max_size: int = 1000
    clusters: list[Cluster] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.clusters)


def closest_better(space: ClusterSpace, current: IndicatorSet) -> IndicatorSet | None:
    cur = current.vector()
    best: Cluster | None = None
    best_d = math.inf
    for cluster in space.clusters:
        if cluster.mean[0] <= cur[0]:
            continue
        d = distance(cluster.mean, cur)
        if d < best_d:
            best, best_d = cluster, d
    return None if best is None else IndicatorSet.of(best.mean)


def add_indicator_set(space: ClusterSpace, v: IndicatorSet) -> None:
    vec = v.vector()
    if len(space.clusters) < space.max_size:
        space.clusters.append(Cluster(list(vec)))
        return
    nearest = min(space.clusters, key=lambda c: distance(c.mean, vec))
    d_v = distance(nearest.mean, vec)
    d_c = math.inf
    pair: tuple[int, int] | None = None
    cs = space.clusters
    for i in range(len(cs)):
        for j in range(i + 1, len(cs)):
            d = distance(cs[i].mean, cs[j].mean)
            if d < d_c:
                d_c, pair = d, (i, j)
    if pair is None or d_v < d_c:
        nearest.absorb(vec)
        return
    i, j = pair
    cs[i].absorb(tuple(cs[j].mean), cs[j].count)
    cs[j] = Cluster(list(vec))


@dataclass
class Actuator:
    mean_limit: float | None = None
    upper_limit: int | None = None

    @property
    def unbounded(self) -> bool:
        return self.upper_limit is None


@dataclass
class SampleStats:
    total: int = 0
    square_total: int = 0
    count: int = 0
    maximum: int = 0

    def add(self, v: int) -> None:
        self.total += v
        self.square_total += v * v
        self.count += 1
        self.maximum = max(self.maximum, v)

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

    def std(self) -> float:
        """Sample standard deviation (n - 1 denominator), clamped at zero."""
        if self.count < 2:
            return 0.0
        var = (self.square_total - self.total * self.total / self.count) / (self.count - 1)
        return math.sqrt(max(0.0, var))


def upper_limit(mean: float, sigma: float) -> int:
    return math.ceil(mean + Z_95 * sigma)


def rate(delta: int, interval_ms: float) -> float:
    return delta / (interval_ms / 1000.0)


def _limit_text(value: float | int | None) -> str:
    return UNBOUNDED_TEXT if value is None else str(round(value))


class LPControlComponent:
    """Per-LP controller mapping sensor history to an uncommitted-moves limit."""

    def __init__(self, cluster_number: int = 1000) -> None:
        self.space = ClusterSpace(cluster_number)
        self.actuator = Actuator()
        self.samples = SampleStats()
        self.last_sensors = SensorSet()
        self.last_time_ms: float | None = None

    def record_cycle_sample(self, uncommitted_moves: int) -> None:
        self.samples.add(uncommitted_moves)

    def is_within_actuator_range(self, uncommitted_moves: int) -> bool:
        return self.actuator.upper_limit is None or uncommitted_moves <= self.actuator.upper_limit

    def process(self, now_ms: float, sensors: SensorSet) -> Actuator:
        """Derive the interval's indicators from cumulative sensors and update the actuator."""
        last_ms = self.last_time_ms if self.last_time_ms is not None else 0.0
        interval = now_ms - last_ms
        log.debug(
            "CommittedMoves now: %d, last time: %d, time diff %dms",
            sensors.committed_moves,
            round(last_ms),
            round(interval),
        )
        deltas = sensors.minus(self.last_sensors)
        self.last_sensors = sensors.copy()
        self.last_time_ms = now_ms
        return self.process_sensor_values(interval, deltas)

    def process_sensor_values(self, interval_ms: float, deltas: SensorSet) -> Actuator:
        s = self.samples
        self.samples = SampleStats()
        if s.count == 0 or interval_ms <= 0:
            self.actuator = Actuator()
            log.debug("Actuator upper limit %s, mean limit %s", UNBOUNDED_TEXT, UNBOUNDED_TEXT)
            return self.actuator
        log.debug(
            "Uncommitted moves avg: %d, sum: %d, sqr sum: %d, count: %d", round(s.mean), s.total, s.square_total, s.count
        )
        sigma = s.std()
        log.debug("Set new std derivation: %.6f", sigma)
        log.debug("Max uncommitted moves: %d", s.maximum)
        current = IndicatorSet(
            rate(deltas.committed_moves, interval_ms),
            s.mean,
            rate(deltas.simulated_moves, interval_ms),
            rate(deltas.xacts_sent, interval_ms),
            rate(deltas.anti_xacts_sent, interval_ms),
            rate(deltas.xacts_received, interval_ms),
            rate(deltas.anti_xacts_received, interval_ms),
            rate(deltas.moves_rolledback, interval_ms),
        )
        better = closest_better(self.space, current)
        log_space.debug("Get better indicator set: %s", "non found" if better is None else str(better))
        add_indicator_set(self.space, current)
        log_space.debug("Current indicator set %s added to Clustered State Space", current)
        if better is None:
            self.actuator = Actuator()
        else:
            mean = better.avg_uncommitted_moves
            self.actuator = Actuator(mean, upper_limit(mean, sigma))
        log.debug(
            "Actuator upper limit %s, mean limit %s",
            _limit_text(self.actuator.upper_limit),
            _limit_text(self.actuator.mean_limit),
        )
        return self.actuator
