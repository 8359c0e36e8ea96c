"""Sequential GPSS kernel: transaction chain, clock, block semantics and statistics.

Chain order uses a total key per transaction. Insertions for a later tick get
``(move_time, -priority, insert_clock, partition, tick_ordinal, n)`` where
``tick_ordinal`` counts chain-outs of that partition at the inserting tick and
``n`` counts insertions made by the current move. Insertions for the current
tick extend the mover's key with ``(n,)`` so that same-tick processing is
monotone in key order. The key depends only on simulation history, never on
how partitions are spread over processes, which makes a partitioned run
process every tick in the same order as the merged sequential run.
"""

from __future__ import annotations

import bisect
import logging
import pickle
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from pgpss import logs
from pgpss.model import (
    Advance,
    BlockRef,
    BlockSpec,
    FacilityUse,
    Generate,
    ModelSpec,
    QueueUse,
    StorageUse,
    Terminate,
    Transfer,
    describe_block,
)
from pgpss.report import ReportSet, build_report
from pgpss.rng import CounterRng, DrawSource

log = logs.get(logs.GPSS)
log_facility = logs.get(logs.GPSS_FACILITY)
log_queue = logs.get(logs.GPSS_QUEUE)
log_storage = logs.get(logs.GPSS_STORAGE)

Key = tuple[Any, ...]
EntityKey = tuple[int, str]


class SimulationError(RuntimeError):
    """A model-level runtime error such as releasing an unheld facility."""


class MoveOutcome(Enum):
    CONTINUED = "continued"
    DELAYED = "delayed"
    BLOCKED = "blocked"
    TERMINATED = "terminated"
    CROSSED_PARTITION = "crossed_partition"


@dataclass
class Transaction:
    id: int
    move_time: int
    priority: int
    current_block: BlockRef
    next_block: BlockRef
    origin_generate: BlockRef
    key: Key = ()
    held_facilities: dict[EntityKey, int] = field(default_factory=dict)
    held_storage: dict[EntityKey, tuple[int, int]] = field(default_factory=dict)
    queue_memberships: dict[EntityKey, int] = field(default_factory=dict)
    blocked_on: EntityKey | None = None
    left_generate: bool = False
    resident: bool = True
    tag: tuple[int, int] | None = None
    fresh: bool = False

    def __str__(self) -> str:
        return (
            f"xact(Id: {self.id}, move time: {self.move_time}, "
            f"current block: {self.current_block}, next block: {self.next_block})"
        )

    def wire(self) -> tuple[Any, ...]:
        """Identity of a sent transaction, used to detect identical re-sends."""
        return (
            self.id,
            self.move_time,
            self.priority,
            self.current_block,
            self.next_block,
            self.origin_generate,
            self.key,
            tuple(sorted(self.held_facilities.items())),
            tuple(sorted(self.held_storage.items())),
            tuple(sorted(self.queue_memberships.items())),
        )


@dataclass
class FacilityState:
    owner: int | None = None
    seize_tick: int = 0
    captures: int = 0
    busy_ticks: int = 0


@dataclass
class StorageState:
    capacity: int
    available: int
    entries: int = 0
    unit_ticks: int = 0
    since: int = 0


@dataclass
class QueueState:
    content: int = 0
    max_content: int = 0
    entries: int = 0
    zero_entries: int = 0
    content_ticks: int = 0
    since: int = 0


@dataclass
class EngineState:
    """Mutable simulation state of one or more partitions; pickles as a unit."""

    partitions: tuple[int, ...]
    id_stride: int
    next_ids: dict[int, int]
    termination_counters: dict[int, int | None]
    clock: int = 0
    chain: list[Transaction] = field(default_factory=list)
    facilities: dict[EntityKey, FacilityState] = field(default_factory=dict)
    storages: dict[EntityKey, StorageState] = field(default_factory=dict)
    queues: dict[EntityKey, QueueState] = field(default_factory=dict)
    generate_remaining: dict[BlockRef, int | None] = field(default_factory=dict)
    block_counters: dict[BlockRef, list[int]] = field(default_factory=dict)
    draw_counts: dict[BlockRef, int] = field(default_factory=dict)
    total_moves: int = 0
    end_transaction: Transaction | None = None
    outbox: list[Transaction] = field(default_factory=list)
    tick_ordinals: dict[int, tuple[int, int]] = field(default_factory=dict)
    last_moved: tuple[int, Key] | None = None
    created: int = 0
    terminated: int = 0
    crossed_out: int = 0
    crossed_in: int = 0

    def snapshot(self) -> bytes:
        return pickle.dumps(self, protocol=pickle.HIGHEST_PROTOCOL)

    @staticmethod
    def restore(payload: bytes) -> EngineState:
        return pickle.loads(payload)

    def live_count(self) -> int:
        return len(self.chain)

    def last_moved_key(self) -> Key | None:
        """Key of the last transaction moved at the current clock tick."""
        if self.last_moved is not None and self.last_moved[0] == self.clock:
            return self.last_moved[1]
        return None


def sample_uniform_ticks(avg: int, half: int, source: DrawSource, ref: BlockRef, index: int) -> int:
    """Uniform integer in the open interval (avg-half, avg+half); avg when half is 0."""
    if half == 0:
        return avg
    return source.ticks(ref, index, avg - half + 1, avg + half - 1)


def _integrate(area: int, level: int, since: int, now: int) -> int:
    return area + level * (now - since)


class SimulationEngine:
    """Executes the blocks of the partitions it owns against an EngineState."""

    def __init__(
        self,
        model: ModelSpec,
        partitions: tuple[int, ...] | None = None,
        *,
        draws: DrawSource | None = None,
        lp_index: int = 1,
        lp_count: int = 1,
        id_bases: dict[int, int] | None = None,
    ) -> None:
        self.model = model
        owned = tuple(partitions) if partitions is not None else tuple(p.number for p in model.partitions)
        self.draws = draws or CounterRng(0)
        if id_bases is None:
            id_bases = {p: lp_index for p in owned}
        self.state = EngineState(
            partitions=owned,
            id_stride=lp_count,
            next_ids=dict(id_bases),
            termination_counters={p: model.partition(p).termination_counter for p in owned},
        )
        self._move_base: Key = ()
        self._move_key: Key = ()
        self._move_n = 0
        self._move_id = 0
        self._move_draws = 0
        self._setup_entities()

    # ------------------------------------------------------------ setup

    def _setup_entities(self) -> None:
        st = self.state
        for p in st.partitions:
            part = self.model.partition(p)
            for name, capacity in part.storages.items():
                st.storages[(p, name)] = StorageState(capacity, capacity)
            for name in part.queues():
                st.queues[(p, name)] = QueueState()
            for name in part.facilities():
                st.facilities[(p, name)] = FacilityState()
            for i, block in enumerate(part.blocks, start=1):
                ref = BlockRef(p, i)
                st.block_counters[ref] = [0, 0]
                if isinstance(block.params, Generate):
                    st.generate_remaining[ref] = block.params.limit

    def owns(self, partition_no: int) -> bool:
        return partition_no in self.state.partitions

    def block_spec(self, ref: BlockRef) -> BlockSpec:
        return self.model.block(ref)

    def describe(self, ref: BlockRef) -> str:
        return describe_block(self.model.block(ref), self.model.partition(ref.partition_no))

    # ------------------------------------------------------------ draws

    def _draw_index(self, ref: BlockRef) -> int:
        index = self.state.draw_counts.get(ref, 0)
        self.state.draw_counts[ref] = index + 1
        return index

    def _draw_token(self) -> tuple[int, ...]:
        # Stream position of the current move: identical in sequential and partitioned runs,
        # and fresh for every re-sent copy, so a rollback never pins a copy to a reused draw.
        self._move_draws += 1
        return (self._move_id, *self._move_key, self._move_draws)

    def _chance(self, ref: BlockRef) -> float:
        return self.draws.unit(ref, self._draw_index(ref), token=self._draw_token())

    def _sample(self, avg: int, half: int, ref: BlockRef, *, keyed: bool = False) -> int:
        if half == 0:
            return avg
        index = self._draw_index(ref)
        if keyed:
            return self.draws.ticks(ref, index, avg - half + 1, avg + half - 1, token=self._draw_token())
        return sample_uniform_ticks(avg, half, self.draws, ref, index)

    # ------------------------------------------------------------ ids and chain

    def next_transaction_id(self, partition_no: int) -> int:
        st = self.state
        value = st.next_ids[partition_no]
        st.next_ids[partition_no] = value + st.id_stride
        return value

    def chain_in(self, xact: Transaction) -> None:
        bisect.insort(self.state.chain, xact, key=lambda t: t.key)
        if log.isEnabledFor(logging.DEBUG):
            log.debug("%s chained in", xact)

    def remove_from_chain(self, xact: Transaction) -> None:
        chain = self.state.chain
        i = bisect.bisect_left(chain, xact.key, key=lambda t: t.key)
        while i < len(chain) and chain[i] is not xact:
            i += 1
        if i == len(chain):
            raise ValueError(f"{xact} not in chain")
        del chain[i]

    def _insertion_key(self, move_time: int, priority: int) -> Key:
        self._move_n += 1
        if move_time == self.state.clock:
            return self._move_key + (self._move_n,)
        return (move_time, -priority) + self._move_base + (self._move_n,)

    def initialize_generate_blocks(self) -> None:
        log.debug("Initialize GENERATE blocks")
        st = self.state
        for p in st.partitions:
            for i, block in enumerate(self.model.partition(p).blocks, start=1):
                params = block.params
                if not isinstance(params, Generate) or params.limit == 0:
                    continue
                ref = BlockRef(p, i)
                if params.offset is not None:
                    move_time = params.offset
                else:
                    move_time = self._sample(params.avg_interarrival, params.half_range, ref)
                xact = Transaction(
                    id=self.next_transaction_id(p),
                    move_time=move_time,
                    priority=params.priority,
                    current_block=ref,
                    next_block=self._following(ref),
                    origin_generate=ref,
                    key=(move_time, -params.priority, -1, p, i, 0),
                )
                self._arm_generate(ref)
                st.created += 1
                st.block_counters[ref][0] += 1
                self.chain_in(xact)
        log.debug("GENERATE blocks initialized")

    def _arm_generate(self, ref: BlockRef) -> None:
        remaining = self.state.generate_remaining[ref]
        if remaining is not None:
            self.state.generate_remaining[ref] = remaining - 1

    def _following(self, ref: BlockRef) -> BlockRef:
        part = self.model.partition(ref.partition_no)
        if ref.block_no < len(part.blocks):
            return BlockRef(ref.partition_no, ref.block_no + 1)
        return ref

    # ------------------------------------------------------------ clock

    def earliest_movable(self) -> Transaction | None:
        for xact in self.state.chain:
            if xact.blocked_on is None:
                return xact
        return None

    def min_movable_time(self) -> int | None:
        xact = self.earliest_movable()
        return None if xact is None else xact.move_time

    def update_clock(self) -> bool:
        xact = self.earliest_movable()
        if xact is None:
            return False
        if xact.move_time != self.state.clock:
            self.state.clock = xact.move_time
            if log.isEnabledFor(logging.DEBUG):
                log.debug("Local simulation clock updated to %d", xact.move_time)
        return True

    def has_movable_at_clock(self) -> bool:
        xact = self.earliest_movable()
        return xact is not None and xact.move_time == self.state.clock

    def chain_out_next_movable_for_current_time(self) -> Transaction | None:
        chain = self.state.chain
        clock = self.state.clock
        for i, xact in enumerate(chain):
            if xact.blocked_on is not None:
                continue
            if xact.move_time != clock:
                return None
            del chain[i]
            if log.isEnabledFor(logging.DEBUG):
                log.debug("%s chained out", xact)
            return xact
        return None

    # ------------------------------------------------------------ moving

    def _begin_move(self, xact: Transaction) -> None:
        st = self.state
        p = xact.next_block.partition_no
        tick, ordinal = st.tick_ordinals.get(p, (st.clock, 0))
        if tick != st.clock:
            ordinal = 0
        st.tick_ordinals[p] = (st.clock, ordinal + 1)
        st.last_moved = (st.clock, xact.key)
        self._move_key = xact.key
        self._move_base = (st.clock, p, ordinal)
        self._move_n = 0
        self._move_id = xact.id
        self._move_draws = 0
        xact.fresh = False
        st.total_moves += 1

    def move_transaction(self, xact: Transaction) -> MoveOutcome:
        self._begin_move(xact)
        debug = log.isEnabledFor(logging.DEBUG)
        if debug:
            log.debug("Move %s", xact)
        outcome = MoveOutcome.CONTINUED
        if not xact.left_generate and xact.current_block == xact.origin_generate:
            self._execute_generate(xact)
        while outcome is MoveOutcome.CONTINUED:
            ref = xact.next_block
            if ref.partition_no != xact.current_block.partition_no and xact.resident:
                outcome = self._cross(xact)
                break
            outcome = self.execute_block(xact, ref)
        ended = outcome is MoveOutcome.TERMINATED and self.state.end_transaction is xact
        if debug and not ended:
            log.debug("Finished moving %s", xact)
        if outcome is MoveOutcome.CROSSED_PARTITION:
            return outcome
        if outcome in (MoveOutcome.DELAYED, MoveOutcome.BLOCKED):
            self.chain_in(xact)
        return outcome

    def _cross(self, xact: Transaction) -> MoveOutcome:
        st = self.state
        st.block_counters[xact.current_block][0] -= 1
        xact.resident = False
        xact.key = self._insertion_key(xact.move_time, xact.priority)
        if self.owns(xact.next_block.partition_no):
            self.chain_in(xact)
        else:
            st.crossed_out += 1
            st.outbox.append(xact)
        return MoveOutcome.CROSSED_PARTITION

    def receive(self, xact: Transaction) -> None:
        """Chain in a transaction arriving from another partition."""
        self.state.crossed_in += 1
        self.chain_in(xact)

    def discard_received(self, xact: Transaction) -> None:
        """Take back an arrival from another partition that was cancelled."""
        self.remove_from_chain(xact)
        self.state.crossed_in -= 1

    def move_all_transactions_at_current_time(self) -> int:
        moved = 0
        while self.state.end_transaction is None:
            xact = self.chain_out_next_movable_for_current_time()
            if xact is None:
                break
            self.move_transaction(xact)
            moved += 1
        return moved

    # ------------------------------------------------------------ blocks

    def _enter(self, xact: Transaction, ref: BlockRef) -> None:
        counters = self.state.block_counters
        if xact.resident:
            counters[xact.current_block][0] -= 1
        xact.resident = True
        entry = counters[ref]
        entry[0] += 1
        entry[1] += 1
        xact.current_block = ref
        xact.next_block = self._following(ref)

    def _executed(self, xact: Transaction, ref: BlockRef) -> None:
        if log.isEnabledFor(logging.DEBUG):
            log.debug("%s executed block %s Block: %s", xact, ref, self.describe(ref))

    def _execute_generate(self, xact: Transaction) -> None:
        st = self.state
        ref = xact.origin_generate
        params = self.model.block(ref).params
        assert isinstance(params, Generate)
        remaining = st.generate_remaining[ref]
        if remaining is None or remaining > 0:
            self._arm_generate(ref)
            delay = self._sample(params.avg_interarrival, params.half_range, ref)
            move_time = st.clock + delay
            successor = Transaction(
                id=self.next_transaction_id(ref.partition_no),
                move_time=move_time,
                priority=params.priority,
                current_block=ref,
                next_block=self._following(ref),
                origin_generate=ref,
                key=self._insertion_key(move_time, params.priority),
            )
            st.created += 1
            st.block_counters[ref][0] += 1
            self.chain_in(successor)
        st.block_counters[ref][1] += 1
        xact.left_generate = True
        self._executed(xact, ref)

    def execute_block(self, xact: Transaction, ref: BlockRef) -> MoveOutcome:
        if not self.model.has_block(ref) or ref == xact.current_block and xact.left_generate and xact.resident:
            raise SimulationError(f"{xact} has no next block to enter")
        block = self.model.block(ref)
        params = block.params
        st = self.state
        p = ref.partition_no
        if isinstance(params, (FacilityUse,)) and block.kind == "SEIZE":
            key = (p, params.facility)
            fac = st.facilities[key]
            if fac.owner is not None:
                xact.blocked_on = key
                return MoveOutcome.BLOCKED
            xact.blocked_on = None
            self._enter(xact, ref)
            fac.owner = xact.id
            fac.seize_tick = st.clock
            fac.captures += 1
            xact.held_facilities[key] = st.clock
            self._executed(xact, ref)
            return MoveOutcome.CONTINUED
        if isinstance(params, StorageUse) and block.kind == "ENTER":
            key = (p, params.storage)
            sto = st.storages[key]
            if sto.available < params.usage_count:
                xact.blocked_on = key
                return MoveOutcome.BLOCKED
            xact.blocked_on = None
            self._enter(xact, ref)
            sto.unit_ticks = _integrate(sto.unit_ticks, sto.capacity - sto.available, sto.since, st.clock)
            sto.since = st.clock
            sto.available -= params.usage_count
            sto.entries += 1
            units, _ = xact.held_storage.get(key, (0, st.clock))
            xact.held_storage[key] = (units + params.usage_count, st.clock)
            self._executed(xact, ref)
            return MoveOutcome.CONTINUED

        self._enter(xact, ref)
        outcome = MoveOutcome.CONTINUED
        if isinstance(params, Advance):
            delay = self._sample(params.avg_hold, params.half_range, ref, keyed=True)
            xact.move_time += delay
            if delay > 0:
                xact.key = self._insertion_key(xact.move_time, xact.priority)
                outcome = MoveOutcome.DELAYED
        elif isinstance(params, FacilityUse):
            self._release(xact, (p, params.facility))
        elif isinstance(params, StorageUse):
            self._leave(xact, (p, params.storage), params.usage_count)
        elif isinstance(params, QueueUse) and block.kind == "QUEUE":
            key = (p, params.queue)
            q = st.queues[key]
            q.content_ticks = _integrate(q.content_ticks, q.content, q.since, st.clock)
            q.since = st.clock
            q.content += 1
            q.max_content = max(q.max_content, q.content)
            q.entries += 1
            xact.queue_memberships[key] = st.clock
        elif isinstance(params, QueueUse):
            self._depart(xact, (p, params.queue))
        elif isinstance(params, Transfer):
            assert params.target is not None
            if params.probability >= 1.0:
                xact.next_block = params.target
            elif params.probability > 0.0 and self._chance(ref) <= params.probability:
                xact.next_block = params.target
        elif isinstance(params, Terminate):
            xact.next_block = ref
            outcome = self._terminate(xact, ref, params.decrement)
        self._executed(xact, ref)
        return outcome

    def _release(self, xact: Transaction, key: EntityKey) -> None:
        st = self.state
        fac = st.facilities[key]
        if fac.owner != xact.id or key not in xact.held_facilities:
            raise SimulationError(f"{xact} released facility {key[1]} it does not hold")
        fac.busy_ticks += st.clock - fac.seize_tick
        fac.owner = None
        del xact.held_facilities[key]
        if log_facility.isEnabledFor(logging.DEBUG):
            log_facility.debug(
                "Facility: %s, Xact id: %d, seized at time: %d, released at time: %d",
                key[1], xact.id, fac.seize_tick, st.clock,
            )
        self._unblock(key)

    def _leave(self, xact: Transaction, key: EntityKey, units: int) -> None:
        st = self.state
        held, entered = xact.held_storage.get(key, (0, 0))
        if held < units:
            raise SimulationError(f"{xact} left storage {key[1]} with {units} units but holds {held}")
        sto = st.storages[key]
        sto.unit_ticks = _integrate(sto.unit_ticks, sto.capacity - sto.available, sto.since, st.clock)
        sto.since = st.clock
        sto.available += units
        if held == units:
            del xact.held_storage[key]
        else:
            xact.held_storage[key] = (held - units, entered)
        if log_storage.isEnabledFor(logging.DEBUG):
            log_storage.debug(
                "Storage: %s, Xact id: %d, entered at time: %d, left at time: %d, used capacity: %d",
                key[1], xact.id, entered, st.clock, units,
            )
        self._unblock(key)

    def _depart(self, xact: Transaction, key: EntityKey) -> None:
        st = self.state
        if key not in xact.queue_memberships:
            raise SimulationError(f"{xact} departed queue {key[1]} it never joined")
        entered = xact.queue_memberships.pop(key)
        q = st.queues[key]
        q.content_ticks = _integrate(q.content_ticks, q.content, q.since, st.clock)
        q.since = st.clock
        q.content -= 1
        if entered == st.clock:
            q.zero_entries += 1
        if log_queue.isEnabledFor(logging.DEBUG):
            log_queue.debug(
                "Queue: %s, Xact id: %d, entered at time: %d, left at time: %d", key[1], xact.id, entered, st.clock
            )

    def _unblock(self, key: EntityKey) -> None:
        """Wake transactions waiting on an entity; they compete again in chain order."""
        waiters = [x for x in self.state.chain if x.blocked_on == key]
        for xact in waiters:
            self.remove_from_chain(xact)
        for xact in waiters:
            xact.blocked_on = None
            xact.move_time = self.state.clock
            xact.key = self._insertion_key(xact.move_time, xact.priority)
            self.chain_in(xact)

    def _terminate(self, xact: Transaction, ref: BlockRef, decrement: int) -> MoveOutcome:
        st = self.state
        st.block_counters[ref][0] -= 1
        xact.resident = False
        st.terminated += 1
        p = ref.partition_no
        counter = st.termination_counters.get(p)
        if counter is not None:
            counter -= decrement
            st.termination_counters[p] = counter
            if counter <= 0 and st.end_transaction is None:
                st.end_transaction = xact
        return MoveOutcome.TERMINATED

    # ------------------------------------------------------------ statistics and reports

    def accumulate_tick_statistics(self, until: int) -> dict[str, dict[EntityKey, int]]:
        """Tick integrals of every entity over [0, until), without mutating state."""
        st = self.state
        return {
            "queue": {k: _integrate(q.content_ticks, q.content, q.since, until) for k, q in st.queues.items()},
            "storage": {
                k: _integrate(s.unit_ticks, s.capacity - s.available, s.since, until) for k, s in st.storages.items()
            },
            "facility": {
                k: f.busy_ticks + (until - f.seize_tick if f.owner is not None else 0)
                for k, f in st.facilities.items()
            },
        }

    def build_reports(
        self, end_time: int | None = None, wall_seconds: float | None = None, include_chain: bool = False
    ) -> ReportSet:
        return build_report(self, end_time, wall_seconds, include_chain)


# ---------------------------------------------------------------- sequential reference


@dataclass
class SequentialResult:
    end_time: int | None
    end_transaction: Transaction | None
    engine: SimulationEngine

    @property
    def block_totals(self) -> dict[BlockRef, int]:
        return {ref: c[1] for ref, c in self.engine.state.block_counters.items()}

    @property
    def block_currents(self) -> dict[BlockRef, int]:
        return {ref: c[0] for ref, c in self.engine.state.block_counters.items()}


def run_sequential(
    model: ModelSpec,
    *,
    draws: DrawSource | None = None,
    seed: int = 0,
    lp_count: int | None = None,
    max_ticks: int | None = None,
) -> SequentialResult:
    """Run every partition in one engine, using per-partition id streams as a partitioned run would."""
    count = lp_count if lp_count is not None else len(model.partitions)
    bases = {p.number: p.number for p in model.partitions}
    engine = SimulationEngine(model, draws=draws or CounterRng(seed), lp_count=count, id_bases=bases)
    engine.initialize_generate_blocks()
    while engine.state.end_transaction is None:
        if not engine.update_clock():
            raise SimulationError("no movable transaction left before the simulation ended")
        if max_ticks is not None and engine.state.clock > max_ticks:
            raise SimulationError(f"simulation did not end by tick {max_ticks}")
        engine.move_all_transactions_at_current_time()
    end = engine.state.end_transaction
    return SequentialResult(end.move_time if end else None, end, engine)

