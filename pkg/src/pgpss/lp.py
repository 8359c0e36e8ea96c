"""Optimistic logical process wrapping one partition's engine."""

from __future__ import annotations

import bisect
import pickle
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from pgpss import logs
from pgpss.config import Config
from pgpss.engine import EngineState, Key, SimulationEngine, SimulationError, Transaction
from pgpss.lpcc import LPControlComponent, SensorSet
from pgpss.model import ModelSpec
from pgpss.report import ReportSet, build_report
from pgpss.rng import CounterRng, DrawSource
from pgpss.transport import Endpoint, Envelope, Kind

log = logs.get(logs.LP)
log_commit = logs.get(logs.LP_COMMIT)
log_rollback = logs.get(logs.LP_ROLLBACK)
log_memory = logs.get(logs.LP_MEMORY)
log_stats = logs.get(logs.LP_STATS)

CONTROLLER = "controller"
RECORD_OVERHEAD = 128


def lp_name(index: int) -> str:
    return f"LP{index}"


def lp_index(name: str) -> int:
    return int(name[2:])


class ProtocolError(RuntimeError):
    """A message that contradicts the LP's history, e.g. an anti-transaction with no match."""


class Phase(Enum):
    INITIALIZED = "INITIALIZED"
    SIMULATING = "SIMULATING"
    TERMINATED = "TERMINATED"


@dataclass
class SavedState:
    time: int
    snapshot: bytes
    committed_move_count_at_save: int


@dataclass
class SentRecord:
    seq: int
    dest: int
    payload: bytes
    wire: tuple[Any, ...]
    send_time: int
    key: Key
    acked: bool = False
    rolled_back: bool = False


@dataclass
class ReceivedRecord:
    seq: int
    sender: int
    payload: bytes
    move_time: int
    order: int


@dataclass(frozen=True)
class EndMark:
    """A provisional or confirmed end: time, chain key, LP, transaction id and text."""

    time: int
    key: Key
    lp: int
    xact_id: int
    text: str

    def order(self) -> tuple[int, Key]:
        return (self.time, self.key)


@dataclass
class LpMode:
    phase: Phase = Phase.INITIALIZED
    provisional_end: EndMark | None = None
    cancelback: bool = False
    cancelback_reason: str | None = None
    forced_gvt_times: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class LocalGvtParameter:
    min_time: int | None
    provisional_end: EndMark | None = None
    round_id: int = 0
    lp: int = 0


@dataclass(frozen=True)
class ReportFragment:
    lp: int
    report: ReportSet
    sensors: SensorSet


@dataclass(frozen=True)
class AckPayload:
    seq: int
    time: int
    marked_round: int | None


class LogicalProcess:
    """One partition simulated optimistically under Time Warp, optionally throttled by an LPCC."""

    def __init__(
        self,
        index: int,
        count: int,
        model: ModelSpec,
        config: Config,
        endpoint: Endpoint,
        clock: Callable[[], float],
        *,
        draws: DrawSource | None = None,
        lpcc_factory: Callable[[int], LPControlComponent] | None = None,
    ) -> None:
        self.index = index
        self.name = lp_name(index)
        self.config = config
        self.ep = endpoint
        self.clock = clock
        self.engine = SimulationEngine(
            model, (index,), draws=draws or CounterRng(config.rng_seed), lp_index=index, lp_count=count
        )
        self.mode = LpMode()
        self.saved: dict[int, SavedState] = {}
        self.saved_times: list[int] = []
        self.sent: dict[tuple[int, int], SentRecord] = {}
        self.received: dict[tuple[int, int], ReceivedRecord] = {}
        self.annihilated: dict[tuple[int, int], int] = {}
        self.cancelled_tags: set[tuple[int, int]] = set()
        self.inputs: list[Envelope] = []
        self.gvt = 0
        self.gvt_history: list[int] = []
        self.gvt_requested = False
        self.reported_round = 0
        self.marked: list[tuple[int, int]] = []
        self.sensors = SensorSet()
        self.memory_bytes = 0
        self.rollback_targets: list[int] = []
        self.cancelled_back = 0
        self.resends_matched = 0
        self.receive_order = 0
        self.error: str | None = None
        self.lpcc: LPControlComponent | None = None
        if config.lpcc_enabled:
            factory = lpcc_factory or LPControlComponent
            self.lpcc = factory(config.lpcc_cluster_number)

    # ------------------------------------------------------------ helpers

    @property
    def state(self) -> EngineState:
        return self.engine.state

    def uncommitted_moves(self) -> int:
        return max(0, self.state.total_moves - self.sensors.committed_moves)

    def _send(self, dest: str, kind: Kind, payload: Any = None, time: int | None = None) -> Envelope:
        return self.ep.send(dest, kind, payload, time=time)

    def _ack(self, env: Envelope, time: int) -> None:
        self._send(env.sender, Kind.ACK, AckPayload(env.seq, time, self.reported_round or None))

    def request_gvt(self, reason: str) -> None:
        if self.gvt_requested:
            return
        self.gvt_requested = True
        self._send(CONTROLLER, Kind.GVT_REQUEST, reason)
        log.debug("Sent GVT calculation request to SimulationController")

    # ------------------------------------------------------------ cycle

    def step(self) -> bool:
        """One scheduling cycle; returns whether any work was done."""
        if self.mode.phase is Phase.TERMINATED:
            return self._terminated_step()
        if self.mode.phase is Phase.INITIALIZED:
            self.engine.initialize_generate_blocks()
            part = self.engine.model.partition(self.index)
            log.info("%s with partition '%s' initialized", self.name, part.name)
            self.mode.phase = Phase.SIMULATING
            log.info("LP simulation state changed from INITIALIZED to SIMULATING")
        try:
            return self._cycle()
        except (SimulationError, ProtocolError) as exc:
            self.error = str(exc)
            self.mode.phase = Phase.TERMINATED
            log.error("Simulation error: %s", exc)
            self._send(CONTROLLER, Kind.ERROR, f"{self.name}: {exc}")
            return True

    def _cycle(self) -> bool:
        envelopes = self.ep.drain()
        progressed = bool(envelopes)
        for i, env in enumerate(envelopes):
            self._dispatch(env)
            if self.mode.phase is not Phase.SIMULATING:
                pending, self.inputs = self.inputs, []
                for rest in pending + envelopes[i + 1 :]:
                    self._serve_after_end(rest)
                return True
        if self.mode.provisional_end is None:
            self.engine.update_clock()
        self._check_forced()
        self.save_current_state()
        if self.inputs:
            self.handle_received_transactions()
            progressed = True
        progressed |= self.send_lazy_cancellation_anti_transactions()
        progressed |= self._simulate()
        progressed |= self.memory_check()
        return progressed

    lp_step = step

    def _terminated_step(self) -> bool:
        """After the end only acks, report requests and stops are served."""
        envelopes = self.ep.drain()
        for env in envelopes:
            self._serve_after_end(env)
        return bool(envelopes)

    def _serve_after_end(self, env: Envelope) -> None:
        if env.kind in (Kind.XACT, Kind.ANTI_XACT, Kind.CANCELBACK):
            self._ack(env, self.state.clock)
        elif env.kind is Kind.ACK:
            self._on_ack(env)
        elif env.kind is Kind.REPORT_REQUEST:
            end, include_chain = env.payload
            self._send(CONTROLLER, Kind.REPORT_REPLY, self.get_simulation_report(end, include_chain))

    def _dispatch(self, env: Envelope) -> None:
        kind = env.kind
        if kind in (Kind.XACT, Kind.ANTI_XACT, Kind.CANCELBACK):
            self.inputs.append(env)
        elif kind is Kind.ACK:
            self._on_ack(env)
        elif kind is Kind.GVT_PARAM_REQUEST:
            param = self.request_gvt_parameter(env.payload)
            self._send(CONTROLLER, Kind.GVT_PARAM_REPLY, param)
        elif kind is Kind.GVT:
            gvt, lpcc_needed = env.payload
            self.receive_gvt(gvt, lpcc_needed)
        elif kind is Kind.FORCE_GVT_AT:
            self.force_gvt_at(env.payload)
        elif kind is Kind.END_BY_XACT:
            self.end_of_simulation_by_transaction(env.payload)
            self._send(CONTROLLER, Kind.END_CONFIRM, self.index)
        elif kind is Kind.REPORT_REQUEST:
            end, include_chain = env.payload
            self._send(CONTROLLER, Kind.REPORT_REPLY, self.get_simulation_report(end, include_chain))
        elif kind is Kind.STOP:
            self.mode.phase = Phase.TERMINATED
            log.info("Simulation stopped and simulation state changed to TERMINATED")
        else:
            raise ProtocolError(f"{self.name} cannot handle {kind.value}")

    def _on_ack(self, env: Envelope) -> None:
        ack: AckPayload = env.payload
        self.ep.ledger.ack(env.sender, ack.seq)
        if env.sender.startswith("LP"):
            rec = self.sent.get((lp_index(env.sender), ack.seq))
            if rec is not None:
                rec.acked = True
        if ack.marked_round is not None and ack.marked_round > self.reported_round:
            self.marked.append((ack.marked_round, ack.time))

    # ------------------------------------------------------------ state saving

    def save_current_state(self, *, overwrite: bool = False) -> None:
        if self.mode.provisional_end is not None:
            return
        t = self.state.clock
        if t in self.saved and not overwrite:
            return
        snapshot = self.state.snapshot()
        old = self.saved.get(t)
        if old is None:
            bisect.insort(self.saved_times, t)
        else:
            self.memory_bytes -= len(old.snapshot)
        self.saved[t] = SavedState(t, snapshot, self.state.total_moves)
        self.memory_bytes += len(snapshot)

    def _drop_state(self, t: int) -> None:
        old = self.saved.pop(t)
        self.memory_bytes -= len(old.snapshot)

    def rollback_state(self, time: int) -> None:
        if time < self.gvt:
            raise ProtocolError(f"{self.name} rollback to {time} below GVT {self.gvt}")
        i = bisect.bisect_left(self.saved_times, time)
        if i == len(self.saved_times):
            raise ProtocolError(f"{self.name} has no saved state at or after {time}")
        restored = self.saved[self.saved_times[i]]
        before_clock = self.state.clock
        before_moves = self.state.total_moves
        self.engine.state = EngineState.restore(restored.snapshot)
        self.engine.state.clock = time
        for t in self.saved_times[i:]:
            if t > time:
                self._drop_state(t)
        del self.saved_times[i + (1 if self.saved_times[i] == time else 0):]
        self.sensors.moves_rolledback += max(0, before_moves - self.state.total_moves)
        self._reconcile(time)
        for rec in self.sent.values():
            if rec.send_time >= time:
                rec.rolled_back = True
        pe = self.mode.provisional_end
        if pe is not None and pe.time >= time:
            self.mode.provisional_end = None
        self.rollback_targets.append(time)
        log_rollback.info(
            "Rollback for time %d, state restored for time %d, time before rollback %d",
            time,
            restored.time,
            before_clock,
        )
        self.save_current_state(overwrite=True)

    def _reconcile(self, time: int) -> None:
        """Align the restored chain with the received history."""
        chain = self.state.chain
        if self.annihilated:
            for xact in [x for x in chain if x.tag in self.annihilated]:
                self.engine.discard_received(xact)
        present = {x.tag for x in chain if x.tag is not None}
        for tag, rec in sorted(self.received.items(), key=lambda kv: kv[1].order):
            if rec.move_time >= time and tag not in present:
                self.engine.receive(self._materialize(rec))

    def _materialize(self, rec: ReceivedRecord) -> Transaction:
        xact: Transaction = pickle.loads(rec.payload)
        xact.tag = (rec.sender, rec.seq)
        xact.fresh = True
        return xact

    # ------------------------------------------------------------ inputs

    def handle_received_transactions(self) -> None:
        inputs, self.inputs = self.inputs, []
        cancelbacks = [e for e in inputs if e.kind is Kind.CANCELBACK]
        if cancelbacks:
            self._handle_cancelbacks(cancelbacks)
        for env in inputs:
            if env.kind is Kind.XACT:
                self._handle_xact(env)
            elif env.kind is Kind.ANTI_XACT:
                self._handle_anti(env)

    def _needs_rollback(self, time: int, key: Key) -> bool:
        st = self.state
        if time < st.clock:
            return True
        if time == st.clock:
            last = st.last_moved_key()
            return last is not None and key < last
        return False

    def _handle_xact(self, env: Envelope) -> None:
        sender = lp_index(env.sender)
        tag = (sender, env.seq)
        self.receive_order += 1
        rec = ReceivedRecord(env.seq, sender, env.payload, 0, self.receive_order)
        xact = self._materialize(rec)
        rec.move_time = xact.move_time
        if self._needs_rollback(xact.move_time, xact.key):
            self.rollback_state(xact.move_time)
        self.received[tag] = rec
        self.memory_bytes += len(rec.payload) + RECORD_OVERHEAD
        self.engine.receive(xact)
        self.sensors.xacts_received += 1
        self._ack(env, xact.move_time)

    def _handle_anti(self, env: Envelope) -> None:
        sender = lp_index(env.sender)
        tag = (sender, env.payload)
        if tag in self.cancelled_tags:
            self.cancelled_tags.discard(tag)
            self._ack(env, self.annihilated.get(tag, self.gvt))
            return
        rec = self.received.pop(tag, None)
        if rec is None:
            raise ProtocolError(f"{self.name} got anti-transaction {tag} without a matching transaction")
        self.memory_bytes -= len(rec.payload) + RECORD_OVERHEAD
        self.annihilated[tag] = rec.move_time
        self.sensors.anti_xacts_received += 1
        unmoved = next((x for x in self.state.chain if x.tag == tag and x.fresh), None)
        if unmoved is not None:
            self.engine.discard_received(unmoved)
        else:
            self.rollback_state(rec.move_time)
        self._ack(env, rec.move_time)

    def _handle_cancelbacks(self, envs: list[Envelope]) -> None:
        target: int | None = None
        for env in envs:
            seq, time = env.payload
            rec = self.sent.pop((lp_index(env.sender), seq), None)
            if rec is not None:
                self.memory_bytes -= len(rec.payload) + RECORD_OVERHEAD
                target = rec.send_time if target is None else min(target, rec.send_time)
            self._ack(env, time)
        if target is None:
            return
        st = self.state
        if target < st.clock or (target == st.clock and st.last_moved_key() is not None):
            log_memory.info("%d received cancelbacks require rollback to time %d", len(envs), target)
            self.rollback_state(target)

    # ------------------------------------------------------------ sending

    def _send_outbox(self) -> None:
        outbox = self.state.outbox
        if not outbox:
            return
        for xact in outbox:
            dest = xact.next_block.partition_no
            wire = xact.wire()
            match = next(
                (r for r in self.sent.values() if r.rolled_back and r.dest == dest and r.wire == wire), None
            )
            if match is not None:
                match.rolled_back = False
                self.resends_matched += 1
                continue
            payload = pickle.dumps(xact, protocol=pickle.HIGHEST_PROTOCOL)
            env = self._send(lp_name(dest), Kind.XACT, payload, time=xact.move_time)
            self.sent[(dest, env.seq)] = SentRecord(env.seq, dest, payload, wire, xact.move_time, xact.key)
            self.memory_bytes += len(payload) + RECORD_OVERHEAD
            self.sensors.xacts_sent += 1
        outbox.clear()

    def send_lazy_cancellation_anti_transactions(self) -> bool:
        pending = [r for r in self.sent.values() if r.rolled_back]
        if not pending:
            return False
        st = self.state
        tick_done = not self.engine.has_movable_at_clock() and self.mode.provisional_end is None
        last = st.last_moved_key()
        sent_any = False
        for rec in pending:
            passed = rec.send_time < st.clock or (
                rec.send_time == st.clock and (tick_done or (last is not None and last > rec.key))
            )
            if not passed:
                continue
            self._send(lp_name(rec.dest), Kind.ANTI_XACT, rec.seq, time=rec.send_time)
            del self.sent[(rec.dest, rec.seq)]
            self.memory_bytes -= len(rec.payload) + RECORD_OVERHEAD
            self.sensors.anti_xacts_sent += 1
            sent_any = True
        return sent_any

    # ------------------------------------------------------------ moving

    def _gvt_holder(self) -> bool:
        t = self.engine.min_movable_time()
        return t is not None and t <= self.gvt

    def _simulate(self) -> bool:
        if self.mode.provisional_end is not None or not self.engine.has_movable_at_clock():
            return False
        if self.lpcc is not None:
            uncommitted = self.uncommitted_moves()
            within = self.lpcc.is_within_actuator_range(uncommitted)
            if not within and not self.mode.cancelback:
                log.info(
                    "Actuator limit (limit of uncommitted transaction moves) exceeded, "
                    "current uncommitted moves: %d, limit: %d",
                    uncommitted,
                    self.lpcc.actuator.upper_limit,
                )
                self._set_cancelback(True, "actuator")
                self.need_to_cancel_back(self.config.cancelback_batch)
            elif within and self.mode.cancelback and self.mode.cancelback_reason == "actuator":
                self._set_cancelback(False)
        if self.mode.cancelback and not self._gvt_holder():
            return False
        self.save_current_state()
        moved = self.engine.move_all_transactions_at_current_time()
        self.sensors.simulated_moves += moved
        self._send_outbox()
        if self.state.end_transaction is not None and self.mode.provisional_end is None:
            self._enter_provisional_end()
        if self.lpcc is not None and moved:
            self.lpcc.record_cycle_sample(self.uncommitted_moves())
        return True

    def _enter_provisional_end(self) -> None:
        x = self.state.end_transaction
        assert x is not None
        self.mode.provisional_end = EndMark(x.move_time, x.key, self.index, x.id, str(x))
        log.info("Unconfirmed End Of Simulation reached by xact: %s", x)
        self.gvt_requested = False
        self.request_gvt("provisional end")

    def _set_cancelback(self, on: bool, reason: str | None = None) -> None:
        if on == self.mode.cancelback:
            return
        self.mode.cancelback = on
        self.mode.cancelback_reason = reason if on else None
        if on and reason == "actuator":
            log.info("Changed Cancelback mode to ON because of actuator limit reached")
        elif on:
            log_memory.info(
                "Changed Cancelback mode to ON because memory limit 2 (free memory below %d byte) reached",
                self.config.memory_limit2,
            )
        else:
            log.info("Changed Cancelback mode to OFF")

    # ------------------------------------------------------------ memory and cancelback

    def free_memory(self) -> int:
        return self.config.memory_budget_bytes - self.memory_bytes

    def memory_check(self) -> bool:
        free = self.free_memory()
        acted = False
        if free < self.config.memory_limit1 and not self.gvt_requested:
            log_memory.info(
                "Requested GVT calculation because memory limit 1 (free memory below %d byte) reached",
                self.config.memory_limit1,
            )
            self.request_gvt("memory limit 1")
            acted = True
        if free < self.config.memory_limit2:
            if not self.mode.cancelback:
                self._set_cancelback(True, "memory")
                acted = True
            if self.mode.cancelback_reason == "memory" and self.need_to_cancel_back(
                max(1, self.config.cancelback_batch)
            ):
                # Leave the mode after a successful batch; the next check re-enters it if still short.
                self._set_cancelback(False)
                acted = True
        elif self.mode.cancelback and self.mode.cancelback_reason == "memory":
            self._set_cancelback(False)
            acted = True
        return acted

    def need_to_cancel_back(self, count: int) -> int:
        count = max(0, count)
        victims: list[Transaction] = []
        for xact in reversed(self.state.chain):
            if len(victims) >= count:
                break
            if xact.tag is not None and xact.fresh and xact.tag in self.received:
                victims.append(xact)
        for xact in victims:
            assert xact.tag is not None
            self.engine.discard_received(xact)
            rec = self.received.pop(xact.tag)
            self.memory_bytes -= len(rec.payload) + RECORD_OVERHEAD
            self.annihilated[xact.tag] = rec.move_time
            self.cancelled_tags.add(xact.tag)
            self._send(lp_name(rec.sender), Kind.CANCELBACK, (rec.seq, rec.move_time), time=rec.move_time)
        if victims:
            self.cancelled_back += len(victims)
            log_memory.info("Cancelback mode - cancelled back %d received transactions", len(victims))
        return len(victims)

    # ------------------------------------------------------------ GVT

    def request_gvt_parameter(self, round_id: int = 0) -> LocalGvtParameter:
        times: list[int] = []
        pe = self.mode.provisional_end
        if pe is None:
            t = self.engine.min_movable_time()
            if t is not None:
                times.append(t)
            times.extend(r.send_time for r in self.sent.values() if r.rolled_back)
        for env in self.inputs:
            times.append(self._input_time(env))
        unacked = self.ep.ledger.min_time()
        if unacked is not None:
            times.append(unacked)
        keep = []
        for r, t in self.marked:
            if r <= round_id:
                times.append(t)
            else:
                keep.append((r, t))
        self.marked = keep
        self.reported_round = max(self.reported_round, round_id)
        min_time = min(times) if times else None
        if pe is not None and min_time is None:
            text = f"Infinite (unconfirmed end of simulation for time {pe.time})"
        elif min_time is None:
            text = "Infinite (no movable transaction)"
        else:
            text = str(min_time)
        log.debug("GVT parameter requested by SimulationController, min. time: %s", text)
        return LocalGvtParameter(min_time, pe, round_id, self.index)

    def _input_time(self, env: Envelope) -> int:
        if env.kind is Kind.XACT:
            return pickle.loads(env.payload).move_time
        if env.kind is Kind.CANCELBACK:
            return env.payload[1]
        rec = self.received.get((lp_index(env.sender), env.payload))
        return rec.move_time if rec is not None else self.gvt

    def receive_gvt(self, gvt: int, lpcc_needed: bool) -> None:
        if gvt < self.gvt:
            raise ProtocolError(f"{self.name} received GVT {gvt} below previous {self.gvt}")
        log.debug("Received new GVT of %d from SimulationController, LPCC processing needed = %s", gvt, str(lpcc_needed).lower())
        self.gvt = gvt
        self.gvt_history.append(gvt)
        self.gvt_requested = False
        self.commit_state(gvt)
        if lpcc_needed and self.lpcc is not None:
            self.lpcc.process(self.clock() * 1000.0, self.sensors)
        if (
            self.mode.cancelback
            and self.mode.cancelback_reason == "memory"
            and self.free_memory() >= self.config.memory_limit2
        ):
            self._set_cancelback(False)

    def commit_state(self, gvt: int) -> None:
        i = bisect.bisect_left(self.saved_times, gvt)
        for t in self.saved_times[: max(0, i - 1)]:
            self._drop_state(t)
        if i > 1:
            del self.saved_times[: i - 1]
            i = 1
        if i < len(self.saved_times):
            committed = self.saved[self.saved_times[i]].committed_move_count_at_save
        else:
            committed = self.state.total_moves
        self.sensors.committed_moves = max(self.sensors.committed_moves, committed)
        for key in [k for k, r in self.sent.items() if r.send_time < gvt]:
            rec = self.sent.pop(key)
            self.memory_bytes -= len(rec.payload) + RECORD_OVERHEAD
        for key in [k for k, r in self.received.items() if r.move_time < gvt]:
            rec = self.received.pop(key)
            self.memory_bytes -= len(rec.payload) + RECORD_OVERHEAD
        for tag in [t for t, time in self.annihilated.items() if time < gvt]:
            del self.annihilated[tag]
        log_commit.debug("Simulation state committed for time %d", gvt)

    def force_gvt_at(self, time: int) -> None:
        log.debug(
            "Received a request from other LP for local LP to initiate GVT calculation "
            "when it passed the simulation time %d",
            time,
        )
        if time not in self.mode.forced_gvt_times:
            bisect.insort(self.mode.forced_gvt_times, time)

    def _check_forced(self) -> None:
        forced = self.mode.forced_gvt_times
        if forced and (self.state.clock > forced[0] or self.mode.provisional_end is not None):
            while forced and (self.state.clock > forced[0] or self.mode.provisional_end is not None):
                forced.pop(0)
            self.gvt_requested = False
            self.request_gvt("forced")

    # ------------------------------------------------------------ end of simulation

    def end_of_simulation_by_transaction(self, end: EndMark) -> None:
        pe = self.mode.provisional_end
        log.info("SimulationController reported confirmed End of Simulation by xact: %s", end.text)
        if not (pe is not None and pe.order() == end.order()):
            st = self.state
            if st.clock > end.time or (st.clock == end.time and st.last_moved_key() is not None):
                self.rollback_state(end.time)
            elif self.engine.min_movable_time() is not None and self.engine.min_movable_time() < end.time:
                raise ProtocolError(f"{self.name} is behind the confirmed end time {end.time}")
            self._move_before(end)
        self._drop_received_after(end)
        self.sensors.committed_moves = self.state.total_moves
        self.mode.phase = Phase.TERMINATED
        log.info("Simulation stopped and simulation state changed to TERMINATED")

    def _drop_received_after(self, end: EndMark) -> None:
        """Forget arrivals whose sending move orders after the end; their senders undid those sends."""
        engine = self.engine
        stale = [
            x
            for x in engine.state.chain
            if not engine.owns(x.current_block.partition_no) and (x.move_time, x.key) > end.order()
        ]
        for xact in stale:
            engine.discard_received(xact)
        if stale:
            log.debug("Dropped %d received transactions ordered after the end", len(stale))

    def _move_before(self, end: EndMark) -> None:
        """Replay local work at the end tick that orders before the end transaction."""
        engine = self.engine
        st = engine.state
        if st.clock != end.time:
            return
        while True:
            head = engine.earliest_movable()
            if head is None or head.move_time != end.time or head.key > end.key:
                break
            xact = engine.chain_out_next_movable_for_current_time()
            assert xact is head
            engine.move_transaction(xact)
            self.sensors.simulated_moves += 1
        st.outbox.clear()

    def get_simulation_report(self, end: EndMark | None, include_chain: bool) -> ReportFragment:
        end_time = end.time if end is not None else self.state.clock
        report = build_report(self.engine, end_time, None, include_chain)
        s = self.sensors
        log_stats.info("Total committed transaction moves: %d", s.committed_moves)
        log_stats.info("Total transaction moves rolled back: %d", s.moves_rolledback)
        log_stats.info("Total simulated transaction moves: %d", s.simulated_moves)
        log_stats.info("Total sent transactions: %d", s.xacts_sent)
        log_stats.info("Total sent anti-transactions: %d", s.anti_xacts_sent)
        log_stats.info("Total received transactions: %d", s.xacts_received)
        log_stats.info("Total received anti-transactions: %d", s.anti_xacts_received)
        return ReportFragment(self.index, report, s.copy())
