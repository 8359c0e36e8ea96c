"""Simulation controller: LP lifecycle, GVT rounds, end confirmation and the combined report."""

from __future__ import annotations

import threading
import time as wallclock
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import Enum

from pgpss import logs
from pgpss.config import Config
from pgpss.lp import CONTROLLER, EndMark, LocalGvtParameter, LogicalProcess, ReportFragment, lp_index, lp_name
from pgpss.lpcc import LPControlComponent
from pgpss.model import ModelSpec
from pgpss.report import ReportSet, merge_reports
from pgpss.rng import CounterRng, DrawSource
from pgpss.transport import Endpoint, Envelope, Kind, Network, World

log = logs.get(logs.SIMULATION)
log_gvt = logs.get(logs.SIMULATION_GVT)

FORCE_GVT = "G"
TERMINATE = "X"
STALL_SECONDS = 1.0
PROMPT = ("Please press:", "G + <Enter> to force GVT calculation", "X + <Enter> to terminate the simulation")


class RunPhase(Enum):
    CREATED = "CREATED"
    SIMULATING = "SIMULATING"
    ENDING = "ENDING"
    REPORTING = "REPORTING"
    FINISHED = "FINISHED"
    TERMINATED = "TERMINATED"


@dataclass(frozen=True)
class GvtOutcome:
    gvt: int | None
    confirmed_end: EndMark | None = None
    earliest_end: EndMark | None = None


def decide_gvt(params: Mapping[int, LocalGvtParameter]) -> GvtOutcome:
    """Combine local parameters into a GVT or a confirmed end.

    The earliest provisional end by (time, chain key) is confirmed when every
    LP reports a minimum strictly greater than its time.
    """
    mins = [p.min_time for p in params.values() if p.min_time is not None]
    gvt = min(mins) if mins else None
    ends = [p.provisional_end for p in params.values() if p.provisional_end is not None]
    if not ends:
        return GvtOutcome(gvt)
    earliest = min(ends, key=EndMark.order)
    if all(m > earliest.time for m in mins):
        return GvtOutcome(gvt, earliest, earliest)
    return GvtOutcome(gvt, None, earliest)


def min_time_text(param: LocalGvtParameter) -> str:
    if param.min_time is not None:
        return str(param.min_time)
    if param.provisional_end is not None:
        return f"Infinite (unconfirmed end of simulation for time {param.provisional_end.time})"
    return "Infinite (no movable transaction)"


@dataclass
class SimulationRun:
    phase: RunPhase = RunPhase.CREATED
    gvt: int = 0
    gvt_history: list[int] = field(default_factory=list)
    rounds: int = 0
    end: EndMark | None = None
    report: ReportSet | None = None
    fragments: dict[int, ReportFragment] = field(default_factory=dict)
    error: str | None = None
    started: float = 0.0
    finished: float = 0.0


class SimulationController:
    """Controller actor; rounds are never pipelined."""

    def __init__(
        self,
        config: Config,
        endpoint: Endpoint,
        lp_count: int,
        clock: Callable[[], float],
        *,
        include_chain: bool = False,
        retry_seconds: float = 0.05,
    ) -> None:
        self.name = CONTROLLER
        self.config = config
        self.ep = endpoint
        self.lp_count = lp_count
        self.clock = clock
        self.include_chain = include_chain
        self.retry_seconds = retry_seconds
        self.run = SimulationRun()
        self.round_id = 0
        self.round_lpcc = False
        self.replies: dict[int, LocalGvtParameter] | None = None
        self.requested = False
        self.pending_end: EndMark | None = None
        self.retry_at: float | None = None
        self.forced_for: set[tuple[int, tuple]] = set()
        self.next_lpcc = config.lpcc_update_interval
        self.confirms: set[int] = set()

    @property
    def lp_names(self) -> list[str]:
        return [lp_name(i) for i in range(1, self.lp_count + 1)]

    def start(self) -> None:
        self.run.phase = RunPhase.SIMULATING
        self.run.started = self.clock()
        log.info("Simulation started")

    # ------------------------------------------------------------ loop

    def step(self) -> bool:
        envelopes = self.ep.drain()
        for env in envelopes:
            self._dispatch(env)
        if self.run.phase is not RunPhase.SIMULATING:
            return bool(envelopes)
        started = False
        if self.replies is None:
            now = self.clock()
            if self.config.lpcc_enabled and now >= self.next_lpcc:
                while self.next_lpcc <= now:
                    self.next_lpcc += self.config.lpcc_update_interval
                self._start_round(lpcc_needed=True)
                started = True
            elif self.requested or (self.retry_at is not None and now >= self.retry_at):
                self._start_round(lpcc_needed=False)
                started = True
        elif len(self.replies) == self.lp_count:
            self._finish_round()
            started = True
        return bool(envelopes) or started

    def kick(self) -> bool:
        """Called by a harness at quiescence; returns whether the run can continue."""
        if self.run.phase is not RunPhase.SIMULATING:
            return False
        if self.replies is None:
            self._start_round(lpcc_needed=False)
            return True
        return False

    def _dispatch(self, env: Envelope) -> None:
        kind = env.kind
        if kind is Kind.GVT_REQUEST:
            self.requested = True
        elif kind is Kind.GVT_PARAM_REPLY:
            param: LocalGvtParameter = env.payload
            if self.replies is not None and param.round_id == self.round_id:
                self.replies[lp_index(env.sender)] = param
        elif kind is Kind.END_CONFIRM:
            self.confirms.add(lp_index(env.sender))
            if self.run.phase is RunPhase.ENDING and len(self.confirms) == self.lp_count:
                self._request_reports()
        elif kind is Kind.REPORT_REPLY:
            frag: ReportFragment = env.payload
            self.run.fragments[frag.lp] = frag
            if self.run.phase is RunPhase.REPORTING and len(self.run.fragments) == self.lp_count:
                self._assemble()
        elif kind is Kind.USER:
            self.user_command(env.payload)
        elif kind is Kind.ERROR:
            self._abort(str(env.payload))
        elif kind is Kind.ACK:
            self.ep.ledger.ack(env.sender, env.payload.seq)

    # ------------------------------------------------------------ GVT

    def _start_round(self, lpcc_needed: bool) -> None:
        self.requested = False
        self.retry_at = None
        self.round_id += 1
        self.round_lpcc = lpcc_needed
        self.replies = {}
        self.run.rounds += 1
        log_gvt.info("Initiated GVT calculation")
        for name in self.lp_names:
            self.ep.send(name, Kind.GVT_PARAM_REQUEST, self.round_id)

    def _finish_round(self) -> None:
        replies = self.replies or {}
        self.replies = None
        for i in sorted(replies):
            log_gvt.info("Min time received from LP%d: %s", i, min_time_text(replies[i]))
        outcome = self.perform_gvt_calculation(replies)
        if outcome.confirmed_end is not None:
            self._confirm_end(outcome.confirmed_end)
            return
        if outcome.gvt is None:
            self._abort("simulation stalled: no movable transaction and no end of simulation reached")
            return
        if outcome.gvt < self.run.gvt:
            raise AssertionError(f"GVT regressed from {self.run.gvt} to {outcome.gvt}")
        self.run.gvt = outcome.gvt
        self.run.gvt_history.append(outcome.gvt)
        log_gvt.info("Simulation reached Global Virtual Time: %d", outcome.gvt)
        for name in self.lp_names:
            self.ep.send(name, Kind.GVT, (outcome.gvt, self.round_lpcc))
        end = outcome.earliest_end
        if end is not None:
            self.on_provisional_end_request(end)

    def perform_gvt_calculation(self, replies: Mapping[int, LocalGvtParameter]) -> GvtOutcome:
        return decide_gvt(replies)

    def on_provisional_end_request(self, end: EndMark) -> None:
        """Ask the other LPs to request a GVT round once they pass the unconfirmed end time."""
        self.pending_end = end
        self.retry_at = self.clock() + self.retry_seconds
        marker = (end.lp, end.key)
        if marker in self.forced_for:
            return
        self.forced_for.add(marker)
        for i in range(1, self.lp_count + 1):
            if i != end.lp:
                self.ep.send(lp_name(i), Kind.FORCE_GVT_AT, end.time)

    # ------------------------------------------------------------ end

    def _confirm_end(self, end: EndMark) -> None:
        self.run.end = end
        self.run.phase = RunPhase.ENDING
        self.run.finished = self.clock()
        log.info("Simulation finished")
        for name in self.lp_names:
            self.ep.send(name, Kind.END_BY_XACT, end)

    def _request_reports(self) -> None:
        self.run.phase = RunPhase.REPORTING
        for name in self.lp_names:
            self.ep.send(name, Kind.REPORT_REQUEST, (self.run.end, self.include_chain))

    def _assemble(self) -> None:
        frags = [self.run.fragments[i] for i in sorted(self.run.fragments)]
        wall = self.run.finished - self.run.started
        self.run.report = assemble_report(self.run.end, [f.report for f in frags], wall)
        self.run.phase = RunPhase.FINISHED
        log.info("All logical processes terminated")

    def _abort(self, message: str) -> None:
        if self.run.phase in (RunPhase.FINISHED, RunPhase.TERMINATED):
            return
        self.run.error = message
        self.run.phase = RunPhase.TERMINATED
        log.error("Simulation aborted: %s", message)
        self._stop_all()

    def _stop_all(self) -> None:
        for name in self.lp_names:
            self.ep.send(name, Kind.STOP)

    def user_command(self, command: str) -> None:
        cmd = command.strip().upper()
        if self.run.phase is not RunPhase.SIMULATING:
            return
        if cmd == FORCE_GVT:
            self.requested = True
        elif cmd == TERMINATE:
            self.run.phase = RunPhase.TERMINATED
            log.info("Simulation terminated by user")
            self._stop_all()


def assemble_report(end: EndMark | None, fragments: list[ReportSet], wall_seconds: float) -> ReportSet:
    report = merge_reports(fragments)
    if end is not None:
        report.end_time = end.time
        report.end_transaction = end.text
        if wall_seconds > 0:
            report.performance = end.time / wall_seconds
    return report


# ---------------------------------------------------------------- run builders


@dataclass
class ParallelRun:
    controller: SimulationController
    lps: list[LogicalProcess]
    network: Network
    world: World | None = None

    @property
    def run(self) -> SimulationRun:
        return self.controller.run

    @property
    def report(self) -> ReportSet | None:
        return self.controller.run.report


def build_parallel(
    model: ModelSpec,
    config: Config,
    *,
    draws: DrawSource | None = None,
    clock: Callable[[], float],
    delays: Mapping[tuple[str, str], int] | None = None,
    include_chain: bool = False,
    lpcc_factory: Callable[[int], LPControlComponent] | None = None,
) -> ParallelRun:
    numbers = [p.number for p in model.partitions]
    if numbers != list(range(1, len(numbers) + 1)):
        raise ValueError(f"partitions must be numbered 1..n, got {numbers}")
    network = Network(delays)
    count = len(numbers)
    ctrl = SimulationController(config, network.endpoint(CONTROLLER), count, clock, include_chain=include_chain)
    source = draws or CounterRng(config.rng_seed)
    lps = [
        LogicalProcess(
            i, count, model, config, network.endpoint(lp_name(i)), clock, draws=source, lpcc_factory=lpcc_factory
        )
        for i in numbers
    ]
    return ParallelRun(ctrl, lps, network)


def run_deterministic(
    model: ModelSpec,
    config: Config,
    *,
    seed: int = 0,
    weights: Mapping[str, int] | None = None,
    delays: Mapping[tuple[str, str], int] | None = None,
    draws: DrawSource | None = None,
    max_steps: int = 2_000_000,
    step_seconds: float = 0.001,
    include_chain: bool = False,
    user_commands: Mapping[int, str] | None = None,
    lpcc_factory: Callable[[int], LPControlComponent] | None = None,
    trace: bool = False,
) -> ParallelRun:
    """Run all actors under the seeded single-threaded harness until the run settles."""
    holder: dict[str, World] = {}
    par = build_parallel(
        model,
        config,
        draws=draws,
        clock=lambda: holder["world"].now(),
        delays=delays,
        include_chain=include_chain,
        lpcc_factory=lpcc_factory,
    )
    world = World(par.network, [par.controller, *par.lps], seed=seed, weights=weights, step_seconds=step_seconds)
    holder["world"] = world
    par.world = world
    if trace:
        world.trace = []
        par.network.record = True
    pending_user = dict(user_commands or {})
    par.controller.start()
    user_ep = par.network.endpoint("user")
    while True:
        if world.steps >= max_steps:
            raise TimeoutError(f"simulation did not finish within {max_steps} harness steps")
        if world.steps in pending_user:
            user_ep.send(CONTROLLER, Kind.USER, pending_user.pop(world.steps))
        if world.step():
            continue
        if par.run.phase is RunPhase.SIMULATING:
            if not par.controller.kick():
                raise RuntimeError("harness quiescent during an unfinished GVT round")
            world.idle_run = 0
            continue
        break
    return par


def run_threaded(
    model: ModelSpec,
    config: Config,
    *,
    draws: DrawSource | None = None,
    include_chain: bool = False,
    timeout: float = 600.0,
    commands: Callable[[Endpoint], None] | None = None,
) -> ParallelRun:
    """Run every actor on its own thread with blocking mailboxes."""
    t0 = wallclock.monotonic()
    par = build_parallel(
        model, config, draws=draws, clock=lambda: wallclock.monotonic() - t0, include_chain=include_chain
    )
    done = threading.Event()
    user_ep = par.network.endpoint("user")

    def loop(actor: LogicalProcess | SimulationController) -> None:
        idle_since = wallclock.monotonic()
        while not done.is_set():
            if actor.step():
                idle_since = wallclock.monotonic()
                continue
            if actor is par.controller and wallclock.monotonic() - idle_since > STALL_SECONDS:
                par.controller.kick()
                idle_since = wallclock.monotonic()
            actor.ep.wait(0.005)

    par.controller.start()
    threads = [threading.Thread(target=loop, args=(a,), daemon=True) for a in [par.controller, *par.lps]]
    for t in threads:
        t.start()
    if commands is not None:
        threading.Thread(target=commands, args=(user_ep,), daemon=True).start()
    deadline = t0 + timeout
    try:
        while par.run.phase not in (RunPhase.FINISHED, RunPhase.TERMINATED):
            if wallclock.monotonic() > deadline:
                raise TimeoutError(f"simulation did not finish within {timeout} s")
            wallclock.sleep(0.005)
    finally:
        done.set()
        for t in threads:
            t.join(timeout=5.0)
    return par


def run_simulation(model: ModelSpec, config: Config, **kwargs: object) -> ParallelRun:
    """Run the model in the mode selected by the configuration."""
    if config.deterministic:
        return run_deterministic(model, config, seed=config.rng_seed, **kwargs)  # type: ignore[arg-type]
    return run_threaded(model, config, **kwargs)  # type: ignore[arg-type]
