from __future__ import annotations

import pytest
from conftest import Capture, load_model, validation2_draws

from pgpss import logs
from pgpss.config import Config
from pgpss.controller import (
    RunPhase,
    SimulationController,
    assemble_report,
    build_parallel,
    decide_gvt,
    min_time_text,
    run_deterministic,
    run_threaded,
)
from pgpss.engine import run_sequential
from pgpss.lp import CONTROLLER, EndMark, LocalGvtParameter, Phase, lp_name
from pgpss.model import BlockRef, parse_model
from pgpss.report import render_report
from pgpss.transport import Kind, Network

B = BlockRef
NO_LPCC = Config(lpcc_enabled=False)


def _end(time: int, lp: int, prio: int = 0, xid: int = 7) -> EndMark:
    return EndMark(time, (time, -prio, 0, lp, 0, 0), lp, xid, f"xact(Id: {xid})")


def test_end_confirmed_when_others_strictly_past() -> None:
    end = _end(11, 2)
    outcome = decide_gvt({1: LocalGvtParameter(26), 2: LocalGvtParameter(None, end)})
    assert outcome.confirmed_end == end and outcome.gvt == 26


def test_plain_round_takes_minimum() -> None:
    outcome = decide_gvt({1: LocalGvtParameter(841), 2: LocalGvtParameter(2154)})
    assert (outcome.gvt, outcome.confirmed_end) == (841, None)


def test_end_not_confirmed_while_another_lp_is_behind() -> None:
    end = _end(84652, 1)
    outcome = decide_gvt({1: LocalGvtParameter(None, end), 2: LocalGvtParameter(83196)})
    assert outcome.confirmed_end is None and outcome.gvt == 83196 and outcome.earliest_end == end


def test_end_not_confirmed_at_equal_time() -> None:
    outcome = decide_gvt({1: LocalGvtParameter(11), 2: LocalGvtParameter(None, _end(11, 2))})
    assert outcome.confirmed_end is None


def test_earliest_end_wins_by_time_then_priority() -> None:
    low, high = _end(20, 1, prio=0, xid=1), _end(20, 2, prio=5, xid=2)
    outcome = decide_gvt({1: LocalGvtParameter(None, low), 2: LocalGvtParameter(None, high), 3: LocalGvtParameter(30)})
    assert outcome.confirmed_end == high


def test_min_time_text() -> None:
    assert min_time_text(LocalGvtParameter(26)) == "26"
    assert min_time_text(LocalGvtParameter(None, _end(11, 2))) == "Infinite (unconfirmed end of simulation for time 11)"


def _controller(count: int = 2) -> tuple[SimulationController, Network]:
    net = Network()
    ctrl = SimulationController(NO_LPCC, net.endpoint(CONTROLLER), count, lambda: 0.0)
    for i in range(1, count + 1):
        net.endpoint(lp_name(i))
    ctrl.start()
    return ctrl, net


def test_force_sent_to_other_lps_once() -> None:
    ctrl, net = _controller(3)
    end = _end(11, 2)
    ctrl.on_provisional_end_request(end)
    ctrl.on_provisional_end_request(end)
    for i, expected in ((1, [11]), (2, []), (3, [11])):
        got = [e.payload for e in net.endpoints[lp_name(i)].drain() if e.kind is Kind.FORCE_GVT_AT]
        assert got == expected


def test_competing_ends_force_each_earliest() -> None:
    ctrl, net = _controller(3)
    ctrl.on_provisional_end_request(_end(30, 1))
    ctrl.on_provisional_end_request(_end(20, 3, xid=9))
    got = [e.payload for e in net.endpoints["LP2"].drain() if e.kind is Kind.FORCE_GVT_AT]
    assert got == [30, 20]
    assert ctrl.pending_end.time == 20


def test_user_commands() -> None:
    ctrl, net = _controller()
    ctrl.user_command("g")
    assert ctrl.step()
    assert all(net.endpoints[n].drain()[0].kind is Kind.GVT_PARAM_REQUEST for n in ctrl.lp_names)
    ctrl.user_command("X")
    assert ctrl.run.phase is RunPhase.TERMINATED
    assert [e.kind for e in net.endpoints["LP1"].drain()] == [Kind.STOP]
    ctrl.user_command("G")
    assert not ctrl.requested


def test_validation3_1_run(capture: Capture) -> None:
    par = run_deterministic(load_model("validation3_1"), NO_LPCC)
    report = par.report
    seq = run_sequential(load_model("validation3_1"))
    assert report.end_time == seq.end_time
    assert report.end_transaction == str(seq.end_transaction)
    assert "Simulation finished" in capture.messages(logs.SIMULATION)
    assert all(lp.mode.phase is Phase.TERMINATED for lp in par.lps)


def test_user_force_gvt_adds_round() -> None:
    model = load_model("validation3_2")
    base = run_deterministic(model, NO_LPCC)
    forced = run_deterministic(model, NO_LPCC, user_commands={50: "G"})
    assert forced.run.rounds >= 1
    assert forced.report.block_totals() == base.report.block_totals()


def test_user_terminate_stops_without_report() -> None:
    par = run_deterministic(load_model("validation3_2"), NO_LPCC, user_commands={20: "X"})
    assert par.run.phase is RunPhase.TERMINATED and par.report is None
    assert all(lp.mode.phase is Phase.TERMINATED for lp in par.lps)


def test_single_partition_matches_sequential() -> None:
    model = load_model("validation2")
    par = run_deterministic(model, NO_LPCC, draws=validation2_draws())
    seq = run_sequential(model, draws=validation2_draws())
    assert par.report.end_time == seq.end_time == 18
    assert par.report.block_totals() == seq.block_totals
    totals = [par.report.block_totals()[B(1, i)] for i in range(1, 11)]
    assert totals == [5, 5, 5, 5, 4, 4, 4, 0, 0, 4]


def test_runtime_error_aborts_run() -> None:
    model = parse_model("PARTITION P,1\nGENERATE 1\nRELEASE F\nTERMINATE 1\nPARTITION Q,1\nGENERATE 5\nTERMINATE 1\n")
    par = run_deterministic(model, NO_LPCC)
    assert par.run.phase is RunPhase.TERMINATED
    assert "does not hold" in par.run.error


def test_empty_summary_renders_header_only() -> None:
    text = render_report(run_deterministic(load_model("validation3_1"), NO_LPCC).report)
    assert text.rstrip().endswith("Summary entity report section:")


def test_assemble_report_performance() -> None:
    report = assemble_report(_end(100, 1), [], 4.0)
    assert (report.end_time, report.end_transaction, report.performance) == (100, "xact(Id: 7)", 25.0)


def test_termination_conservation() -> None:
    model = load_model("validation3_2")
    par = run_deterministic(model, NO_LPCC)
    report = par.report
    end_partition = model.partition(par.run.end.lp)
    totals = report.block_totals()
    decrements = sum(
        totals[B(end_partition.number, i)] * b.params.decrement
        for i, b in enumerate(end_partition.blocks, start=1)
        if b.kind == "TERMINATE"
    )
    assert decrements >= end_partition.termination_counter


def test_threaded_mode_matches_sequential_end() -> None:
    model = load_model("validation3_1")
    par = run_threaded(model, NO_LPCC, timeout=60)
    seq = run_sequential(model)
    assert par.report.end_time == seq.end_time
    assert par.report.block_totals() == seq.block_totals


def test_partition_numbering_checked() -> None:
    model = load_model("validation3_1")
    model.partitions[1].number = 5
    with pytest.raises(ValueError):
        build_parallel(model, NO_LPCC, clock=lambda: 0.0)
