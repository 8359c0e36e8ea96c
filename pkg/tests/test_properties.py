from __future__ import annotations

from conftest import Capture
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from modelgen import random_model_source

from pgpss.config import Config
from pgpss.controller import ParallelRun, run_deterministic
from pgpss.engine import run_sequential
from pgpss.model import parse_model

harness_settings = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])


def _run(model_seed: int, seed: int, weight: int, trace: bool = False) -> ParallelRun:
    model = parse_model(random_model_source(model_seed))
    config = Config(lpcc_enabled=False, rng_seed=model_seed)
    return run_deterministic(model, config, seed=seed, weights={"LP1": weight}, trace=trace)


@harness_settings
@given(st.integers(0, 500), st.integers(0, 1000), st.integers(1, 4))
def test_any_interleaving_matches_sequential(model_seed: int, seed: int, weight: int) -> None:
    seq = run_sequential(parse_model(random_model_source(model_seed)), seed=model_seed)
    report = _run(model_seed, seed, weight).report
    assert report is not None
    assert (report.end_time, report.end_transaction) == (seq.end_time, str(seq.end_transaction))
    assert report.block_totals() == seq.block_totals


@harness_settings
@given(st.integers(0, 500), st.integers(0, 1000), st.integers(1, 4))
def test_transactions_are_conserved_across_lps(model_seed: int, seed: int, weight: int) -> None:
    par = _run(model_seed, seed, weight)
    states = [lp.state for lp in par.lps]
    created = sum(s.created for s in states)
    terminated = sum(s.terminated for s in states)
    chained = sum(len(s.chain) for s in states)
    in_transit = sum(s.crossed_out for s in states) - sum(s.crossed_in for s in states)
    assert in_transit >= 0
    assert created == terminated + chained + in_transit


@settings(harness_settings, max_examples=10)
@given(st.integers(0, 500), st.integers(0, 1000))
def test_fixed_seed_runs_are_identical(capture: Capture, model_seed: int, seed: int) -> None:
    capture.records.clear()
    first = _run(model_seed, seed, 2, trace=True)
    logs_first = capture.messages()
    capture.records.clear()
    second = _run(model_seed, seed, 2, trace=True)
    assert first.world.trace == second.world.trace
    assert first.network.sent_log == second.network.sent_log
    assert capture.messages() == logs_first
