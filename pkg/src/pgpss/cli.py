"""Command line entry point: `pgpss <model file> [Setting[=value] ...]`."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import TextIO

from pgpss import logs
from pgpss.config import Config, ConfigError, load_config
from pgpss.controller import CONTROLLER, PROMPT, ParallelRun, RunPhase, run_deterministic, run_threaded
from pgpss.engine import SimulationError
from pgpss.model import ModelSpec, ParseError, parse_model, render_model
from pgpss.report import render_report
from pgpss.transport import Endpoint, Kind

__all__ = ["Config", "apply_default_tc", "configure_logging", "main"]


def configure_logging(config: Config, stream: TextIO | None = None) -> None:
    """Route every simulator logger to one handler; per-logger levels come from `log.<name>` settings."""
    root = logging.getLogger(logs.ROOT)
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.propagate = False
    root.setLevel(logging.WARNING)
    for name in logs.ALL_LOGGERS[1:]:
        logging.getLogger(name).setLevel(logging.NOTSET)
    for name, level in config.log_levels.items():
        full = name if name.startswith(logs.ROOT) else f"{logs.ROOT}.{name}" if name != "root" else logs.ROOT
        logging.getLogger(full).setLevel(level)


def apply_default_tc(model: ModelSpec, default_tc: int | None) -> ModelSpec:
    """Fill missing termination counters; a terminating partition left without one is an error."""
    parts = []
    for part in model.partitions:
        if part.termination_counter is None and any(b.kind == "TERMINATE" for b in part.blocks):
            if default_tc is None:
                raise ConfigError(f"partition '{part.name}' has no termination counter and DefaultTC is not set")
            part = dataclasses.replace(part, termination_counter=default_tc)
        parts.append(part)
    return ModelSpec(parts)


def _read_commands(stdin: TextIO, ep: Endpoint) -> None:
    for line in stdin:
        cmd = line.strip().upper()
        if cmd:
            ep.send(CONTROLLER, Kind.USER, cmd)


def main(argv: Sequence[str] | None = None, *, stdin: TextIO | None = None, stdout: TextIO | None = None) -> int:
    out = stdout or sys.stdout
    parser = argparse.ArgumentParser(prog="pgpss", description="Run a GPSS model on optimistic logical processes.")
    parser.add_argument("model", help="simulation model file")
    parser.add_argument("settings", nargs="*", help="Name=value settings, or ConfigFile=<path> first")
    args = parser.parse_args(argv)
    try:
        config = load_config([args.model, *args.settings])
    except ConfigError as exc:
        print(f"Configuration error: {exc}", file=sys.stderr)
        return 2
    configure_logging(config)
    if config.log_config_details:
        for f in dataclasses.fields(config):
            print(f"{f.name}={getattr(config, f.name)}", file=out)
    try:
        model = parse_model(Path(args.model).read_text())
    except ParseError as exc:
        print(f"Parse error: {exc}", file=sys.stderr)
        return 1
    print("Simulation model file read and parsed successfully.", file=out)
    print(f"{len(model.partitions)} partition(s) found in simulation model file.", file=out)
    if config.parse_model_only:
        print(render_model(model), file=out, end="")
        return 0
    try:
        model = apply_default_tc(model, config.default_tc)
    except ConfigError as exc:
        print(f"Configuration error: {exc}", file=sys.stderr)
        return 2
    print("", file=out)
    print("\n".join(PROMPT), file=out)
    print("", file=out)
    include_chain = logs.get(logs.SIMULATION_REPORT_CHAIN).isEnabledFor(logging.DEBUG)
    try:
        if config.deterministic:
            par: ParallelRun = run_deterministic(model, config, seed=config.rng_seed, include_chain=include_chain)
        else:
            source = stdin or sys.stdin
            par = run_threaded(
                model, config, include_chain=include_chain, commands=lambda ep: _read_commands(source, ep)
            )
    except (SimulationError, RuntimeError, TimeoutError) as exc:
        print(f"Simulation error: {exc}", file=sys.stderr)
        return 1
    run = par.run
    if run.phase is RunPhase.TERMINATED:
        if run.error:
            print(f"Simulation error: {run.error}", file=sys.stderr)
            return 1
        print("Simulation terminated by user.", file=out)
        return 0
    assert run.report is not None
    print(render_report(run.report), file=out, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
