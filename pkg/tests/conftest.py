from __future__ import annotations

import logging
import sys
from collections.abc import Iterator
from pathlib import Path

import pytest

from pgpss import logs
from pgpss.model import BlockRef, ModelSpec, parse_model
from pgpss.rng import ScriptedDraws

TESTS = Path(__file__).parent
MODELS = TESTS / "models"
GOLDEN = TESTS / "golden"

sys.path.insert(0, str(TESTS))


def load_model(name: str) -> ModelSpec:
    return parse_model((MODELS / f"{name}.gps").read_text())


def model_text(name: str) -> str:
    return (MODELS / f"{name}.gps").read_text()


def validation2_draws() -> ScriptedDraws:
    # Interarrivals come from the first GENERATE draw plus one per generated xact.
    return ScriptedDraws(
        {
            BlockRef(1, 1): [4, 3, 3, 4, 3, 2],
            BlockRef(1, 4): [5, 6, 5, 4, 5],
            BlockRef(1, 7): [0.25] * 4,
        }
    )


class Capture(logging.Handler):
    def __init__(self) -> None:
        super().__init__(logging.DEBUG)
        self.records: list[tuple[str, str]] = []

    def emit(self, record: logging.LogRecord) -> None:
        # Format now: arguments are live objects that keep changing after the call.
        self.records.append((record.name, record.getMessage()))

    def messages(self, logger: str | None = None) -> list[str]:
        return [msg for name, msg in self.records if logger is None or name == logger]


@pytest.fixture
def capture() -> Iterator[Capture]:
    root = logging.getLogger(logs.ROOT)
    saved = (root.level, root.propagate)
    handler = Capture()
    root.addHandler(handler)
    root.setLevel(logging.DEBUG)
    try:
        yield handler
    finally:
        root.removeHandler(handler)
        root.setLevel(saved[0])
        root.propagate = saved[1]


@pytest.fixture(autouse=True)
def _reset_simulator_loggers() -> Iterator[None]:
    yield
    root = logging.getLogger(logs.ROOT)
    for handler in list(root.handlers):
        if not isinstance(handler, Capture):
            root.removeHandler(handler)
    root.propagate = True
    root.setLevel(logging.NOTSET)
    for name in logs.ALL_LOGGERS[1:]:
        logging.getLogger(name).setLevel(logging.NOTSET)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter: pytest.TerminalReporter) -> None:
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
