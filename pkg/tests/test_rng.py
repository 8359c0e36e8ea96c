from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgpss.model import BlockRef
from pgpss.rng import CounterRng, ScriptedDraws

B = BlockRef


def test_counter_rng_is_a_pure_function_of_key() -> None:
    a, b = CounterRng(7), CounterRng(7)
    draws_a = [a.ticks(B(1, 2), i, 1, 9) for i in range(50)]
    # Call order must not matter.
    draws_b = [b.ticks(B(1, 2), i, 1, 9) for i in reversed(range(50))][::-1]
    assert draws_a == draws_b


def test_streams_differ_by_seed_block_and_token() -> None:
    rng = CounterRng(1)
    base = [rng.unit(B(1, 1), i) for i in range(20)]
    assert base != [CounterRng(2).unit(B(1, 1), i) for i in range(20)]
    assert base != [rng.unit(B(1, 2), i) for i in range(20)]
    assert rng.unit(B(1, 1), 0, token=(5, 1)) != rng.unit(B(1, 1), 0, token=(5, 2))


def test_token_overrides_index() -> None:
    rng = CounterRng(3)
    assert rng.unit(B(1, 1), 0, token=("x",)) == rng.unit(B(1, 1), 99, token=("x",))


@given(st.integers(0, 2**32), st.integers(0, 10_000), st.integers(-5, 5), st.integers(0, 20))
def test_ranges(seed: int, index: int, low: int, span: int) -> None:
    rng = CounterRng(seed)
    assert low <= rng.ticks(B(2, 3), index, low, low + span) <= low + span
    assert 0.0 <= rng.unit(B(2, 3), index) < 1.0


def test_scripted_replays_then_falls_back() -> None:
    fallback = CounterRng(9)
    draws = ScriptedDraws({B(1, 1): [4, 3]}, fallback)
    assert [draws.ticks(B(1, 1), i, 1, 5) for i in range(2)] == [4, 3]
    assert draws.ticks(B(1, 1), 2, 1, 5) == fallback.ticks(B(1, 1), 2, 1, 5)
    assert draws.unit(B(1, 2), 0, token=(1,)) == fallback.unit(B(1, 2), 0, token=(1,))


def test_scripted_value_outside_range_is_rejected() -> None:
    with pytest.raises(ValueError):
        ScriptedDraws({B(1, 1): [9]}).ticks(B(1, 1), 0, 1, 5)
