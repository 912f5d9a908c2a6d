import pytest
from hypothesis import given
from hypothesis import strategies as st

from multicopy.core import (
    INITIAL,
    TOMBSTONE,
    MulticopyError,
    TimedValue,
    check_key,
    is_tombstone,
    val_projection,
)


def test_tombstone_is_a_singleton_and_distinct_from_none():
    assert is_tombstone(TOMBSTONE)
    assert not is_tombstone(None)
    assert not is_tombstone(0)
    assert repr(TOMBSTONE) == "<tombstone>"


def test_initial_copy_is_tombstone_at_time_zero():
    assert INITIAL.ts == 0
    assert is_tombstone(INITIAL.value)


def test_timed_value_equality_and_repr():
    assert TimedValue(3, 7) == TimedValue(3, 7)
    assert TimedValue(3, 7) != TimedValue(3, 8)
    assert repr(TimedValue(3, 7)) == "(3@7)"
    with pytest.raises(AttributeError):
        TimedValue(3, 7).ts = 9  # frozen


def test_val_projection_drops_timestamps():
    contents = {0: TimedValue(5, 3), 2: TimedValue(TOMBSTONE, 8)}
    assert val_projection(contents) == {0: 5, 2: TOMBSTONE}


@given(
    st.dictionaries(
        st.integers(0, 30),
        st.tuples(st.integers(0, 99), st.integers(1, 1000)),
        max_size=12,
    )
)
def test_val_projection_preserves_keys(raw):
    contents = {k: TimedValue(v, t) for k, (v, t) in raw.items()}
    proj = val_projection(contents)
    assert set(proj) == set(contents)
    for k in proj:
        assert proj[k] == contents[k].value


def test_check_key_bounds():
    check_key(0, 4)
    check_key(3, 4)
    with pytest.raises(MulticopyError):
        check_key(4, 4)
    with pytest.raises(MulticopyError):
        check_key(-1, 4)
    with pytest.raises(MulticopyError):
        check_key("0", 4)
    with pytest.raises(MulticopyError):
        check_key(True, 4)
