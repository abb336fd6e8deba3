import numpy as np
import pytest
from hypothesis import given, strategies as st

from gfflab import rng


def test_same_keys_same_draws():
    a = rng.stream(7, 1, 2, 3).random(5)
    b = rng.stream(7, 1, 2, 3).random(5)
    assert np.array_equal(a, b)


def test_draws_do_not_depend_on_creation_order():
    first = rng.stream(3, rng.TAG_FIELD, 0).random(4)
    _ = [rng.stream(3, rng.TAG_FIELD, k).random(100) for k in range(1, 5)]
    assert np.array_equal(first, rng.stream(3, rng.TAG_FIELD, 0).random(4))


@given(st.integers(0, 2**64 - 1), st.lists(st.integers(0, 2**32 - 1), min_size=1, max_size=4))
def test_distinct_keys_give_distinct_streams(seed, keys):
    a = rng.stream(seed, *keys).random(4)
    b = rng.stream(seed, *keys, 0).random(4)
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_rejects_out_of_range_seed(seed):
    with pytest.raises(ValueError):
        rng.stream(seed)


def test_rejects_negative_key():
    with pytest.raises(ValueError):
        rng.stream(0, -3)


def test_rejects_key_wider_than_32_bits():
    with pytest.raises(ValueError):
        rng.stream(0, 2**32)


def test_trailing_zero_key_is_a_different_stream():
    assert not np.array_equal(rng.stream(5, 1, 7).random(3), rng.stream(5, 1, 7, 0).random(3))
