import numpy as np
import pytest

from branchpoll.rng import as_stream, make_stream


def test_same_key_same_draws():
    assert np.array_equal(make_stream(3, 4).random(100), make_stream(3, 4).random(100))


def test_distinct_streams_differ():
    a, b = make_stream(3, 0).random(1000), make_stream(3, 1).random(1000)
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 5 / np.sqrt(1000)


def test_distinct_seeds_differ():
    assert not np.array_equal(make_stream(1).random(10), make_stream(2).random(10))


def test_negative_key_rejected():
    with pytest.raises(ValueError):
        make_stream(-1)


def test_as_stream():
    g = make_stream(5)
    assert as_stream(g) is g
    assert np.array_equal(as_stream(7).random(5), make_stream(7).random(5))
