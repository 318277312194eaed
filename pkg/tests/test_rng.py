import numpy as np
import pytest

from robustq.rng import stream


def test_same_key_same_stream():
    a = stream(42, 3, "env").random(256)
    b = stream(42, 3, "env").random(256)
    np.testing.assert_array_equal(a, b)


def test_distinct_keys_distinct_streams():
    base = stream(42, 3, "env").random(64)
    for key in [(42, 3, "agent"), (42, 4, "env"), (43, 3, "env"), (42, "env", 3)]:
        other = stream(*key).random(64)
        assert not np.array_equal(base, other)


def test_string_and_int_parts_mix():
    g = stream(0, "a", 7, "b")
    assert 0.0 <= g.random() < 1.0


def test_large_integer_parts():
    g = stream(2**80 + 5, "x")
    h = stream(2**80 + 5, "x")
    assert g.random() == h.random()


def test_invalid_keys():
    with pytest.raises(ValueError):
        stream(-1, "env")
    with pytest.raises(TypeError):
        stream(1.5)
    with pytest.raises(ValueError):
        stream()
