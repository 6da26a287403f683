import numpy as np
import pytest

from bmfpp.rng import derive_stream


def test_same_labels_same_sequence():
    a = derive_stream(7, [0, 1, 1]).standard_normal(8)
    b = derive_stream(7, [0, 1, 1]).standard_normal(8)
    assert np.array_equal(a, b)


def test_different_labels_different_sequence():
    a = derive_stream(7, [0, 1, 1]).standard_normal(8)
    b = derive_stream(7, [0, 1, 2]).standard_normal(8)
    assert not np.array_equal(a, b)


def test_different_seed_different_sequence():
    a = derive_stream(7, [0, 1, 1]).standard_normal(8)
    b = derive_stream(8, [0, 1, 1]).standard_normal(8)
    assert not np.array_equal(a, b)


def test_label_tuple_length_matters():
    a = derive_stream(7, [3]).standard_normal(4)
    b = derive_stream(7, [3, 0]).standard_normal(4)
    assert not np.array_equal(a, b)


def test_negative_label_rejected():
    with pytest.raises(ValueError):
        derive_stream(7, [-1])


def test_golden_vector():
    # frozen at first implementation; guards the stream derivation scheme
    got = derive_stream(42, [1]).standard_normal(4)
    expected = np.array([
        1.2544943667397455, 0.6062894401319061,
        -1.3401775973994274, -1.0691373317905166,
    ])
    np.testing.assert_allclose(got, expected, rtol=0, atol=0)


def test_collision_scan_over_used_label_space():
    # (phase, i, j, purpose, row, sweep) labels must give distinct streams
    seen = set()
    for phase in range(2):
        for i in range(2):
            for purpose in range(4):
                for row in range(3):
                    first = tuple(derive_stream(5, [phase, i, 0, purpose, row, 0]).integers(0, 2**63, 2))
                    assert first not in seen
                    seen.add(first)
