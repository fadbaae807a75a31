import numpy as np
import pytest
from hypothesis import given, strategies as st

from erwlab._kernels import DIR_TABLE
from erwlab.rng import ForcedStream, RngStream

N_DRAWS = 1_000_000


def test_direction_table_weights_are_exact():
    vis = np.bincount(DIR_TABLE[0], minlength=6)
    floor = np.bincount(DIR_TABLE[1], minlength=6)
    mid = np.bincount(DIR_TABLE[2], minlength=6)
    assert vis.tolist() == [10] * 6
    assert floor.tolist() == [12] * 5 + [0]  # never -z from the floor
    assert mid.tolist() == [12, 12, 12, 12, 6, 6]


@pytest.fixture(scope="module")
def digits():
    s = RngStream(12345, 0)
    return np.array([s.digit() for _ in range(N_DRAWS)])


@pytest.mark.parametrize("row,probs", [
    (0, [1 / 6] * 6),
    (1, [1 / 5] * 5 + [0.0]),
    (2, [1 / 5] * 4 + [1 / 10] * 2),
])
def test_step_frequencies_within_4_sigma(digits, row, probs):
    counts = np.bincount(DIR_TABLE[row][digits], minlength=6)
    for c, p in zip(counts, probs):
        sd = np.sqrt(N_DRAWS * p * (1 - p))
        assert abs(c - N_DRAWS * p) <= 4 * sd + (0 if p else 0.5)


def test_digits_uniform(digits):
    counts = np.bincount(digits, minlength=60)
    p = 1 / 60
    assert np.all(np.abs(counts - N_DRAWS * p) <= 4 * np.sqrt(N_DRAWS * p * (1 - p)))


@given(st.integers(0, 2**64 - 1), st.integers(0, 10**6))
def test_same_identity_same_digits(seed, replica):
    a, b = RngStream(seed, replica), RngStream(seed, replica)
    assert [a.digit() for _ in range(20)] == [b.digit() for _ in range(20)]


def test_replicas_differ():
    a, b = RngStream(1, 0), RngStream(1, 1)
    assert [a.digit() for _ in range(50)] != [b.digit() for _ in range(50)]


def test_buffer_restore_continues_stream():
    a, b = RngStream(9, 2), RngStream(9, 2)
    head = [a.digit() for _ in range(3)]
    assert head == [b.digit() for _ in range(3)]
    digs, left = b.buffered()
    c = RngStream(9, 2)
    c.generator = b.generator
    c.restore(digs, left)
    assert [a.digit() for _ in range(30)] == [c.digit() for _ in range(30)]


def test_negative_replica_rejected():
    with pytest.raises(ValueError):
        RngStream(0, -1)


def test_forced_stream_exhausts():
    f = ForcedStream([3, 4])
    assert (f.digit(), f.digit()) == (3, 4)
    with pytest.raises(IndexError):
        f.digit()
