import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erwlab.engine import kernel_walk, stat_names
from erwlab.lattice import ORIGIN, ColumnStore, NaiveSet, Site, WalkState, erw_step, symmetric_erw_step
from erwlab.rng import RngStream

TARGETS = (ORIGIN, Site(1, 0, 0), Site(0, 0, 1))


def python_table(seed, replica, mode, horizons, T, drift_p=0.7):
    st_ = WalkState.begin(mode=mode, drift_p=drift_p, watch=TARGETS,
                          store="naive" if mode == "drift" else "column")
    rng = RngStream(seed, replica)
    step = symmetric_erw_step if mode == "symmetric" else erw_step
    rows = []
    for t in range(T + 1):
        if t in horizons:
            rows.append([st_.visits(v) for v in TARGETS] +
                        [st_.N, st_.DF, st_.F, st_.z, st_.N_new, 5 * st_.z + 5 * st_.N_new - st_.F])
        if t < T:
            step(st_, rng)
    return np.array(rows), st_


@settings(max_examples=12)
@given(st.integers(0, 2**40), st.integers(0, 50), st.sampled_from(["erw", "symmetric", "drift"]))
def test_kernel_matches_python_walk(seed, replica, mode):
    T = 3000
    hz = [0, 1, 2, 10, 100, 1000, T]
    ref, st_ = python_table(seed, replica, mode, hz, T)
    kw = kernel_walk(RngStream(seed, replica), hz, TARGETS, mode=mode, drift_p=0.7)
    assert np.array_equal(ref, kw.table[:, :-1])
    assert tuple(kw.position) == tuple(st_.position)


def test_kernel_store_matches_python_store():
    ref, st_ = python_table(5, 1, "erw", [20000], 20000)
    kw = kernel_walk(RngStream(5, 1), [20000], TARGETS)
    assert set(kw.store) == set(st_.store)
    assert kw.store.floor_points() == st_._floor_seen


def test_kernel_continues_stream_after_python_steps():
    a = RngStream(3, 0)
    st_ = WalkState.begin(store="column")
    for _ in range(7):
        erw_step(st_, a)
    b_state = WalkState.begin(store="column")
    b = RngStream(3, 0)
    for _ in range(7):
        erw_step(b_state, b)
    for _ in range(500):
        erw_step(b_state, b)
    kw = kernel_walk(a, [500], store=st_.store, start=st_.position)
    assert tuple(kw.position) == tuple(b_state.position)


def test_kernel_is_deterministic():
    a = kernel_walk(RngStream(11, 4), [10, 1000, 50000], TARGETS)
    b = kernel_walk(RngStream(11, 4), [10, 1000, 50000], TARGETS)
    assert np.array_equal(a.table, b.table)


def test_stat_names_layout():
    assert stat_names([ORIGIN]) == ("V", "N", "DF", "F", "z", "N_new", "M5", "l")
    assert stat_names(TARGETS)[:3] == ("V", "V@1_0_0", "V@0_0_1")


@pytest.mark.parametrize("hz", [[], [5, 5], [10, 3], [-1, 3]])
def test_bad_horizons(hz):
    with pytest.raises(ValueError):
        kernel_walk(RngStream(0), hz)


def test_unknown_mode():
    with pytest.raises(ValueError):
        kernel_walk(RngStream(0), [10], mode="lazy")
    with pytest.raises(ValueError):
        kernel_walk(RngStream(0), [10], mode="drift", drift_p=1.0)


def test_store_growth_is_transparent():
    small = ColumnStore(capacity=2)
    a = kernel_walk(RngStream(8, 0), [30000], store=small)
    b = kernel_walk(RngStream(8, 0), [30000])
    assert np.array_equal(a.table, b.table)
    assert set(a.store) == set(b.store) == set(NaiveSet(b.store))
