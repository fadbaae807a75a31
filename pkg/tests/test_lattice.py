import pytest
from hypothesis import given, strategies as st

from erwlab.lattice import (
    ORIGIN, ColumnStore, NaiveSet, Site, StepKind, WalkState, classify, erw_step, fold,
    is_legal_configuration, run_path, symmetric_erw_step,
)
from erwlab.rng import ForcedStream, RngStream

UP, DOWN = (0, 0, 1), (0, 0, -1)

seeds = st.integers(0, 2**32)


def columns_strategy(max_cols=6, max_h=6):
    """Downward-closed configurations as {(x, y): height}."""
    return st.dictionaries(st.tuples(st.integers(-3, 3), st.integers(-3, 3)),
                           st.integers(1, max_h), max_size=max_cols)


def sites_of(cols):
    return [Site(x, y, z) for (x, y), h in cols.items() for z in range(1, h + 1)]


# ------------------------------------------------------------ classification

def test_classify_kinds():
    s = NaiveSet([Site(0, 0, 1)])
    assert classify(Site(0, 0, 0), s) is StepKind.FLOOR
    assert classify(Site(0, 0, 1), s) is StepKind.VISITED
    assert classify(Site(0, 0, 2), s) is StepKind.NEW
    with pytest.raises(ValueError):
        classify(Site(0, 0, -1), s)


def test_new_site_steps_down_without_randomness():
    st_ = WalkState.begin(Site(2, 3, 5), store="naive")
    erw_step(st_, ForcedStream([]))  # a digit draw would raise
    assert st_.position == Site(2, 3, 4)
    assert Site(2, 3, 5) in st_.store


def test_forced_floor_and_visited_moves():
    st_ = WalkState.begin(ORIGIN, store="naive")
    # floor row: digit d -> direction d // 12; 48 -> +z
    erw_step(st_, ForcedStream([48]))
    assert st_.position == Site(0, 0, 1) and st_.F == 1 and st_.DF == 1
    # (0,0,1) is new: deterministic step down, then floor again
    erw_step(st_, ForcedStream([]))
    assert st_.position == ORIGIN and st_.N_new == 1
    erw_step(st_, ForcedStream([48]))
    # now visited: row d // 10; 59 -> -z
    erw_step(st_, ForcedStream([59]))
    assert st_.position == ORIGIN
    assert st_.visits(ORIGIN) == 3 and st_.F == 2 and st_.DF == 1


@given(seeds, st.sampled_from(["column", "naive"]))
def test_half_space_walk_stays_above_floor(seed, store):
    st_ = WalkState.begin(store=store)
    path = run_path(st_, RngStream(seed), 400)
    assert all(p.z >= 0 for p in path)
    assert all(sum(abs(a - b) for a, b in zip(p, q)) == 1 for p, q in zip(path, path[1:]))


@given(seeds)
def test_visited_set_stays_downward_closed(seed):
    st_ = WalkState.begin(store="naive")
    run_path(st_, RngStream(seed), 500)
    assert st_.store.is_downward_closed()
    assert is_legal_configuration(st_.store)


@given(seeds)
def test_martingale_bookkeeping(seed):
    st_ = WalkState.begin(store="naive")
    run_path(st_, RngStream(seed), 300)
    assert st_.martingale == st_.z + st_.N_new - st_.F / 5
    assert st_.N == st_.N_new + st_.DF
    assert st_.N_new == len(st_.store)


@given(seeds)
def test_fold_of_symmetric_walk_obeys_half_space_rules(seed):
    """The folded path makes only moves the half-space rules allow."""
    st_ = WalkState.begin(mode="symmetric", store="naive")
    path = fold(run_path(st_, RngStream(seed), 400))
    seen = NaiveSet()
    for p, q in zip(path, path[1:]):
        step = tuple(b - a for a, b in zip(p, q))
        kind = classify(p, seen)
        if kind is StepKind.NEW:
            assert step == DOWN
            seen.add(p)
        elif kind is StepKind.FLOOR:
            assert step != DOWN
        assert q.z >= 0
    assert set(seen) == set(st_.store)


def test_symmetric_mode_guards():
    with pytest.raises(ValueError):
        erw_step(WalkState.begin(mode="symmetric"), RngStream(0))
    with pytest.raises(ValueError):
        symmetric_erw_step(WalkState.begin(), RngStream(0))
    with pytest.raises(ValueError):
        WalkState.begin(Site(0, 0, -1))


# --------------------------------------------------------------- stores

@given(columns_strategy(), st.lists(st.tuples(st.integers(-4, 4), st.integers(-4, 4),
                                              st.integers(-1, 8)), max_size=40))
def test_column_store_matches_naive_set(cols, probes):
    sites = sites_of(cols)
    cs, ns = ColumnStore(sites), NaiveSet(sites)
    assert len(cs) == len(ns)
    assert set(cs) == set(ns)
    for p in probes:
        assert (p in cs) == (p in ns)


@given(columns_strategy(max_cols=30, max_h=3))
def test_column_store_grows(cols):
    cs = ColumnStore(capacity=2)
    for s in sorted(sites_of(cols)):
        cs.add(s)
    assert set(cs) == set(sites_of(cols))
    assert cs.columns() == cols


def test_column_store_descent_merges():
    cs = ColumnStore()
    for z in (4, 3, 2):
        cs.add(Site(0, 0, z))
    assert cs.descent == (0, 0, 2, 4) and not cs.is_downward_closed()
    assert Site(0, 0, 3) in cs and Site(0, 0, 1) not in cs
    cs.add(Site(0, 0, 1))
    assert cs.descent is None and cs.columns() == {(0, 0): 4}


def test_column_store_rejects_holes():
    cs = ColumnStore()
    cs.add(Site(0, 0, 3))
    with pytest.raises(ValueError):
        cs.add(Site(1, 0, 1))
    with pytest.raises(ValueError):
        NaiveSet([ORIGIN])


def test_floor_flags():
    cs = ColumnStore()
    assert cs.mark_floor(2, -1) and not cs.mark_floor(2, -1)
    assert cs.floor_visited(2, -1) and cs.floor_points() == {(2, -1)}
    assert Site(2, -1, 0) not in cs


def test_copy_and_reset():
    cs = ColumnStore([Site(0, 0, 1), Site(0, 0, 2)])
    cp = cs.copy()
    cs.reset()
    assert len(cs) == 0 and len(cp) == 2


# --------------------------------------------------------------- legality

@pytest.mark.parametrize("config,legal,reason,site", [
    ([], True, None, None),
    ([(0, 0, 1), (0, 0, 2), (3, 3, 1)], True, None, None),
    ([(0, 0, 2)], False, "not downward-closed", (0, 0, 2)),
    ([(0, 0, 0)], False, "floor vertex in configuration", (0, 0, 0)),
    ([(0, 0, 1), (1, 0, 1), (1, 0, 3)], False, "not downward-closed", (1, 0, 3)),
])
def test_legality_examples(config, legal, reason, site):
    v = is_legal_configuration(config)
    assert bool(v) is legal and v.reason == reason
    assert (v.site is None and site is None) or tuple(v.site) == site


def test_strict_connectivity():
    cfg = [(0, 0, 1), (5, 5, 1)]
    assert is_legal_configuration(cfg)
    v = is_legal_configuration(cfg, strict=True)
    assert not v and v.reason == "not connected" and tuple(v.site) == (5, 5, 1)
    assert is_legal_configuration([(0, 0, 1), (1, 0, 1)], strict=True)


@given(columns_strategy())
def test_downward_closed_configs_are_legal(cols):
    assert is_legal_configuration(sites_of(cols))
