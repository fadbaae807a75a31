import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from erwlab.experiments import (
    EnsembleConfig, EnsembleResult, InsufficientData, compare_ensembles,
    conditioned_visit_bound_experiment, fit_scaling, geometric_schedule, martingale_check,
    no_plateau, parse_mode, run_ensemble, survival_table, tail_estimator,
)
from erwlab.lattice import ORIGIN, Site
from erwlab.stats import log_floor


def test_parse_mode():
    assert parse_mode("erw") == ("erw", 1.0)
    assert parse_mode("drift:0.25") == ("drift", 0.25)
    for bad in ("drift", "drift:1.5", "lazy"):
        with pytest.raises(ValueError):
            parse_mode(bad)


def test_geometric_schedule():
    assert geometric_schedule(2**10, 2**13) == (1024, 2048, 4096, 8192)
    assert geometric_schedule(10, 1000, 10) == (10, 100, 1000)


def test_config_key_and_roundtrip():
    a = EnsembleConfig((100, 200), 4, 1)
    assert EnsembleConfig.from_dict(a.as_dict()) == a
    assert a.key() != EnsembleConfig((100, 200), 4, 2).key()
    assert EnsembleConfig((10,), 2, targets=(Site(1, 0, 0),)).targets[0] == ORIGIN
    with pytest.raises(ValueError):
        EnsembleConfig((200, 100), 4)


def test_threads_and_chunks_do_not_change_results(tmp_path):
    cfg = EnsembleConfig((50, 500, 5000), 24, 9, targets=(ORIGIN, Site(1, 0, 0)))
    a = run_ensemble(cfg, threads=1)
    b = run_ensemble(cfg, threads=3)
    assert np.array_equal(a.table, b.table)
    assert np.array_equal(a.first_hit, b.first_hit)
    run_ensemble(cfg, 1, tmp_path)
    c = EnsembleResult.load(tmp_path / f"{cfg.key()}.npz")
    assert np.array_equal(c.table, a.table) and c.config == cfg


def test_prefix_checkpoints_are_one_walk():
    long = run_ensemble(EnsembleConfig((100, 1000), 8, 3))
    short = run_ensemble(EnsembleConfig((100,), 8, 3))
    assert np.array_equal(long.table[:, 0], short.table[:, 0])


def test_symmetric_and_half_space_walks_agree_in_law():
    a = run_ensemble(EnsembleConfig((2000,), 400, 1, mode="erw"))
    b = run_ensemble(EnsembleConfig((2000,), 400, 2, mode="symmetric"))
    for row in compare_ensembles(a, b, "V") + compare_ensembles(a, b, "N"):
        assert abs(row["z"]) < 4.5


def test_martingale_small():
    res = run_ensemble(EnsembleConfig((3000,), 300, 5))
    m = martingale_check(res)
    assert m["within_3se"] or abs(m["z_score"]) < 4


def test_fit_scaling_synthetic():
    t = np.array(geometric_schedule(2**10, 2**24), dtype=float)
    L = log_floor(t)
    assert fit_scaling(t, 0.7 * np.sqrt(L) + 0.2).winner == "sqrt_log"
    assert fit_scaling(t, 0.3 * L + 1).winner == "log"
    flat = fit_scaling(t, np.full_like(t, 2.0))
    assert abs(flat.models["sqrt_log"]["coef"][0]) < 1e-9 and abs(flat.models["log"]["coef"][0]) < 1e-9
    with pytest.raises(ValueError):
        fit_scaling(t[:4], L[:4])


def test_no_plateau():
    from erwlab.experiments import ReturnRow
    assert no_plateau([ReturnRow(1, 1.0, 0.9, 1.1, 10), ReturnRow(2, 2.0, 1.9, 2.1, 10)])
    assert not no_plateau([ReturnRow(1, 1.0, 0.9, 1.1, 10), ReturnRow(2, 1.3, 1.2, 1.4, 10)])


@given(st.lists(st.integers(0, 60), min_size=20, max_size=300))
def test_survival_table_is_nonincreasing(vals):
    lam, s, lo, hi, cnt = survival_table(np.array(vals), 2.0, min_count=1)
    assert np.all(np.diff(s) <= 0) and np.all((lo <= s) & (s <= hi))


def test_tail_estimator_recovers_geometric_slope():
    rng = np.random.default_rng(0)
    t = 2**20
    scale = math.sqrt(float(log_floor(t)))
    v = rng.geometric(0.2, 50_000) - 1
    rep = tail_estimator(v, t)
    assert rep.slope_negative
    assert rep.fit_lambda.slope == pytest.approx(scale * math.log(0.8), rel=0.1)
    with pytest.raises(ValueError):
        tail_estimator(v[:100], t)
    with pytest.raises(InsufficientData):
        tail_estimator(np.zeros(20_000, dtype=int), t)


def test_conditioned_origin_sides_coincide():
    rep = conditioned_visit_bound_experiment(ORIGIN, 2000, 60, seed=3)
    assert rep.lhs == rep.rhs and rep.holds


def test_conditioned_needs_hits():
    with pytest.raises(InsufficientData):
        conditioned_visit_bound_experiment(Site(400, 0, 0), 50, 10)
    with pytest.raises(ValueError):
        conditioned_visit_bound_experiment(Site(1, 0, 1), 50, 10)
