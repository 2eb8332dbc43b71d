import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frailty_sc.boosting import (
    DEFAULT_GRID,
    BoostConfig,
    EmptyModelError,
    effective_q,
    fit_boosting,
    grid_points,
    importance_test,
    tune_hyperparams,
)
from frailty_sc.stats import DegenerateLabelsError, binomial_test_exact, sigmoid


def noise_data(seed, n=1000, p=10):
    r = np.random.default_rng(seed)
    X = (r.random((n, p)) < 0.3).astype(float)
    y = np.where(r.random(n) < 0.2, 1, -1)
    return X, y


def test_root_split_on_perfect_feature():
    r = np.random.default_rng(0)
    X = (r.random((500, 10)) < 0.5).astype(float)
    y = np.where(X[:, 3] == 1, 1, -1)
    cfg = BoostConfig(n_rounds=1, max_depth=1, colsample_bytree=1.0, subsample=1.0)
    m, counts = fit_boosting(X, y, cfg)
    assert counts.tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]
    assert m.trees[0].feature[0] == 3


def test_split_count_conservation():
    X, y = noise_data(1)
    m, counts = fit_boosting(X, y, BoostConfig(n_rounds=40, max_depth=3, seed=2))
    assert counts.sum() == sum(t.n_internal for t in m.trees)


def test_deterministic_under_seed():
    X, y = noise_data(2)
    cfg = BoostConfig(n_rounds=30, seed=5)
    m1, c1 = fit_boosting(X, y, cfg)
    m2, c2 = fit_boosting(X, y, cfg)
    np.testing.assert_array_equal(c1, c2)
    np.testing.assert_array_equal(m1.decision_function(X), m2.decision_function(X))


def test_training_loss_decreases():
    r = np.random.default_rng(3)
    X = r.standard_normal((2000, 5))
    y = np.where(r.random(2000) < sigmoid(X[:, 0] - X[:, 1]), 1, -1)
    cfg = BoostConfig(n_rounds=100, eta=0.05, subsample=1.0, colsample_bytree=1.0)
    m, _ = fit_boosting(X, y, cfg, track_loss=True)
    assert np.all(np.diff(m.train_loss) <= 1e-9)


def test_single_class_rejected():
    with pytest.raises(DegenerateLabelsError):
        fit_boosting(np.ones((10, 2)), np.ones(10), BoostConfig(n_rounds=1))


def test_pure_noise_rarely_selects():
    hits = 0
    for s in range(20):
        X, y = noise_data(100 + s)
        cfg = BoostConfig(n_rounds=200, seed=s)
        _, counts = fit_boosting(X, y, cfg)
        hits += importance_test(counts, effective_q(cfg, X.shape[1])).selected.any()
    assert hits <= 2


@pytest.mark.parametrize("kwargs", [
    {"subsample": 0.0}, {"colsample_bytree": 1.5}, {"max_depth": 0}, {"n_rounds": 0}])
def test_config_invariants(kwargs):
    with pytest.raises(ValueError):
        BoostConfig(**kwargs)


# --- importance test ------------------------------------------------------

def test_concentrated_counts_selected():
    r = importance_test([10, 0, 0, 0, 0], 5)
    assert r.p_value[0] == pytest.approx(0.2**10)
    assert r.selected.tolist() == [True, False, False, False, False]
    assert np.all(r.p_value[1:] == 1.0)


def test_uniform_counts_not_selected():
    assert not importance_test([2, 2, 2, 2, 2], 5).selected.any()


def test_alpha_one_selects_everything():
    assert importance_test([3, 1, 0, 2], 4, alpha_level=1.0).selected.all()


def test_empty_model():
    with pytest.raises(EmptyModelError):
        importance_test([0, 0, 0], 3)


@given(st.lists(st.integers(0, 50), min_size=2, max_size=12), st.integers(2, 12))
def test_report_invariants(counts, q):
    if sum(counts) == 0:
        counts[0] = 1
    r = importance_test(counts, q)
    assert r.split_count.sum() == r.n_total_splits
    np.testing.assert_allclose(r.theta_hat, np.asarray(counts) / sum(counts))
    for c, pv in zip(counts, r.p_value):
        assert pv == binomial_test_exact(c, sum(counts), 1 / q).p_value


@pytest.mark.parametrize("cs,p,mode,q", [(0.6, 51, "colsample", 31), (0.6, 51, "total", 51),
                                          (0.3, 3, "colsample", 2), (1.0, 7, "colsample", 7)])
def test_effective_q(cs, p, mode, q):
    assert effective_q(BoostConfig(colsample_bytree=cs), p, mode) == q


# --- tuning ---------------------------------------------------------------

def test_grid_points_cover_product():
    pts = grid_points(DEFAULT_GRID, BoostConfig())
    assert len(pts) == 3 * 4 * 3 * 3
    assert len(set(pts)) == len(pts)


def test_one_point_grid():
    X, y = noise_data(4, n=300, p=3)
    base = BoostConfig(n_rounds=5)
    best = tune_hyperparams(X, y, {"eta": [0.2]}, k_folds=3, base=base)
    assert best.eta == 0.2


def test_tie_goes_to_smaller_depth():
    r = np.random.default_rng(5)
    x = (r.random(400) < 0.5).astype(float)
    y = np.where(r.random(400) < np.where(x == 1, 0.8, 0.2), 1, -1)
    base = BoostConfig(n_rounds=5, subsample=1.0, colsample_bytree=1.0)
    best = tune_hyperparams(x[:, None], y, {"max_depth": [4, 2]}, k_folds=3, base=base)
    assert best.max_depth == 2


@settings(max_examples=3)
@given(st.integers(0, 100))
def test_tuning_reproducible(seed):
    X, y = noise_data(seed, n=300, p=4)
    grid = {"eta": [0.05, 0.2], "max_depth": [2, 4]}
    base = BoostConfig(n_rounds=5)
    a = tune_hyperparams(X, y, grid, k_folds=3, base=base, seed=seed)
    b = tune_hyperparams(X, y, grid, k_folds=3, base=base, seed=seed)
    assert a == b and a in grid_points(grid, base)
