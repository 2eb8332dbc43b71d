import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from frailty_sc.stats import (
    DegenerateLabelsError,
    InputError,
    SeparationWarning,
    SizeError,
    auc,
    binomial_test_exact,
    fit_logistic,
    gradient_check,
    loglik_gradient,
    odds_ratio,
    pearson_corr_matrix,
    sigmoid,
    wilson_interval,
)


def exact_upper_tail(k, n, p0):
    """P(X >= k) in exact rational arithmetic on the binary value of p0."""
    a, b = Fraction(p0).numerator, Fraction(p0).denominator
    num = sum(math.comb(n, i) * a**i * (b - a) ** (n - i) for i in range(k, n + 1))
    return float(Fraction(num, b**n))


def pair_auc(s, y):
    pos, neg = s[y == 1], s[y == -1]
    d = pos[:, None] - neg[None, :]
    return (np.sum(d > 0) + 0.5 * np.sum(d == 0)) / d.size


# --- logistic regression --------------------------------------------------

def test_intercept_only_balanced():
    y = np.array([1] * 50 + [-1] * 50)
    m = fit_logistic(np.zeros((100, 0)), y)
    assert abs(m.intercept) < 1e-10
    assert m.converged


def test_recovers_generating_coefficients():
    r = np.random.default_rng(3)
    n = 20000
    X = r.standard_normal((n, 2))
    beta = np.array([-1.0, 0.8, -0.5])
    y = np.where(r.random(n) < sigmoid(beta[0] + X @ beta[1:]), 1, -1)
    m = fit_logistic(X, y)
    assert np.all(np.abs(m.coef - beta) < 3 * m.std_errors)


def test_separation_sets_flag_and_stays_finite():
    X = np.array([[0.0], [1.0]])
    y = np.array([-1, 1])
    with pytest.warns(SeparationWarning):
        m = fit_logistic(X, y, ridge=0.0)
    assert not m.converged
    assert m.separated
    assert np.all(np.isfinite(m.coef))


def test_single_class_rejected():
    with pytest.raises(DegenerateLabelsError):
        fit_logistic(np.ones((5, 1)), np.ones(5))


def test_non_finite_rejected():
    X = np.array([[0.0], [np.nan], [1.0]])
    with pytest.raises(InputError):
        fit_logistic(X, np.array([1, -1, 1]))


def test_loglik_trace_monotone():
    r = np.random.default_rng(8)
    X = r.standard_normal((400, 3))
    y = np.where(r.random(400) < sigmoid(0.3 + X @ [1.0, -2.0, 0.5]), 1, -1)
    m = fit_logistic(X, y)
    assert np.all(np.diff(m.loglik_trace) >= -1e-12)


def test_predict_in_open_unit_interval():
    r = np.random.default_rng(9)
    X = r.standard_normal((200, 2))
    y = np.where(X[:, 0] + r.standard_normal(200) > 0, 1, -1)
    m = fit_logistic(X, y)
    p = m.predict(r.standard_normal((50, 2)) * 5)
    assert np.all((p > 0) & (p < 1))


def test_model_dict_round_trip():
    r = np.random.default_rng(10)
    X = r.standard_normal((300, 2))
    y = np.where(X[:, 0] > 0, 1, -1) * np.where(r.random(300) < 0.8, 1, -1)
    m = fit_logistic(X, y, feature_names=["a", "b"])
    m2 = type(m).from_dict(m.to_dict())
    np.testing.assert_array_equal(m.coef, m2.coef)
    np.testing.assert_allclose(m.std_errors, m2.std_errors)
    assert m2.feature_names == ["a", "b"]


def test_gradient_zero_at_balanced_zero_coefficients():
    X = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    y = np.array([1, -1, -1, 1])
    g = loglik_gradient(np.zeros(2), np.column_stack([np.ones(4), X]),
                        (y == 1).astype(float), 0.0)
    assert abs(g[0]) < 1e-15


def test_gradient_two_point_hand_derived():
    # x = (0, 2), y = (-1, +1), beta = (b0, b1):
    # dl/db0 = (0 - s(b0)) + (1 - s(b0 + 2 b1)); dl/db1 = 2 (1 - s(b0 + 2 b1))
    b0, b1 = 0.3, -0.7
    Xa = np.array([[1.0, 0.0], [1.0, 2.0]])
    g = loglik_gradient(np.array([b0, b1]), Xa, np.array([0.0, 1.0]), 0.0)
    s = lambda t: 1 / (1 + math.exp(-t))
    assert g[0] == pytest.approx(-s(b0) + 1 - s(b0 + 2 * b1), abs=1e-14)
    assert g[1] == pytest.approx(2 * (1 - s(b0 + 2 * b1)), abs=1e-14)


@given(st.integers(0, 10_000))
def test_gradient_check_random(seed):
    r = np.random.default_rng(seed)
    n, p = r.integers(5, 30), r.integers(1, 5)
    X = r.standard_normal((n, p))
    y = np.where(r.random(n) < 0.5, 1, -1)
    beta = r.normal(0, 0.5, p + 1)
    assert gradient_check(X, y, beta, ridge=float(r.uniform(0, 0.1))) < 1e-6


# --- binomial test --------------------------------------------------------

def test_binomial_all_successes_single_term():
    assert binomial_test_exact(10, 10, 0.5).p_value == pytest.approx(2.0**-10, rel=1e-14)


@pytest.mark.parametrize("n", [0, 1, 17, 2000])
def test_binomial_k_zero_is_one(n):
    assert binomial_test_exact(0, n, 0.3).p_value == 1.0


@pytest.mark.parametrize("p0", [0.0, 1.0, -0.1, 1.5])
def test_binomial_bad_p0(p0):
    with pytest.raises(InputError):
        binomial_test_exact(3, 10, p0)


def test_binomial_large_n_oracle():
    got = binomial_test_exact(150, 2000, 1 / 14).p_value
    assert abs(got - exact_upper_tail(150, 2000, 1 / 14)) < 1e-12
    assert got == pytest.approx(sps.binom.sf(149, 2000, 1 / 14), rel=1e-10)


@given(st.integers(1, 300), st.floats(0.01, 0.99), st.data())
def test_binomial_monotone_in_k(n, p0, data):
    k = data.draw(st.integers(0, n - 1))
    a = binomial_test_exact(k, n, p0).p_value
    b = binomial_test_exact(k + 1, n, p0).p_value
    assert 0.0 <= b <= a <= 1.0


# --- odds ratio, Wilson ---------------------------------------------------

def test_or_symmetric_table():
    r = odds_ratio([[10, 10], [10, 10]])
    assert r.or_value == pytest.approx(1.0)
    assert r.ci_low < 1 < r.ci_high


def test_or_hand_arithmetic():
    r = odds_ratio([[20, 80], [10, 90]])
    assert r.or_value == pytest.approx(20 * 90 / (80 * 10))
    assert r.or_value == pytest.approx(2.25)
    assert r.ci_low <= r.or_value <= r.ci_high


def test_or_haldane_correction():
    r = odds_ratio([[0, 50], [10, 40]])
    assert r.corrected
    assert r.or_value == pytest.approx((0.5 * 40.5) / (50.5 * 10.5))
    assert np.isfinite(r.ci_low) and np.isfinite(r.ci_high)


def test_or_zero_margin():
    with pytest.raises(InputError):
        odds_ratio([[0, 0], [10, 40]])


@given(st.lists(st.integers(1, 500), min_size=4, max_size=4))
def test_or_ci_brackets_estimate(cells):
    a, b, c, d = cells
    r = odds_ratio([[a, b], [c, d]])
    assert r.ci_low <= r.or_value <= r.ci_high


def test_wilson_fixture():
    lo, hi = wilson_interval(52, 393, 0.95)
    assert lo == pytest.approx(0.10235, abs=5e-4)
    assert hi == pytest.approx(0.16940, abs=5e-4)


def test_wilson_boundaries():
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(10, 10)[1] == 1.0
    with pytest.raises(SizeError):
        wilson_interval(0, 0)


@given(st.integers(1, 50), st.integers(1, 50))
def test_wilson_width_shrinks(k, extra):
    n = k + extra
    w1 = np.subtract(*wilson_interval(k, n)[::-1])
    w2 = np.subtract(*wilson_interval(4 * k, 4 * n)[::-1])
    assert w2 < w1


# --- AUC, correlations ----------------------------------------------------

def test_auc_pair_example():
    assert auc([0.1, 0.4, 0.35, 0.8], [-1, -1, 1, 1]) == pytest.approx(0.75)


def test_auc_separated_and_tied():
    assert auc([0.1, 0.2, 0.8, 0.9], [-1, -1, 1, 1]) == 1.0
    assert auc([0.5] * 6, [-1, 1] * 3) == 0.5


def test_auc_single_class():
    with pytest.raises(DegenerateLabelsError):
        auc([0.1, 0.2], [1, 1])


@given(st.integers(0, 10_000))
def test_auc_matches_pairs_and_symmetry(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 120))
    s = r.integers(0, 8, n).astype(float)
    y = np.where(r.random(n) < 0.4, 1, -1)
    y[0], y[1] = 1, -1
    a = auc(s, y)
    assert abs(a - pair_auc(s, y)) < 1e-12
    assert abs(a + auc(-s, y) - 1.0) < 1e-12
    assert abs(auc(np.exp(s / 3.0), y) - a) < 1e-12


def test_corr_duplicate_and_constant():
    r = np.random.default_rng(1)
    x = r.standard_normal(100)
    X = np.column_stack([x, x, np.ones(100)])
    R, const = pearson_corr_matrix(X)
    assert R[0, 1] == pytest.approx(1.0)
    assert list(const) == [False, False, True]
    assert R[0, 2] == 0.0 and R[2, 1] == 0.0


def test_corr_independent_columns_small():
    r = np.random.default_rng(2)
    n = 5000
    R, _ = pearson_corr_matrix(r.standard_normal((n, 3)))
    off = R[~np.eye(3, dtype=bool)]
    assert np.all(np.abs(off) < 3 / math.sqrt(n))


def test_sigmoid_extremes_finite():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        v = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert v[0] >= 0 and v[1] == 0.5 and v[2] == 1.0
