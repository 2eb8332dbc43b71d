import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_cohort
from frailty_sc.evaluation import (
    audit_row,
    binary_metrics,
    by_event_count,
    distribution_stats,
    evaluate,
    evaluate_auc,
    fn_audit,
    standardize_by_age,
)
from frailty_sc.stats import sigmoid


def test_auc_planted_and_null():
    r = np.random.default_rng(0)
    n = 20000
    x = r.standard_normal(n)
    p = sigmoid(-1 + 1.5 * x)
    y = np.where(r.random(n) < p, 1, -1)
    c = make_cohort({"x": (x > 0).astype(float)}, {"o": y})
    assert evaluate_auc(p, c, "o") > 0.75
    a = evaluate_auc(r.random(n), c, "o")
    assert 0.45 <= a <= 0.55
    assert evaluate_auc(-p, c, "o") == pytest.approx(1 - evaluate_auc(p, c, "o"), abs=1e-12)


def test_auc_uses_at_risk_population():
    y = np.array([1, -1, 1, -1, 1, -1])
    flag = np.array([0, 0, 0, 0, 1, 1], dtype=bool)
    c = make_cohort({"x": np.zeros(6)}, {"o": y}, flags={"f": flag}, exclusions={"o": "f"})
    s = np.array([0.9, 0.1, 0.8, 0.2, 0.0, 1.0])
    assert evaluate_auc(s, c, "o") == 1.0


def test_metrics_perfect():
    y = np.array([1, 1, -1, -1, -1])
    m = binary_metrics(y, y)
    assert m.f1_standard == 1.0 and m.f1_sens_spec == 1.0 and m.fnr == 0.0


def test_metrics_all_positive_at_ten_percent():
    y = np.array([1] * 10 + [-1] * 90)
    m = binary_metrics(np.ones(100), y)
    assert m.fnr == 0.0
    assert m.f1_standard == pytest.approx(2 * 0.1 / 1.1)


def test_metrics_all_negative():
    y = np.array([1] * 10 + [-1] * 90)
    assert binary_metrics(-np.ones(100), y).fnr == 1.0


def test_metrics_no_positives_sentinel():
    with pytest.warns(UserWarning):
        m = binary_metrics(np.ones(5), -np.ones(5))
    assert np.isnan(m.fnr)
    assert m.to_dict()["fnr"] is None


@given(st.integers(0, 10_000))
def test_confusion_consistency(seed):
    r = np.random.default_rng(seed)
    y = np.where(r.random(50) < 0.3, 1, -1)
    y[0] = 1
    pred = np.where(r.random(50) < 0.5, 1, -1)
    m = binary_metrics(pred, y)
    assert m.tp + m.tn + m.fp + m.fn == 50
    assert m.sensitivity == pytest.approx(1 - m.fnr)


def test_distribution_stats_conventions():
    d = distribution_stats([0.0, 1.0])
    assert (d.mean, d.median, d.variance) == (0.5, 0.5, 0.25)
    assert d.sample_variance == 0.5
    assert distribution_stats([0.3]).variance == 0.0
    assert sum(distribution_stats(np.linspace(0, 1, 101)).hist_counts) == 101


def test_event_groups_monotone_under_planted_signal():
    r = np.random.default_rng(1)
    n = 20000
    z = r.standard_normal(n)
    ys = {f"o{j}": np.where(r.random(n) < sigmoid(-2 + z), 1, -1) for j in range(3)}
    c = make_cohort({"x": np.zeros(n)}, ys)
    rows = by_event_count(sigmoid(z), c)
    means = [row["mean"] for row in rows[:3]]
    assert means[0] <= means[1] <= means[2]
    assert [row["events"] for row in rows] == [0, 1, 2, 3]


def test_event_groups_all_zero():
    c = make_cohort({"x": np.zeros(10)}, {"a": -np.ones(10), "b": -np.ones(10)})
    rows = by_event_count(np.linspace(0, 1, 10), c)
    assert rows[0]["count"] == 10
    assert all(row["count"] == 0 and row["mean"] is None for row in rows[1:])


# --- false-negative audit -------------------------------------------------

def test_audit_row_reference_anemia_counts():
    row = audit_row(52, 393, 3503, 53423)
    assert row["fn_low"] == pytest.approx(10.235, abs=5e-2)
    assert row["fn_high"] == pytest.approx(16.940, abs=5e-2)
    assert row["prevalence"] == pytest.approx(6.557, abs=1e-3)
    assert row["prev_low"] == pytest.approx(6.350, abs=5e-3)
    assert row["prev_high"] == pytest.approx(6.770, abs=5e-3)
    assert row["flagged"]


@pytest.fixture(scope="module")
def anemia_cohort():
    n, n_fn, members, fn_in = 53423, 393, 3503, 52
    anemia = np.zeros(n)
    truth = -np.ones(n, dtype=int)
    pred = -np.ones(n, dtype=int)
    truth[:n_fn] = 1  # the false negatives
    anemia[:fn_in] = 1
    anemia[n_fn:n_fn + members - fn_in] = 1
    truth[n - 500:] = 1  # some true positives outside the stratum
    pred[n - 500:] = 1
    return make_cohort({"anemia": anemia, "never": np.zeros(n)}, {"death": truth}), pred


def test_fn_audit_flags_anemia(anemia_cohort):
    c, pred = anemia_cohort
    rows = {r["stratum"]: r for r in fn_audit(pred, c, "death", ["anemia", "never", "__all__"])}
    a = rows["anemia"]
    assert (a["FN"], a["total"]) == (52, 3503)
    assert a["pct_col_fn"] == pytest.approx(100 * 52 / 393)
    assert a["flagged"]
    assert rows["never"]["fn_low"] == 0.0 and not rows["never"]["flagged"]
    w = rows["__all__"]
    assert w["pct_col_fn"] == 100.0 and w["prevalence"] == 100.0 and not w["flagged"]


def test_fn_audit_no_false_negatives():
    y = np.array([1, 1, -1, -1])
    c = make_cohort({"x": np.array([1.0, 0, 1, 0])}, {"o": y})
    rows = fn_audit(y, c, "o", ["x"])
    assert rows[0]["FN"] == 0 and not rows[0]["flagged"]


@given(st.integers(1, 60), st.integers(100, 400), st.integers(50, 3000))
def test_flags_monotone_in_fn_evidence(k, n_fn, total):
    n = 50000
    k = min(k, n_fn // 2, total // 2)
    if k < 1:
        return
    a = audit_row(k, n_fn, total, n)
    b = audit_row(2 * k, n_fn, total, n)
    assert b["flagged"] or not a["flagged"]


# --- standardization ------------------------------------------------------

def test_standardize_single_age_class_plain_means():
    sex = np.array([0, 0, 1, 1])
    c = make_cohort({"x": np.zeros(4)}, {"o": np.array([1, -1, 1, -1])}, sex=sex)
    s = np.array([0.1, 0.3, 0.6, 0.8])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = standardize_by_age(s, c, weights=[1, 1, 1, 1, 1, 1])
    assert out[0] == pytest.approx(0.2) and out[1] == pytest.approx(0.7)


def test_standardize_removes_age_composition():
    # same within-age means for both sexes, very different age mixes
    age = np.array([0] * 90 + [5] * 10 + [0] * 10 + [5] * 90)
    sex = np.array([0] * 100 + [1] * 100)
    s = np.where(age == 0, 0.1, 0.9).astype(float)
    c = make_cohort({"x": np.zeros(200)}, {"o": np.resize([1, -1], 200)}, age_class=age,
                    sex=sex)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = standardize_by_age(s, c)
    assert out[0] == pytest.approx(out[1])
    assert s[sex == 0].mean() != pytest.approx(s[sex == 1].mean())


def test_standardize_planted_male_excess():
    r = np.random.default_rng(3)
    n = 5000
    age = r.integers(0, 6, n)
    sex = (r.random(n) < 0.5).astype(int)
    s = 0.05 * age + 0.1 * (sex == 0) + 0.02 * r.random(n)
    c = make_cohort({"x": np.zeros(n)}, {"o": np.resize([1, -1], n)}, age_class=age, sex=sex)
    out = standardize_by_age(s, c)
    assert out[0] > out[1]


def test_evaluate_report_serializable():
    import json
    r = np.random.default_rng(4)
    n = 400
    y = np.where(r.random(n) < 0.3, 1, -1)
    c = make_cohort({"x": (r.random(n) < 0.5).astype(float)}, {"o": y},
                    age_class=r.integers(0, 6, n), sex=(r.random(n) < .5).astype(int))
    s = r.random(n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = evaluate(s, np.where(s > 0.5, 1, -1), c)
    json.dumps(rep.to_dict())
    assert set(rep.auc) == {"o"}
