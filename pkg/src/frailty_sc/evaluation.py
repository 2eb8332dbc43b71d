"""Validation battery for the indicator.

Per-outcome AUC of the normalized score, the binary indicator's F1 and false
negative rate, distribution statistics, score by number of adverse events,
age-standardized group means, and the false-negative subgroup audit with
Wilson intervals.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Cohort
from .stats import auc, wilson_interval


def _at_risk(cohort: Cohort, outcome: str) -> np.ndarray:
    return cohort.eligible(outcome)


def evaluate_auc(scores, cohort: Cohort, outcome: str) -> float:
    """AUC of ``scores`` for ``outcome`` among subjects at risk for it."""
    s = np.asarray(getattr(scores, "normalized", scores), dtype=float)
    m = _at_risk(cohort, outcome)
    return auc(s[m], cohort.outcome(outcome)[m])


@dataclass
class BinaryMetrics:
    tp: int
    tn: int
    fp: int
    fn: int
    f1_standard: float
    f1_sens_spec: float
    fnr: float
    sensitivity: float
    specificity: float
    precision: float

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in self.__dict__.items()}


def _hm(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2 * a * b / (a + b)


def binary_metrics(pred, truth) -> BinaryMetrics:
    pred = np.asarray(pred) == 1
    truth = np.asarray(truth) == 1
    tp = int(np.sum(pred & truth))
    tn = int(np.sum(~pred & ~truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    nan = float("nan")
    if tp + fn == 0:
        warnings.warn("no positives: FNR and sensitivity undefined", stacklevel=2)
    sens = tp / (tp + fn) if tp + fn else nan
    spec = tn / (tn + fp) if tn + fp else nan
    prec = tp / (tp + fp) if tp + fp else nan
    fnr = fn / (fn + tp) if tp + fn else nan
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else nan
    f1ss = _hm(sens, spec) if not (math.isnan(sens) or math.isnan(spec)) else nan
    return BinaryMetrics(tp, tn, fp, fn, f1, f1ss, fnr, sens, spec, prec)


def evaluate_binary(binary, cohort: Cohort,
                    outcomes: Sequence[str] | None = None) -> dict[str, BinaryMetrics]:
    """Confusion-based metrics of the binary indicator against each outcome.

    ``f1_standard`` is precision/recall F1; ``f1_sens_spec`` is the harmonic
    mean of sensitivity and specificity.  Both are reported.
    """
    b = np.asarray(binary)
    outcomes = cohort.outcome_names if outcomes is None else outcomes
    out = {}
    for o in outcomes:
        m = _at_risk(cohort, o)
        out[o] = binary_metrics(b[m], cohort.outcome(o)[m])
    return out


@dataclass
class DistributionStats:
    mean: float
    median: float
    variance: float  # population (divide by n)
    sample_variance: float  # divide by n - 1; nan for a single score
    hist_counts: list[int] = field(default_factory=list)
    hist_edges: list[float] = field(default_factory=list)


def distribution_stats(scores, bins: int = 20) -> DistributionStats:
    s = np.asarray(getattr(scores, "normalized", scores), dtype=float)
    if s.size < 1:
        raise ValueError("distribution statistics need at least one score")
    counts, edges = np.histogram(s, bins=bins, range=(0.0, 1.0))
    return DistributionStats(
        float(np.mean(s)),
        float(np.median(s)),
        float(np.var(s)),
        float(np.var(s, ddof=1)) if s.size > 1 else float("nan"),
        counts.tolist(),
        edges.tolist(),
    )


def by_event_count(scores, cohort: Cohort) -> list[dict]:
    """Score summary grouped by number of positive outcomes (0..m).

    Subjects flagged by any exclusion predicate are left out.
    """
    s = np.asarray(getattr(scores, "normalized", scores), dtype=float)
    keep = np.ones(cohort.n, dtype=bool)
    for flag in set(cohort.exclusions.values()):
        keep &= ~cohort.flags[flag]
    k = np.sum(cohort.outcomes == 1, axis=1)
    rows = []
    for j in range(len(cohort.outcome_names) + 1):
        v = s[keep & (k == j)]
        if v.size == 0:
            rows.append({"events": j, "count": 0, "mean": None, "q1": None,
                         "median": None, "q3": None})
            continue
        q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        rows.append({"events": j, "count": int(v.size), "mean": float(v.mean()),
                     "q1": float(q1), "median": float(med), "q3": float(q3)})
    return rows


def fn_audit(binary, cohort: Cohort, outcome: str, strata: Sequence[str] | None = None,
             level: float = 0.95) -> list[dict]:
    """False-negative subgroup audit, one row per binary stratum.

    For each stratum: TN/FN/FP/TP inside it, its share of all false negatives
    with a Wilson interval, and its population prevalence with a Wilson
    interval.  ``flagged`` marks strata over-represented among false
    negatives (FN-share interval entirely above the prevalence interval).
    ``strata`` are encoded column names (binary determinants or dummy levels).
    """
    m = _at_risk(cohort, outcome)
    sub = cohort.subset(m)
    pred = np.asarray(binary)[m] == 1
    truth = sub.outcome(outcome) == 1
    X, cols = sub.design()
    if strata is None:
        strata = [c for j, c in enumerate(cols) if set(np.unique(X[:, j])) <= {0.0, 1.0}]
    fn_all = ~pred & truth
    n_fn = int(fn_all.sum())
    n = sub.n
    rows = []
    for name in strata:
        if name == "__all__":
            s = np.ones(n, dtype=bool)
        else:
            s = X[:, cols.index(name)] == 1
        tn = int(np.sum(s & ~pred & ~truth))
        fn = int(np.sum(s & fn_all))
        fp = int(np.sum(s & pred & ~truth))
        tp = int(np.sum(s & pred & truth))
        total = int(s.sum())
        if n_fn:
            fn_lo, fn_hi = wilson_interval(fn, n_fn, level)
        else:
            fn_lo = fn_hi = 0.0
        p_lo, p_hi = wilson_interval(total, n, level)
        rows.append({
            "stratum": name, "TN": tn, "FN": fn, "FP": fp, "TP": tp, "total": total,
            "pct_row_fn": 100.0 * fn / total if total else 0.0,
            "pct_col_fn": 100.0 * fn / n_fn if n_fn else 0.0,
            "fn_low": 100.0 * fn_lo, "fn_high": 100.0 * fn_hi,
            "prevalence": 100.0 * total / n, "prev_low": 100.0 * p_lo,
            "prev_high": 100.0 * p_hi,
            "flagged": bool(n_fn and fn_lo > p_hi),
        })
    return rows


def audit_row(fn: int, n_fn: int, total: int, n: int, level: float = 0.95) -> dict:
    """Interval columns of one audit row from raw counts."""
    lo, hi = wilson_interval(fn, n_fn, level)
    plo, phi = wilson_interval(total, n, level)
    return {"fn_low": 100 * lo, "fn_high": 100 * hi, "prevalence": 100 * total / n,
            "prev_low": 100 * plo, "prev_high": 100 * phi, "flagged": lo > phi}


def standardize_by_age(scores, cohort: Cohort, group=None,
                       weights: Mapping[int, float] | Sequence[float] | None = None,
                       ) -> dict:
    """Directly age-standardized mean score per group (default: sex).

    ``weights`` is the reference age-class distribution (default: the whole
    cohort's).  Empty (group, age) cells are skipped and the remaining
    weights renormalized.
    """
    s = np.asarray(getattr(scores, "normalized", scores), dtype=float)
    g = cohort.sex if group is None else np.asarray(group)
    a = cohort.age_class
    n_cls = len(cohort.age_labels)
    if weights is None:
        w = np.bincount(a, minlength=n_cls).astype(float)
    elif isinstance(weights, Mapping):
        w = np.array([float(weights.get(i, 0.0)) for i in range(n_cls)])
    else:
        w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    out = {}
    for gv in np.unique(g):
        num, den = 0.0, 0.0
        for i in range(n_cls):
            cell = (g == gv) & (a == i)
            if w[i] == 0:
                continue
            if not cell.any():
                warnings.warn(f"group {gv}: empty age class {cohort.age_labels[i]}; skipped",
                              stacklevel=2)
                continue
            num += w[i] * s[cell].mean()
            den += w[i]
        out[gv.item() if hasattr(gv, "item") else gv] = num / den if den else float("nan")
    return out


@dataclass
class EvaluationReport:
    auc: dict[str, float]
    binary: dict[str, BinaryMetrics]
    distribution: DistributionStats
    by_event_count: list[dict]
    by_sex: dict
    by_sex_standardized: dict
    fn_audit: dict[str, list[dict]]

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "binary": {k: v.to_dict() for k, v in self.binary.items()},
            "distribution": self.distribution.__dict__,
            "by_event_count": self.by_event_count,
            "by_sex": {str(k): v for k, v in self.by_sex.items()},
            "by_sex_standardized": {str(k): v for k, v in self.by_sex_standardized.items()},
            "fn_audit": self.fn_audit,
        }


def evaluate(scores, binary, cohort: Cohort, bins: int = 20) -> EvaluationReport:
    s = np.asarray(getattr(scores, "normalized", scores), dtype=float)
    aucs = {}
    for o in cohort.outcome_names:
        try:
            aucs[o] = evaluate_auc(s, cohort, o)
        except ValueError:
            aucs[o] = float("nan")
    raw_means = {int(v): float(s[cohort.sex == v].mean()) for v in np.unique(cohort.sex)}
    return EvaluationReport(
        auc=aucs,
        binary=evaluate_binary(binary, cohort),
        distribution=distribution_stats(s, bins),
        by_event_count=by_event_count(s, cohort),
        by_sex=raw_means,
        by_sex_standardized=standardize_by_age(s, cohort),
        fn_audit={o: fn_audit(binary, cohort, o) for o in cohort.outcome_names},
    )
