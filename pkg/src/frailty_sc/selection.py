"""Four-phase determinant selection plus the effect-reversal probe.

Phases, in order, on one outcome's training view:

1. a-priori exclusion (config list),
2. low-prevalence binary determinants,
3. protective determinants (univariate OR significantly below 1),
4. split-count importance test on a boosted model,

followed by a multivariate logistic fit on the undersampled subset, a probe
of every determinant whose sign changed, and the final significance rule.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .boosting import BoostConfig, ImportanceReport, effective_q, fit_boosting, importance_test
from .calibration import UndersamplePlan, undersample
from .data import Cohort, substream
from .stats import InputError, LogisticModel, fit_logistic, odds_ratio, pearson_corr_matrix

log = logging.getLogger(__name__)


class SelectionError(RuntimeError):
    pass


@dataclass
class SelectionConfig:
    apriori_exclude: Sequence[str] = ()
    prevalence_threshold: float = 0.01
    or_level: float = 0.95
    forced_keep: Sequence[str] = ("female",)
    boost: BoostConfig = field(default_factory=BoostConfig)
    q_mode: str = "colsample"
    importance_alpha: float = 0.05
    wald_alpha: float = 0.05
    positive_fraction: float = 0.20
    probe: bool = True


# ---------------------------------------------------------------------------
# individual phases
# ---------------------------------------------------------------------------

def prevalence_filter(cohort: Cohort, names: Sequence[str] | None = None,
                      threshold: float = 0.01) -> tuple[list[str], list[tuple[str, float]]]:
    """Drop binary determinants whose mean is strictly below ``threshold``."""
    names = cohort.determinant_names if names is None else list(names)
    kept, removed = [], []
    for nm in names:
        v = cohort.variable(nm)
        if v.kind != "binary":
            kept.append(nm)
            continue
        prev = float(cohort.column(nm).mean()) if cohort.n else 0.0
        if prev < threshold:
            removed.append((nm, prev))
        else:
            kept.append(nm)
    return kept, removed


def _table(exposed: np.ndarray, case: np.ndarray) -> list[list[int]]:
    return [
        [int(np.sum(exposed & case)), int(np.sum(exposed & ~case))],
        [int(np.sum(~exposed & case)), int(np.sum(~exposed & ~case))],
    ]


def protective_filter(cohort: Cohort, outcome: str, names: Sequence[str] | None = None,
                      level: float = 0.95, forced_keep: Sequence[str] = ()):
    """Remove determinants whose univariate OR has an upper CI bound below 1.

    ``cohort`` must already be the outcome's at-risk population.  Count
    variables are dichotomized at > 0; a categorical is removed only if every
    non-reference level is protective against the reference level.
    Returns ``(kept, removed, or_table)``.
    """
    names = cohort.determinant_names if names is None else list(names)
    case = cohort.outcome(outcome) == 1
    kept, removed, rows = [], [], []
    forced = set(forced_keep)
    for nm in names:
        v = cohort.variable(nm)
        x = cohort.column(nm)
        if v.kind == "categorical":
            comparisons = []
            ref = x == v.reference_index
            for j, lv in enumerate(v.levels):
                if lv == v.reference:
                    continue
                m = (x == j) | ref
                comparisons.append((v.level_column(lv), _table((x == j)[m], case[m])))
        else:
            comparisons = [(nm, _table(x > 0, case))]
        protective_all, results = True, []
        for label, tab in comparisons:
            try:
                r = odds_ratio(tab, level)
            except InputError:
                results.append({"term": label, "table": tab, "or": None, "flag": "cannot assess"})
                protective_all = False
                continue
            results.append({"term": label, "table": tab, "or": r.or_value,
                            "ci_low": r.ci_low, "ci_high": r.ci_high})
            protective_all &= r.ci_high < 1.0
        entry = {"name": nm, "terms": results}
        rows.append(entry)
        if protective_all and nm not in forced:
            removed.append(entry)
        else:
            kept.append(nm)
    return kept, removed, rows


@dataclass
class ProbeResult:
    determinant: str
    reversed: bool
    sequence: list[str]
    initial_coef: float | None = None
    coefs: list[float] = field(default_factory=list)
    inconclusive: bool = False


def variable_correlations(corr: np.ndarray, colnames: Sequence[str],
                          groups: dict[str, list[int]], probe: str) -> dict[str, float]:
    """max |r| between the probe's columns and each other variable's columns."""
    pc = groups[probe]
    return {
        nm: float(np.max(np.abs(corr[np.ix_(pc, cols)])))
        for nm, cols in groups.items() if nm != probe
    }


def reversal_probe(cohort: Cohort, outcome: str, determinant: str, corr_matrix: np.ndarray,
                   candidates: Sequence[str], ridge: float = 1e-8) -> ProbeResult:
    """Add correlated covariates one at a time until the probe's sign flips.

    ``corr_matrix`` is over ``cohort.design(candidates)`` columns and
    ``determinant`` must be one of ``candidates``.  Covariates enter in
    descending |correlation| with the probe; equal correlations keep
    declaration order.  Additions are cumulative.
    """
    candidates = list(candidates)
    if cohort.variable(determinant).kind == "categorical":
        return ProbeResult(determinant, False, [], inconclusive=True)
    groups = cohort.design_groups(candidates)
    _, colnames = cohort.design(candidates)
    rc = variable_correlations(corr_matrix, colnames, groups, determinant)
    # rounding makes float-noise "ties" fall back to declaration order
    order = sorted((nm for nm in candidates if nm != determinant),
                   key=lambda nm: -round(rc[nm], 12))
    y = cohort.outcome(outcome)
    current = [determinant]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            X, _ = cohort.design(current)
            base = fit_logistic(X, y, ridge=ridge).coef[1]
        except (ValueError, np.linalg.LinAlgError):
            return ProbeResult(determinant, False, [], inconclusive=True)
        sign0 = np.sign(base)
        coefs, seq = [], []
        for nm in order:
            current.append(nm)
            seq.append(nm)
            try:
                X, _ = cohort.design(current)
                b = fit_logistic(X, y, ridge=ridge).coef[1]
            except (ValueError, np.linalg.LinAlgError):
                return ProbeResult(determinant, False, seq, float(base), coefs, inconclusive=True)
            coefs.append(float(b))
            if np.sign(b) != sign0:
                return ProbeResult(determinant, True, seq, float(base), coefs)
    return ProbeResult(determinant, False, seq, float(base), coefs)


def finalize_selection(determinants: Sequence[str], fit: LogisticModel,
                       groups: dict[str, list[int]], reversed_: Sequence[str] = (),
                       alpha: float = 0.05) -> tuple[list[str], list[dict]]:
    """Keep determinants whose effect is significant and did not reverse.

    A categorical stays whole if any non-reference level is significant.
    ``groups`` maps variable names to design column indices (intercept
    excluded).  Returns ``(final, dropped)``.
    """
    pv = fit.wald_pvalues()[1:]
    final, dropped = [], []
    rev = set(reversed_)
    for nm in determinants:
        cols = groups[nm]
        pmin = float(np.min(pv[cols]))
        if nm in rev:
            dropped.append({"name": nm, "reason": "reversal", "p_value": pmin})
        elif pmin >= alpha:
            dropped.append({"name": nm, "reason": "not significant", "p_value": pmin})
        else:
            final.append(nm)
    if not final:
        raise SelectionError(
            "no determinant survived the final significance rule; relax wald_alpha or "
            "importance_alpha"
        )
    return final, dropped


# ---------------------------------------------------------------------------
# whole pipeline for one outcome
# ---------------------------------------------------------------------------

@dataclass
class SelectionTrace:
    outcome: str
    candidates: list[str]
    removed_apriori: list[str] = field(default_factory=list)
    removed_low_prevalence: list[tuple[str, float]] = field(default_factory=list)
    removed_protective: list[dict] = field(default_factory=list)
    or_table: list[dict] = field(default_factory=list)
    importance_report: ImportanceReport | None = None
    removed_importance: list[str] = field(default_factory=list)
    multivariate: dict = field(default_factory=dict)
    probes: list[ProbeResult] = field(default_factory=list)
    removed_reversal: list[dict] = field(default_factory=list)
    removed_nonsignificant: list[dict] = field(default_factory=list)
    final_determinants: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "outcome", "candidates", "removed_apriori", "or_table", "removed_protective",
            "removed_importance", "multivariate", "removed_reversal",
            "removed_nonsignificant", "final_determinants")}
        d["removed_low_prevalence"] = [
            {"name": n, "prevalence": p} for n, p in self.removed_low_prevalence
        ]
        d["importance_report"] = self.importance_report.to_dict() if self.importance_report else None
        d["probes"] = [asdict(p) for p in self.probes]
        return d

    def removed_sets(self) -> list[set[str]]:
        return [
            set(self.removed_apriori),
            {n for n, _ in self.removed_low_prevalence},
            {e["name"] for e in self.removed_protective},
            set(self.removed_importance),
            {e["name"] for e in self.removed_reversal},
            {e["name"] for e in self.removed_nonsignificant},
        ]


def select_determinants(cohort: Cohort, outcome: str, config: SelectionConfig,
                        seed: int = 0) -> SelectionTrace:
    """Run every selection phase for ``outcome`` on its training view."""
    if outcome in cohort.exclusions:
        cohort = cohort.view_for(outcome)
    cands = cohort.determinant_names
    trace = SelectionTrace(outcome, list(cands))
    forced = [f for f in config.forced_keep if f in cands]

    apriori = set(config.apriori_exclude) - set(forced)
    trace.removed_apriori = [nm for nm in cands if nm in apriori]
    names = [nm for nm in cands if nm not in apriori]

    names, trace.removed_low_prevalence = prevalence_filter(
        cohort, names, config.prevalence_threshold
    )
    # forced variables survive every phase but the last
    low = {n for n, _ in trace.removed_low_prevalence}
    for f in forced:
        if f in low:
            trace.removed_low_prevalence = [r for r in trace.removed_low_prevalence if r[0] != f]
            names.append(f)
    names = [nm for nm in cands if nm in set(names)]

    names, trace.removed_protective, trace.or_table = protective_filter(
        cohort, outcome, names, config.or_level, forced
    )

    X = np.column_stack([cohort.column(nm) for nm in names])
    bcfg = BoostConfig(**{**asdict(config.boost),
                          "seed": int(substream(seed, f"boost:{outcome}").integers(2**31))})
    _, counts = fit_boosting(X, cohort.outcome(outcome), bcfg, names)
    q = effective_q(bcfg, len(names), config.q_mode)
    report = importance_test(counts, q, config.importance_alpha, names)
    trace.importance_report = report
    chosen = set(report.selected_features()) | set(forced)
    trace.removed_importance = [nm for nm in names if nm not in chosen]
    names = [nm for nm in names if nm in chosen]
    log.info("%s: %d determinants after importance test", outcome, len(names))

    plan = UndersamplePlan(config.positive_fraction, seed)
    sub = cohort.subset(undersample(cohort, outcome, plan))
    y = sub.outcome(outcome)
    Xd, colnames = sub.design(names)
    groups = sub.design_groups(names)
    fit = fit_logistic(Xd, y, feature_names=colnames)
    trace.multivariate = {"model": fit.to_dict(),
                          "p_values": [float(p) for p in fit.wald_pvalues()]}

    reversed_ = []
    if config.probe:
        corr, _ = pearson_corr_matrix(Xd)
        for nm in names:
            if sub.variable(nm).kind == "categorical" or nm in forced:
                continue
            b_multi = fit.coef[1 + groups[nm][0]]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                b_uni = fit_logistic(sub.design([nm])[0], y).coef[1]
            if np.sign(b_multi) == np.sign(b_uni):
                continue
            res = reversal_probe(sub, outcome, nm, corr, names)
            trace.probes.append(res)
            if res.reversed:
                reversed_.append(nm)
                trace.removed_reversal.append({"name": nm, "sequence": res.sequence})

    final, dropped = finalize_selection(names, fit, groups, reversed_, config.wald_alpha)
    trace.removed_nonsignificant = [d for d in dropped if d["reason"] != "reversal"]
    trace.final_determinants = final
    return trace
