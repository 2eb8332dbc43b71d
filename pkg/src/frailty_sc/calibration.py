"""Per-outcome classifiers and the (c, sens, spec, alpha, gamma) parameters.

Each outcome gets a logistic model fitted on an undersampled training subset.
The model is then scored on ten groups of the full training set: each group
contributes a cutoff, the mean cutoff is applied back to every group, and the
group-mean sensitivity and specificity give the aggregation weights.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Cohort, partition_indices, substream
from .stats import (
    DegenerateLabelsError,
    LogisticModel,
    SizeError,
    auc,
    fit_logistic,
)

log = logging.getLogger(__name__)

CLIP = 1e-6


class CalibrationError(RuntimeError):
    pass


def alpha_gamma(sens: float, spec: float) -> tuple[float, float]:
    """Aggregation weights from a classifier's sensitivity and specificity."""
    alpha = (sens * spec) / ((1.0 - sens) * (1.0 - spec))
    gamma = (sens * (1.0 - sens)) / (spec * (1.0 - spec))
    return alpha, gamma


@dataclass(frozen=True)
class UndersamplePlan:
    positive_fraction: float = 0.20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.positive_fraction < 1.0:
            raise ValueError("positive_fraction must lie in (0, 1)")


def undersample_labels(y, plan: UndersamplePlan, rng: np.random.Generator | None = None,
                       ) -> np.ndarray:
    """Index subset keeping every positive and enough negatives for the mix."""
    y = np.asarray(y)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y != 1)
    if pos.size == 0:
        raise DegenerateLabelsError("undersampling needs at least one positive")
    f = plan.positive_fraction
    need = int(np.floor(pos.size * (1 - f) / f + 0.5))
    if need > neg.size:
        raise SizeError(
            f"undersampling needs {need} negatives but only {neg.size} are available "
            f"(short by {need - neg.size})"
        )
    rng = rng if rng is not None else np.random.default_rng(plan.seed)
    chosen = rng.choice(neg, size=need, replace=False)
    return np.sort(np.concatenate([pos, chosen]))


def undersample(cohort: Cohort, outcome: str, plan: UndersamplePlan) -> np.ndarray:
    return undersample_labels(
        cohort.outcome(outcome), plan, substream(plan.seed, f"undersample:{outcome}")
    )


@dataclass
class OutcomeClassifier:
    """Logistic classification rule for one outcome."""

    outcome: str
    determinants: list[str]
    model: LogisticModel

    def predict(self, cohort: Cohort) -> np.ndarray:
        X, cols = cohort.design(self.determinants)
        if cols != self.model.feature_names:
            raise ValueError(f"{self.outcome}: design columns do not match the fitted model")
        return self.model.predict(X)

    def to_dict(self) -> dict:
        return {"outcome": self.outcome, "determinants": list(self.determinants),
                "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "OutcomeClassifier":
        return cls(d["outcome"], list(d["determinants"]), LogisticModel.from_dict(d["model"]))


def train_classifier(cohort: Cohort, outcome: str, determinants: Sequence[str],
                     plan: UndersamplePlan, ridge: float = 1e-8) -> OutcomeClassifier:
    idx = undersample(cohort, outcome, plan)
    sub = cohort.subset(idx)
    X, cols = sub.design(determinants)
    model = fit_logistic(X, sub.outcome(outcome), ridge=ridge, feature_names=cols)
    return OutcomeClassifier(outcome, list(determinants), model)


# ---------------------------------------------------------------------------
# cutoff and parameters
# ---------------------------------------------------------------------------

def cutoff_grid(grid_size: int = 500) -> np.ndarray:
    """``grid_size`` interior points t/(grid_size+1); 0 and 1 are excluded."""
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    return np.arange(1, grid_size + 1) / (grid_size + 1)


def sens_spec_at(probs, labels, cutoffs) -> tuple[np.ndarray, np.ndarray]:
    """Sensitivity/specificity of the rule ``prob >= cutoff`` for each cutoff."""
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels)
    pos = np.sort(p[y == 1])
    neg = np.sort(p[y != 1])
    if pos.size == 0 or neg.size == 0:
        raise DegenerateLabelsError("sensitivity/specificity need both classes")
    g = np.atleast_1d(np.asarray(cutoffs, dtype=float))
    sens = (pos.size - np.searchsorted(pos, g, side="left")) / pos.size
    spec = np.searchsorted(neg, g, side="left") / neg.size
    return sens, spec


def select_cutoff(probs, labels, grid_size: int = 500) -> float:
    """Grid point maximizing sens + spec; the smallest such point on ties."""
    grid = cutoff_grid(grid_size)
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels)
    pos = np.sort(p[y == 1])
    neg = np.sort(p[y != 1])
    if pos.size == 0 or neg.size == 0:
        raise DegenerateLabelsError("sensitivity/specificity need both classes")
    # integer form of sens + spec, so equal sums tie exactly
    tp = pos.size - np.searchsorted(pos, grid, side="left")
    tn = np.searchsorted(neg, grid, side="left")
    score = tp.astype(np.int64) * neg.size + tn.astype(np.int64) * pos.size
    return float(grid[int(np.argmax(score))])


@dataclass
class CalibrationParams:
    outcome: str
    c: float
    sens: float
    spec: float
    auc_cv: float
    alpha: float
    gamma: float
    group_cutoffs: list[float] = field(default_factory=list)
    group_sens: list[float] = field(default_factory=list)
    group_spec: list[float] = field(default_factory=list)
    group_auc: list[float] = field(default_factory=list)
    skipped_groups: list[int] = field(default_factory=list)

    @classmethod
    def from_sens_spec(cls, outcome: str, c: float, sens: float, spec: float,
                       auc_cv: float = float("nan"), **extra) -> "CalibrationParams":
        sens_c = float(np.clip(sens, CLIP, 1 - CLIP))
        spec_c = float(np.clip(spec, CLIP, 1 - CLIP))
        if (sens_c, spec_c) != (sens, spec):
            warnings.warn(f"{outcome}: sens/spec clipped away from 0/1", stacklevel=2)
        a, g = alpha_gamma(sens_c, spec_c)
        return cls(outcome, float(c), sens_c, spec_c, float(auc_cv), a, g, **extra)

    def table_row(self) -> dict:
        return {"outcome": self.outcome, "c": self.c, "sens": self.sens, "spec": self.spec,
                "auc": self.auc_cv, "alpha": self.alpha, "gamma": self.gamma}

    def to_dict(self) -> dict:
        d = self.table_row()
        d.update(group_cutoffs=self.group_cutoffs, group_sens=self.group_sens,
                 group_spec=self.group_spec, group_auc=self.group_auc,
                 skipped_groups=self.skipped_groups)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationParams":
        return cls(
            outcome=d["outcome"], c=float(d["c"]), sens=float(d["sens"]),
            spec=float(d["spec"]), auc_cv=float(d["auc"]), alpha=float(d["alpha"]),
            gamma=float(d["gamma"]),
            group_cutoffs=list(d.get("group_cutoffs", [])),
            group_sens=list(d.get("group_sens", [])),
            group_spec=list(d.get("group_spec", [])),
            group_auc=list(d.get("group_auc", [])),
            skipped_groups=list(d.get("skipped_groups", [])),
        )


def calibrate_outcome(cohort: Cohort, outcome: str, classifier: OutcomeClassifier,
                      k: int = 10, seed: int = 0, grid_size: int = 500,
                      honest_refit: bool = False,
                      plan: UndersamplePlan | None = None) -> CalibrationParams:
    """Ten-group cutoff/sensitivity/specificity estimation on ``cohort``.

    ``cohort`` is the outcome's training view (the whole estimation set, not
    the undersampled subset).  By default every group is scored with the
    model fitted on the whole estimation set; ``honest_refit`` refits it on
    the other groups instead.
    """
    y = cohort.outcome(outcome)
    groups = partition_indices(cohort.n, k, substream(seed, f"calibration:{outcome}"))
    if honest_refit:
        plan = plan or UndersamplePlan(seed=seed)
        probs = np.empty(cohort.n)
        for gi, g in enumerate(groups):
            rest = np.setdiff1d(np.arange(cohort.n), g)
            sub = cohort.subset(rest)
            fold_plan = UndersamplePlan(plan.positive_fraction, plan.seed + 7919 * (gi + 1))
            clf = train_classifier(sub, outcome, classifier.determinants, fold_plan,
                                   ridge=classifier.model.ridge)
            probs[g] = clf.predict(cohort.subset(g))
    else:
        probs = classifier.predict(cohort)

    usable, skipped = [], []
    for gi, g in enumerate(groups):
        if np.all(y[g] == 1) or np.all(y[g] != 1):
            skipped.append(gi)
        else:
            usable.append(g)
    if skipped:
        warnings.warn(f"{outcome}: {len(skipped)} calibration group(s) lack a class; skipped",
                      stacklevel=2)
    if len(skipped) > k / 2:
        raise CalibrationError(
            f"{outcome}: {len(skipped)} of {k} calibration groups lack positives or negatives"
        )

    cuts = [select_cutoff(probs[g], y[g], grid_size) for g in usable]
    c = float(np.mean(cuts))
    sens_g, spec_g, auc_g = [], [], []
    for g in usable:
        s, p = sens_spec_at(probs[g], y[g], [c])
        sens_g.append(float(s[0]))
        spec_g.append(float(p[0]))
        auc_g.append(auc(probs[g], y[g]))
    log.debug("%s: c=%.4f sens=%.4f spec=%.4f", outcome, c, np.mean(sens_g), np.mean(spec_g))
    return CalibrationParams.from_sens_spec(
        outcome, c, float(np.mean(sens_g)), float(np.mean(spec_g)), float(np.mean(auc_g)),
        group_cutoffs=cuts, group_sens=sens_g, group_spec=spec_g, group_auc=auc_g,
        skipped_groups=skipped,
    )
