"""End-to-end construction of the indicator from a cohort.

1. split the cohort into estimation (training) and test sets,
2. select determinants per outcome,
3. fit the undersampled logistic classifier per outcome,
4. calibrate (c, sens, spec) on ten groups and derive (alpha, gamma),
5. score the test set and normalize.

All randomness comes from one seed through :func:`frailty_sc.data.substream`.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .aggregation import (
    AggregationParams,
    IndicatorScores,
    binarize_continuous,
    combine_continuous,
    normalize_minmax,
)
from .boosting import BoostConfig
from .calibration import (
    CalibrationParams,
    OutcomeClassifier,
    UndersamplePlan,
    calibrate_outcome,
    train_classifier,
)
from .data import Cohort, split_indices, substream
from .evaluation import EvaluationReport, evaluate
from .selection import SelectionConfig, SelectionTrace, select_determinants

log = logging.getLogger(__name__)

PARAMS_FORMAT = "frailty-sc-params/1"


@dataclass
class PipelineConfig:
    seed: int = 0
    train_fraction: float = 0.75
    stratify_outcome: str | None = None
    n_groups: int = 10
    grid_size: int = 500
    honest_refit: bool = False
    outcomes: Sequence[str] | None = None
    selection: SelectionConfig = field(default_factory=SelectionConfig)

    @classmethod
    def from_dict(cls, d: Mapping, seed: int | None = None) -> "PipelineConfig":
        p = dict(d.get("pipeline", {}))
        sel = dict(d.get("selection", {}))
        boost = BoostConfig.from_dict(d.get("boost", {}))
        sel_cfg = SelectionConfig(**{**sel, "boost": boost})
        cfg = cls(**{**p, "selection": sel_cfg})
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        return cfg


def split_cohort_indices(cohort: Cohort, cfg: PipelineConfig):
    labels = cohort.outcome(cfg.stratify_outcome) if cfg.stratify_outcome else None
    return split_indices(cohort.n, cfg.train_fraction, substream(cfg.seed, "split"), labels)


# ---------------------------------------------------------------------------
# parameter bundle
# ---------------------------------------------------------------------------

@dataclass
class ParamsBundle:
    classifiers: dict[str, OutcomeClassifier]
    calibration: dict[str, CalibrationParams]
    d: float = 0.0
    normalization: tuple[float, float] | None = None

    @property
    def outcomes(self) -> list[str]:
        return list(self.calibration)

    def aggregation(self) -> AggregationParams:
        return AggregationParams.from_calibration(
            [self.calibration[o] for o in self.outcomes], self.d
        )

    def to_dict(self) -> dict:
        rows = []
        for o in self.outcomes:
            r = self.calibration[o].to_dict()
            r.update(determinants=self.classifiers[o].determinants,
                     model=self.classifiers[o].model.to_dict())
            rows.append(r)
        norm = None
        if self.normalization is not None:
            norm = {"min": self.normalization[0], "max": self.normalization[1]}
        return {"format": PARAMS_FORMAT, "d": self.d, "normalization": norm, "outcomes": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParamsBundle":
        if d.get("format") != PARAMS_FORMAT:
            raise ValueError(f"not a parameter bundle (format {d.get('format')!r})")
        clfs, cals = {}, {}
        for r in d["outcomes"]:
            cals[r["outcome"]] = CalibrationParams.from_dict(r)
            clfs[r["outcome"]] = OutcomeClassifier.from_dict(
                {"outcome": r["outcome"], "determinants": r["determinants"], "model": r["model"]}
            )
        norm = d.get("normalization")
        return cls(clfs, cals, float(d.get("d", 0.0)),
                   None if norm is None else (float(norm["min"]), float(norm["max"])))


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _outcomes(cohort: Cohort, cfg: PipelineConfig) -> list[str]:
    return list(cfg.outcomes) if cfg.outcomes else list(cohort.outcome_names)


def select_all(train: Cohort, cfg: PipelineConfig) -> dict[str, SelectionTrace]:
    return {o: select_determinants(train, o, cfg.selection, cfg.seed)
            for o in _outcomes(train, cfg)}


def train_all(train: Cohort, determinants: Mapping[str, Sequence[str]],
              cfg: PipelineConfig) -> dict[str, OutcomeClassifier]:
    plan = UndersamplePlan(cfg.selection.positive_fraction, cfg.seed)
    return {o: train_classifier(train.view_for(o), o, dets, plan)
            for o, dets in determinants.items()}


def calibrate_all(train: Cohort, classifiers: Mapping[str, OutcomeClassifier],
                  cfg: PipelineConfig) -> dict[str, CalibrationParams]:
    plan = UndersamplePlan(cfg.selection.positive_fraction, cfg.seed)
    return {
        o: calibrate_outcome(train.view_for(o), o, clf, cfg.n_groups, cfg.seed,
                             cfg.grid_size, cfg.honest_refit, plan)
        for o, clf in classifiers.items()
    }


@dataclass
class ScoreTable:
    ids: np.ndarray
    outcomes: list[str]
    probs: np.ndarray  # (n, m)
    scores: IndicatorScores
    binary: np.ndarray  # thresholded super-classifier, +-1

    def votes(self, params: AggregationParams) -> np.ndarray:
        return np.where(self.probs >= params.c, 1, -1)


def score_cohort(cohort: Cohort, bundle: ParamsBundle,
                 reuse_normalization: bool = False) -> ScoreTable:
    """Indicator scores for every subject of ``cohort``."""
    agg = bundle.aggregation()
    probs = np.column_stack([bundle.classifiers[o].predict(cohort) for o in bundle.outcomes])
    raw = combine_continuous(probs, agg)
    if reuse_normalization:
        if bundle.normalization is None:
            raise ValueError("bundle carries no normalization constants")
        scores = normalize_minmax(raw, *bundle.normalization)
    else:
        scores = normalize_minmax(raw)
    binary = binarize_continuous(probs, agg)
    return ScoreTable(cohort.ids, bundle.outcomes, probs, scores, np.asarray(binary))


@dataclass
class PipelineResult:
    config: PipelineConfig
    train_idx: np.ndarray
    test_idx: np.ndarray
    traces: dict[str, SelectionTrace]
    bundle: ParamsBundle
    table: ScoreTable
    report: EvaluationReport


def run_pipeline(cohort: Cohort, cfg: PipelineConfig) -> PipelineResult:
    tr, te = split_cohort_indices(cohort, cfg)
    train, test = cohort.subset(tr), cohort.subset(te)
    traces = select_all(train, cfg)
    classifiers = train_all(train, {o: t.final_determinants for o, t in traces.items()}, cfg)
    calib = calibrate_all(train, classifiers, cfg)
    bundle = ParamsBundle(classifiers, calib)
    table = score_cohort(test, bundle)
    bundle.normalization = (table.scores.min_used, table.scores.max_used)
    report = evaluate(table.scores, table.binary, test)
    for o in bundle.outcomes:
        log.info("%s: c=%.3f sens=%.3f spec=%.3f alpha=%.3f gamma=%.3f test AUC=%.3f",
                 o, calib[o].c, calib[o].sens, calib[o].spec, calib[o].alpha,
                 calib[o].gamma, report.auc.get(o, float("nan")))
    return PipelineResult(cfg, tr, te, traces, bundle, table, report)


def config_dict(cfg: PipelineConfig) -> dict:
    d = asdict(cfg)
    d["outcomes"] = None if cfg.outcomes is None else list(cfg.outcomes)
    return d
