"""Multi-outcome frailty indicator built from a likelihood-weighted super-classifier."""

__version__ = "0.1.0"

from .aggregation import (
    AggregationParams,
    IndicatorScores,
    binarize_continuous,
    combine_binary,
    combine_continuous,
    normalize_minmax,
)
from .boosting import BoostConfig, fit_boosting, importance_test
from .calibration import CalibrationParams, alpha_gamma, calibrate_outcome, train_classifier
from .data import Cohort, Schema, Variable, load_cohort, load_schema
from .evaluation import evaluate
from .pipeline import ParamsBundle, PipelineConfig, run_pipeline, score_cohort
from .selection import SelectionConfig, select_determinants
from .stats import auc, binomial_test_exact, fit_logistic, odds_ratio, wilson_interval
from .synth import GeneratorSpec, generate, load_spec
