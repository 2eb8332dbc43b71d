"""The super-classifier: likelihood-weighted combination of outcome classifiers.

With per-classifier weights ``log alpha_j`` and offsets ``log gamma_j``:

* binary votes v_j in {-1,+1}:   sign(sum_j v_j log alpha_j + log gamma_j)
* probabilities, thresholded:    votes v_j = sign(f_j - c_j)
* probabilities, continuous:     sum_j (f_j - c_j) log alpha_j + log gamma_j

then min-max normalization to [0, 1].  ``sign(0)`` resolves to +1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibration import CalibrationParams
from .stats import InputError


class DegenerateRangeError(ValueError):
    pass


@dataclass(frozen=True)
class AggregationParams:
    names: tuple[str, ...]
    c: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    d: float = 0.0

    def __post_init__(self):
        for arr in ("c", "alpha", "gamma"):
            object.__setattr__(self, arr, np.asarray(getattr(self, arr), dtype=float))
        m = len(self.names)
        if not (self.c.shape == self.alpha.shape == self.gamma.shape == (m,)):
            raise InputError("one (c, alpha, gamma) triple per classifier")
        if np.any(self.alpha <= 0) or np.any(self.gamma <= 0):
            raise InputError("alpha and gamma must be positive")
        if np.any((self.c <= 0) | (self.c >= 1)):
            raise InputError("cutoffs must lie in (0, 1)")

    @property
    def log_alpha(self) -> np.ndarray:
        return np.log(self.alpha)

    @property
    def log_gamma(self) -> np.ndarray:
        return np.log(self.gamma)

    @classmethod
    def from_calibration(cls, params: Sequence[CalibrationParams], d: float = 0.0):
        return cls(
            tuple(p.outcome for p in params),
            np.array([p.c for p in params]),
            np.array([p.alpha for p in params]),
            np.array([p.gamma for p in params]),
            d,
        )


def _sign_pos(x):
    return np.where(np.asarray(x) >= 0, 1, -1)


def _check_probs(probs) -> np.ndarray:
    f = np.asarray(probs, dtype=float)
    if np.any(~np.isfinite(f)) or np.any((f < 0) | (f > 1)):
        raise InputError("classifier probabilities must lie in [0, 1]")
    return f


def combine_binary(votes, params: AggregationParams):
    """Super-classifier label from +-1 votes (shape ``(m,)`` or ``(n, m)``)."""
    v = np.asarray(votes)
    if not np.all((v == 1) | (v == -1)):
        raise InputError("votes must be -1 or +1")
    s = v @ params.log_alpha + params.log_gamma.sum()
    out = _sign_pos(s)
    return int(out) if np.ndim(out) == 0 else out


def combine_continuous(probs, params: AggregationParams):
    """Raw continuous super-classifier score(s)."""
    f = _check_probs(probs)
    s = (f - params.c) @ params.log_alpha + params.log_gamma.sum()
    return float(s) if np.ndim(s) == 0 else s


def binarize_continuous(probs, params: AggregationParams):
    """Label from thresholded probabilities; f_j == c_j contributes no vote."""
    f = _check_probs(probs)
    s = np.sign(f - params.c) @ params.log_alpha + params.log_gamma.sum()
    out = _sign_pos(s)
    return int(out) if np.ndim(out) == 0 else out


def latent_binary(raw, d: float = 0.0):
    """Dichotomize a raw score at ``d`` (I >= d -> +1)."""
    return np.where(np.asarray(raw) >= d, 1, -1)


@dataclass
class IndicatorScores:
    raw: np.ndarray
    normalized: np.ndarray
    min_used: float
    max_used: float
    n_clamped: int = 0


def normalize_minmax(raw, min_used: float | None = None,
                     max_used: float | None = None) -> IndicatorScores:
    """Min-max rescaling; pass stored constants to reuse them on a new cohort."""
    r = np.asarray(raw, dtype=float)
    if min_used is None or max_used is None:
        if r.size < 2:
            raise DegenerateRangeError("normalization needs at least two scores")
        min_used, max_used = float(r.min()), float(r.max())
    if not max_used > min_used:
        raise DegenerateRangeError("all scores are equal; min-max range is zero")
    z = (r - min_used) / (max_used - min_used)
    clamped = int(np.sum((z < 0) | (z > 1)))
    return IndicatorScores(r, np.clip(z, 0.0, 1.0), float(min_used), float(max_used), clamped)
