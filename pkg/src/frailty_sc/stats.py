"""Numerical statistics primitives shared by every stage.

Logistic regression by IRLS, exact binomial upper-tail test, 2x2 odds ratios,
Wilson score intervals, rank AUC and Pearson correlation matrices.  Everything
here is a pure function of its inputs.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

DEFAULT_RIDGE = 1e-8
SEPARATION_RIDGE = 1e-4


class DegenerateLabelsError(ValueError):
    """Raised when an operation needs both classes but sees only one."""


class InputError(ValueError):
    pass


class SizeError(ValueError):
    pass


class SeparationWarning(UserWarning):
    pass


def _z(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise InputError(f"confidence level must be in (0, 1), got {level}")
    return NormalDist().inv_cdf(0.5 + level / 2.0)


def _labels01(y) -> np.ndarray:
    y = np.asarray(y)
    if not np.all((y == 1) | (y == -1)):
        raise InputError("labels must be in {-1, +1}")
    return (y == 1).astype(float)


def sigmoid(t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------

@dataclass
class LogisticModel:
    """Fitted logistic model; ``coef[0]`` is the intercept."""

    coef: np.ndarray
    feature_names: list[str]
    converged: bool
    n_iterations: int
    cov: np.ndarray | None = None
    ridge: float = DEFAULT_RIDGE
    separated: bool = False
    loglik_trace: list[float] = field(default_factory=list)

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    def linear_predictor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return self.coef[0] + X @ self.coef[1:]

    def predict(self, X) -> np.ndarray:
        return sigmoid(self.linear_predictor(X))

    @property
    def std_errors(self) -> np.ndarray:
        if self.cov is None:
            return np.full_like(self.coef, np.nan)
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def wald_pvalues(self) -> np.ndarray:
        se = self.std_errors
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(self.coef / se)
        nd = NormalDist()
        return np.array([2.0 * (1.0 - nd.cdf(v)) if np.isfinite(v) else 1.0 for v in z])

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "coef": [float(c) for c in self.coef],
            "std_errors": [float(s) for s in self.std_errors],
            "converged": bool(self.converged),
            "separated": bool(self.separated),
            "n_iterations": int(self.n_iterations),
            "ridge": float(self.ridge),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        se = np.asarray(d.get("std_errors", []), dtype=float)
        cov = np.diag(se**2) if se.size else None
        return cls(
            coef=np.asarray(d["coef"], dtype=float),
            feature_names=list(d["feature_names"]),
            converged=bool(d["converged"]),
            n_iterations=int(d["n_iterations"]),
            cov=cov,
            ridge=float(d.get("ridge", DEFAULT_RIDGE)),
            separated=bool(d.get("separated", False)),
        )


def _with_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def penalized_loglik(beta, Xa, t, ridge, weights=None) -> float:
    """Bernoulli log-likelihood minus ``ridge/2 * ||beta[1:]||^2``; t in {0,1}."""
    eta = Xa @ beta
    # log(1 + e^eta) computed stably
    ll_i = t * eta - np.logaddexp(0.0, eta)
    if weights is not None:
        ll_i = ll_i * weights
    return float(ll_i.sum() - 0.5 * ridge * np.dot(beta[1:], beta[1:]))


def loglik_gradient(beta, Xa, t, ridge, weights=None) -> np.ndarray:
    r = t - sigmoid(Xa @ beta)
    if weights is not None:
        r = r * weights
    g = Xa.T @ r
    g[1:] -= ridge * beta[1:]
    return g


def _irls(Xa, t, ridge, max_iter, tol, weights):
    p = Xa.shape[1]
    beta = np.zeros(p)
    # start the intercept at the marginal log-odds
    w = np.ones_like(t) if weights is None else weights
    pbar = np.clip(np.sum(w * t) / np.sum(w), 1e-6, 1 - 1e-6)
    beta[0] = math.log(pbar / (1 - pbar))
    pen = np.full(p, ridge)
    pen[0] = 0.0
    ll = penalized_loglik(beta, Xa, t, ridge, weights)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = sigmoid(Xa @ beta)
        s = mu * (1 - mu) * w
        grad = loglik_gradient(beta, Xa, t, ridge, weights)
        H = (Xa * s[:, None]).T @ Xa + np.diag(pen)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        # step halving keeps the objective monotone
        lr = 1.0
        for _ in range(40):
            cand = beta + lr * step
            ll_new = penalized_loglik(cand, Xa, t, ridge, weights)
            if ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            lr *= 0.5
        else:
            cand, ll_new = beta, ll
        beta = cand
        ll = max(ll_new, ll)
        trace.append(ll)
        if np.max(np.abs(loglik_gradient(beta, Xa, t, ridge, weights))) < tol:
            converged = True
            break
    return beta, converged, it, trace


def _looks_separated(beta, Xa, t) -> bool:
    # complete separation: every row on the right side of the hyperplane;
    # quasi-separation shows up as a runaway coefficient
    eta = Xa @ beta
    margin = np.where(t == 1, eta, -eta)
    return bool(np.min(margin) > 0.0) or bool(np.max(np.abs(beta[1:]), initial=0.0) > 15.0)


def fit_logistic(
    X,
    y,
    ridge: float = DEFAULT_RIDGE,
    max_iter: int = 100,
    tol: float = 1e-8,
    feature_names=None,
    weights=None,
) -> LogisticModel:
    """Fit a ridge-penalized logistic regression by IRLS.

    ``y`` uses {-1, +1} labels; an intercept column is added internally and is
    never penalized.  If the data look separable the fit is redone with the
    ridge raised to ``SEPARATION_RIDGE`` and ``converged`` is reported False.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise InputError("design matrix contains non-finite values")
    t = _labels01(y)
    if t.size != X.shape[0]:
        raise InputError("X and y have different lengths")
    if t.min() == t.max():
        raise DegenerateLabelsError("logistic fit needs both outcome classes")
    if ridge < 0:
        raise InputError("ridge must be >= 0")
    if feature_names is None:
        feature_names = [f"x{i}" for i in range(X.shape[1])]
    w = None if weights is None else np.asarray(weights, dtype=float)
    Xa = _with_intercept(X)

    beta, converged, it, trace = _irls(Xa, t, ridge, max_iter, tol, w)
    separated = False
    if (not converged and ridge < SEPARATION_RIDGE) or _looks_separated(beta, Xa, t):
        separated = True
        warnings.warn(
            "possible complete separation; refitting with ridge "
            f"{SEPARATION_RIDGE:g}",
            SeparationWarning,
            stacklevel=2,
        )
        ridge = max(ridge, SEPARATION_RIDGE)
        beta, _, it2, trace2 = _irls(Xa, t, ridge, max_iter, tol, w)
        it += it2
        trace = trace2
        converged = False

    mu = sigmoid(Xa @ beta)
    s = mu * (1 - mu) * (1.0 if w is None else w)
    pen = np.full(Xa.shape[1], ridge)
    pen[0] = 0.0
    H = (Xa * s[:, None]).T @ Xa + np.diag(pen)
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(H)
    return LogisticModel(
        coef=beta,
        feature_names=list(feature_names),
        converged=converged,
        n_iterations=it,
        cov=cov,
        ridge=ridge,
        separated=separated,
        loglik_trace=trace,
    )


def gradient_check(X, y, beta=None, ridge: float = 0.0, h: float = 1e-5) -> float:
    """Max relative error between the analytic log-likelihood gradient and
    central finite differences, evaluated at ``beta`` (intercept first)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    t = _labels01(y)
    Xa = _with_intercept(X)
    beta = np.zeros(Xa.shape[1]) if beta is None else np.asarray(beta, dtype=float)
    g = loglik_gradient(beta, Xa, t, ridge)
    num = np.empty_like(g)
    for i in range(beta.size):
        e = np.zeros_like(beta)
        e[i] = h
        num[i] = (
            penalized_loglik(beta + e, Xa, t, ridge) - penalized_loglik(beta - e, Xa, t, ridge)
        ) / (2 * h)
    denom = np.maximum(1.0, np.maximum(np.abs(g), np.abs(num)))
    return float(np.max(np.abs(g - num) / denom))


# ---------------------------------------------------------------------------
# binomial test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinomialTestResult:
    k: int
    n: int
    p0: float
    p_value: float


def _log_binom_weights(n: int, p0: float) -> np.ndarray:
    """log pmf of Bin(n, p0) up to a common additive constant.

    Built by the pmf ratio recurrence anchored at the mode, so the values near
    the bulk are O(1) and no large log-gamma terms ever cancel.
    """
    mode = min(n, int(math.floor((n + 1) * p0)))
    lodds = math.log(p0) - math.log1p(-p0)
    i = np.arange(n, dtype=float)
    # log P(i+1)/P(i)
    step = np.log(n - i) - np.log(i + 1) + lodds
    lw = np.empty(n + 1)
    lw[mode] = 0.0
    if mode < n:
        lw[mode + 1:] = np.cumsum(step[mode:])
    if mode > 0:
        lw[:mode] = -np.cumsum(step[:mode][::-1])[::-1]
    return lw


def binomial_test_exact(k: int, n: int, p0: float) -> BinomialTestResult:
    """One-sided upper-tail exact binomial test, P(X >= k) for X ~ Bin(n, p0)."""
    if not 0.0 < p0 < 1.0:
        raise InputError(f"p0 must lie in (0, 1), got {p0}")
    k, n = int(k), int(n)
    if n < 0 or not 0 <= k <= n:
        raise InputError(f"need 0 <= k <= n, got k={k}, n={n}")
    if k == 0:
        return BinomialTestResult(k, n, p0, 1.0)
    # log suffix sums accumulated from the far tail: non-increasing in k by
    # construction, so the p-value is monotone and never exceeds 1
    ls = np.logaddexp.accumulate(_log_binom_weights(n, p0)[::-1])[::-1]
    return BinomialTestResult(k, n, p0, math.exp(ls[k] - ls[0]))


# ---------------------------------------------------------------------------
# odds ratio, Wilson interval
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OddsRatioResult:
    or_value: float
    ci_low: float
    ci_high: float
    level: float
    corrected: bool = False


def odds_ratio(table, level: float = 0.95) -> OddsRatioResult:
    """Odds ratio of a 2x2 table ``[[a, b], [c, d]]``.

    Rows are exposed / unexposed, columns are cases / non-cases.  A zero cell
    triggers the Haldane-Anscombe +0.5 correction on every cell.  The interval
    is the usual log-normal (Woolf) one.
    """
    t = np.asarray(table, dtype=float)
    if t.shape != (2, 2) or np.any(t < 0):
        raise InputError("odds ratio needs a 2x2 table of nonnegative counts")
    if np.any(t.sum(axis=0) == 0) or np.any(t.sum(axis=1) == 0):
        raise InputError("undefined association: a margin of the 2x2 table is zero")
    corrected = bool(np.any(t == 0))
    if corrected:
        t = t + 0.5
    a, b, c, d = t.ravel()
    orv = float((a * d) / (b * c))
    se = math.sqrt(1 / a + 1 / b + 1 / c + 1 / d)
    z = _z(level)
    lo = math.exp(math.log(orv) - z * se)
    hi = math.exp(math.log(orv) + z * se)
    return OddsRatioResult(orv, lo, hi, level, corrected)


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        raise SizeError("Wilson interval needs n > 0")
    if not 0 <= k <= n:
        raise InputError(f"need 0 <= k <= n, got k={k}, n={n}")
    z = _z(level)
    phat = k / n
    z2n = z * z / n
    centre = (phat + z2n / 2) / (1 + z2n)
    half = z * math.sqrt(phat * (1 - phat) / n + z2n / (4 * n)) / (1 + z2n)
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


# ---------------------------------------------------------------------------
# AUC, correlations
# ---------------------------------------------------------------------------

def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [xs.size]])
    mean_rank = (starts + ends + 1) / 2.0  # mean of start+1 .. end
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC of ``scores`` for labels in {-1, +1}; ties count half."""
    s = np.asarray(scores, dtype=float)
    t = _labels01(labels).astype(bool)
    if s.shape != t.shape:
        raise InputError("scores and labels differ in length")
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUC needs both classes")
    r = average_ranks(s)
    u = r[t].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pearson_corr_matrix(X) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlations between columns of ``X``.

    Returns ``(R, constant)`` where ``constant`` flags zero-variance columns;
    their off-diagonal correlations are reported as 0.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise SizeError("correlation needs a 2-D matrix with at least 2 rows")
    Xc = X - X.mean(axis=0)
    ss = np.sqrt(np.sum(Xc * Xc, axis=0))
    constant = ss <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
    scale = np.where(constant, 1.0, ss)
    Z = Xc / scale
    R = Z.T @ Z
    R[constant, :] = 0.0
    R[:, constant] = 0.0
    R = np.clip((R + R.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return R, constant
