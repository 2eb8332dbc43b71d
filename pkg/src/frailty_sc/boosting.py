"""Second-order gradient tree boosting used only for split-count importance.

Trees are grown level-wise on logistic loss.  Each tree draws its own row
subsample and column subsample; every internal node picks the (feature,
threshold) with the largest second-order gain among the tree's columns.  The
only output the selection stage consumes is how often each feature was used
as a split, which feeds the exact binomial importance test.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from .stats import DegenerateLabelsError, SizeError, auc, binomial_test_exact, sigmoid

# default tuning grid
DEFAULT_GRID = {
    "eta": [0.05, 0.1, 0.2],
    "max_depth": [2, 4, 6, 8],
    "subsample": [0.6, 0.8, 1.0],
    "colsample_bytree": [0.3, 0.6, 0.9],
}


class EmptyModelError(ValueError):
    pass


@dataclass(frozen=True)
class BoostConfig:
    n_rounds: int = 2000
    eta: float = 0.1
    max_depth: int = 2
    subsample: float = 0.8
    colsample_bytree: float = 0.6
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    min_split_gain: float = 0.0
    max_bins: int = 256
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.subsample <= 1 or not 0 < self.colsample_bytree <= 1:
            raise ValueError("subsample and colsample_bytree must lie in (0, 1]")
        if self.max_depth < 1 or self.n_rounds < 1:
            raise ValueError("max_depth and n_rounds must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "BoostConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown boosting keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray  # go left iff x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # leaf output, already scaled by eta

    @property
    def n_internal(self) -> int:
        return int(np.sum(self.feature >= 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            rows = np.flatnonzero(inner)
            go_left = X[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@dataclass
class BoostedModel:
    config: BoostConfig
    feature_names: list[str]
    base_margin: float
    trees: list[Tree] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.base_margin)
        for t in self.trees:
            out += t.predict(X)
        return out

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def split_counts(self) -> np.ndarray:
        counts = np.zeros(len(self.feature_names), dtype=np.int64)
        for t in self.trees:
            f = t.feature[t.feature >= 0]
            np.add.at(counts, f, 1)
        return counts


class _Binned:
    """Per-feature bins and the sparse one-hot matrix used for histograms."""

    def __init__(self, X: np.ndarray, max_bins: int):
        n, p = X.shape
        self.codes = np.empty((n, p), dtype=np.int32)
        self.upper = []  # right edge value of each bin, per feature
        sizes = []
        for j in range(p):
            col = X[:, j]
            uniq = np.unique(col)
            if uniq.size > max_bins:
                # quantile edges; only reached for high-cardinality columns
                qs = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1])
                edges = np.unique(qs)
                codes = np.searchsorted(edges, col, side="left")
                upper = np.concatenate([edges, [uniq[-1]]])
            else:
                codes = np.searchsorted(uniq, col)
                upper = uniq
            self.codes[:, j] = codes
            self.upper.append(upper)
            sizes.append(upper.size)
        self.sizes = np.asarray(sizes)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
        total = int(self.sizes.sum())
        flat = (self.codes + self.offsets[None, :]).ravel()
        rows = np.repeat(np.arange(n), p)
        self.BT = sparse.csr_matrix(
            (np.ones(flat.size), (flat, rows)), shape=(total, n)
        )
        # candidate split positions: after every bin except each feature's last
        pos, feat = [], []
        for j in range(p):
            for b in range(self.sizes[j] - 1):
                pos.append(self.offsets[j] + b)
                feat.append(j)
        self.pos = np.asarray(pos, dtype=np.int64)
        self.pos_feature = np.asarray(feat, dtype=np.int64)
        self.pos_bin = self.pos - self.offsets[self.pos_feature] if self.pos.size else self.pos
        self.pos_start = self.offsets[self.pos_feature] if self.pos.size else self.pos


def _grow_tree(bn: _Binned, g, h, in_sample, col_mask, cfg: BoostConfig):
    lam = cfg.reg_lambda
    n = g.size
    node_of_row = np.zeros(n, dtype=np.int64)
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    gs = np.where(in_sample, g, 0.0)
    hs = np.where(in_sample, h, 0.0)
    frontier = [0]
    pos_ok = col_mask[bn.pos_feature]
    for _depth in range(cfg.max_depth):
        if not frontier or bn.pos.size == 0:
            break
        K = len(frontier)
        W = np.empty((n, 2 * K))
        for k, node in enumerate(frontier):
            m = node_of_row == node
            W[:, k] = np.where(m, gs, 0.0)
            W[:, K + k] = np.where(m, hs, 0.0)
        hist = np.asarray(bn.BT @ W)
        C = np.vstack([np.zeros((1, 2 * K)), np.cumsum(hist, axis=0)])
        tot = C[bn.offsets[0] + bn.sizes[0]] - C[bn.offsets[0]]
        GL = C[bn.pos + 1, :K] - C[bn.pos_start, :K]
        HL = C[bn.pos + 1, K:] - C[bn.pos_start, K:]
        G, H = tot[:K], tot[K:]
        GR, HR = G - GL, H - HL
        gain = 0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam))
        ok = (HL >= cfg.min_child_weight) & (HR >= cfg.min_child_weight) & pos_ok[:, None]
        gain = np.where(ok, gain, -np.inf)
        new_frontier = []
        for k, node in enumerate(frontier):
            value[node] = -cfg.eta * G[k] / (H[k] + lam)
            best = int(np.argmax(gain[:, k]))
            if not gain[best, k] > max(cfg.min_split_gain, 1e-12):
                continue
            f = int(bn.pos_feature[best])
            b = int(bn.pos_bin[best])
            li, ri = len(feature), len(feature) + 1
            feature[node] = f
            threshold[node] = float(bn.upper[f][b])
            left[node], right[node] = li, ri
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            left += [-1, -1]
            right += [-1, -1]
            value += [0.0, 0.0]
            m = node_of_row == node
            go_left = bn.codes[:, f] <= b
            node_of_row[m & go_left] = li
            node_of_row[m & ~go_left] = ri
            new_frontier += [li, ri]
        frontier = new_frontier
    # leaves created on the last level still need their values
    for node in frontier:
        m = node_of_row == node
        value[node] = -cfg.eta * gs[m].sum() / (hs[m].sum() + lam)
    tree = Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value),
    )
    return tree, tree.value[node_of_row]


def _deviance(margin, t) -> float:
    return float(2.0 * np.sum(np.logaddexp(0.0, margin) - t * margin))


def fit_boosting(X, y, config: BoostConfig, feature_names: Sequence[str] | None = None,
                 track_loss: bool = False) -> tuple[BoostedModel, np.ndarray]:
    """Train boosted trees on ``X`` with labels ``y`` in {-1, +1}.

    Returns the model and the per-feature split counts.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[1] < 1:
        raise SizeError("boosting needs at least one feature")
    t = (y == 1).astype(float)
    if t.min() == t.max():
        raise DegenerateLabelsError("boosting needs both outcome classes")
    n, p = X.shape
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(p)]
    rng = np.random.default_rng(config.seed)
    bn = _Binned(X, config.max_bins)
    prior = t.mean()
    model = BoostedModel(config, names, float(np.log(prior / (1 - prior))))
    margin = np.full(n, model.base_margin)
    n_rows = max(1, int(round(config.subsample * n)))
    n_cols = max(1, int(round(config.colsample_bytree * p)))
    if track_loss:
        model.train_loss.append(_deviance(margin, t))
    for _ in range(config.n_rounds):
        pr = sigmoid(margin)
        g = pr - t
        h = pr * (1 - pr)
        if n_rows < n:
            in_sample = np.zeros(n, dtype=bool)
            in_sample[rng.choice(n, n_rows, replace=False)] = True
        else:
            in_sample = np.ones(n, dtype=bool)
        col_mask = np.zeros(p, dtype=bool)
        col_mask[rng.choice(p, n_cols, replace=False) if n_cols < p else slice(None)] = True
        tree, update = _grow_tree(bn, g, h, in_sample, col_mask, config)
        model.trees.append(tree)
        margin += update
        if track_loss:
            model.train_loss.append(_deviance(margin, t))
    return model, model.split_counts()


# ---------------------------------------------------------------------------
# importance test
# ---------------------------------------------------------------------------

def effective_q(config: BoostConfig, n_features: int, mode: str = "colsample") -> int:
    """Number of candidate variables per node, floored at 2.

    ``"colsample"``: round(colsample_bytree * n_features); ``"total"``:
    n_features.
    """
    if mode == "colsample":
        q = int(round(config.colsample_bytree * n_features))
    elif mode == "total":
        q = n_features
    else:
        raise ValueError(f"unknown q mode {mode!r}")
    return max(2, q)


@dataclass
class ImportanceReport:
    features: list[str]
    split_count: np.ndarray
    n_total_splits: int
    theta0: float
    theta_hat: np.ndarray
    p_value: np.ndarray
    selected: np.ndarray

    def selected_features(self) -> list[str]:
        return [f for f, s in zip(self.features, self.selected) if s]

    def rows(self) -> list[dict]:
        return [
            {
                "feature": f,
                "count": int(c),
                "theta_hat": float(th),
                "p_value": float(pv),
                "selected": bool(s),
            }
            for f, c, th, pv, s in zip(
                self.features, self.split_count, self.theta_hat, self.p_value, self.selected
            )
        ]

    def to_dict(self) -> dict:
        return {"n_total_splits": self.n_total_splits, "theta0": self.theta0,
                "features": self.rows()}


def importance_test(split_counts, q_effective: int, alpha_level: float = 0.05,
                    feature_names: Sequence[str] | None = None) -> ImportanceReport:
    """Exact upper-tail binomial test of each split count against Bin(N, 1/q)."""
    counts = np.asarray(split_counts, dtype=np.int64)
    total = int(counts.sum())
    if total <= 0:
        raise EmptyModelError("boosted model made no splits")
    if q_effective < 2:
        raise ValueError("q_effective must be >= 2")
    theta0 = 1.0 / q_effective
    pv = np.array([binomial_test_exact(int(c), total, theta0).p_value for c in counts])
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(counts.size)]
    return ImportanceReport(
        features=names,
        split_count=counts,
        n_total_splits=total,
        theta0=theta0,
        theta_hat=counts / total,
        p_value=pv,
        # alpha >= 1 accepts every feature, including zero-count ones (p = 1)
        selected=(pv < alpha_level) | (alpha_level >= 1.0),
    )


# ---------------------------------------------------------------------------
# hyper-parameter search
# ---------------------------------------------------------------------------

def grid_points(grid: Mapping[str, Sequence], base: BoostConfig) -> list[BoostConfig]:
    keys = list(grid)
    if not keys or any(len(grid[k]) == 0 for k in keys):
        raise ValueError("grid must be non-empty")
    return [replace(base, **dict(zip(keys, combo)))
            for combo in itertools.product(*(grid[k] for k in keys))]


def tune_hyperparams(X, y, grid: Mapping[str, Sequence], k_folds: int = 5,
                     base: BoostConfig | None = None, seed: int = 0) -> BoostConfig:
    """Grid point with the best mean held-out AUC over ``k_folds`` folds.

    Ties go to the smaller depth, then the smaller eta, then grid order.
    """
    base = base or BoostConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    points = grid_points(grid, base)
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(len(y)), k_folds)
    for f in folds:
        rest = np.setdiff1d(np.arange(len(y)), f)
        if len(np.unique(y[f])) < 2 or len(np.unique(y[rest])) < 2:
            raise SizeError("a cross-validation fold lacks one of the classes")
    scores = []
    for cfg in points:
        vals = []
        for f in folds:
            tr = np.setdiff1d(np.arange(len(y)), f)
            m, _ = fit_boosting(X[tr], y[tr], cfg)
            vals.append(auc(m.decision_function(X[f]), y[f]))
        scores.append(float(np.mean(vals)))
    best = max(
        range(len(points)),
        key=lambda i: (scores[i], -points[i].max_depth, -points[i].eta, -i),
    )
    return points[best]
