"""Gradient-boosted regression trees with squared-error loss.

Each stage fits a greedy CART tree to the current residuals.  Split
candidates are midpoints between consecutive distinct feature values; the
best split maximises the SSE reduction, and gains tied to within a relative
``1e-12`` are resolved towards the lowest feature index, then the lowest
threshold.  No row or feature subsampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FitError, InputError

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class GbConfig:
    n_stages: int = 100
    learning_rate: float = 0.05
    max_depth: int = 5
    min_samples_split: int = 2
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.n_stages < 1:
            raise ConfigError("n_stages must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.min_samples_split < 2 or self.min_samples_leaf < 1:
            raise ConfigError("min_samples_split must be >= 2 and min_samples_leaf >= 1")


@dataclass
class Tree:
    """Array-encoded binary tree; ``feature[i] == -1`` marks a leaf."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add(self, feature=-1, threshold=0.0, value=0.0) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    @property
    def depth(self) -> int:
        def d(i):
            return 0 if self.feature[i] < 0 else 1 + max(d(self.left[i]), d(self.right[i]))
        return d(0)

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=int)
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        active = feat[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            f = feat[node[rows]]
            go_left = x[rows, f] <= thr[node[rows]]
            node[rows] = np.where(go_left, left[node[rows]], right[node[rows]])
            active = feat[node] >= 0
        return np.asarray(self.value)[node]

    def splits(self) -> list[tuple]:
        """Pre-order ``(feature, threshold)`` or ``("leaf", value)`` tuples."""
        out = []

        def walk(i):
            if self.feature[i] < 0:
                out.append(("leaf", self.value[i]))
            else:
                out.append((self.feature[i], self.threshold[i]))
                walk(self.left[i])
                walk(self.right[i])
        walk(0)
        return out

    def to_dict(self) -> dict:
        return {
            "feature": list(self.feature),
            "threshold": [float.hex(float(t)) for t in self.threshold],
            "left": list(self.left),
            "right": list(self.right),
            "value": [float.hex(float(v)) for v in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(list(d["feature"]), [float.fromhex(t) for t in d["threshold"]],
                   list(d["left"]), list(d["right"]), [float.fromhex(v) for v in d["value"]])


@dataclass
class GbEnsemble:
    base_prediction: float
    learning_rate: float
    trees: list[Tree]
    n_features: int
    config: GbConfig = field(default_factory=GbConfig)
    train_predictions: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        c = self.config
        return {
            "format_version": 1,
            "base_prediction": float.hex(float(self.base_prediction)),
            "learning_rate": float.hex(float(self.learning_rate)),
            "n_features": self.n_features,
            "config": {"n_stages": c.n_stages, "learning_rate": c.learning_rate, "max_depth": c.max_depth,
                       "min_samples_split": c.min_samples_split, "min_samples_leaf": c.min_samples_leaf},
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbEnsemble":
        return cls(float.fromhex(d["base_prediction"]), float.fromhex(d["learning_rate"]),
                   [Tree.from_dict(t) for t in d["trees"]], int(d["n_features"]), GbConfig(**d["config"]))


def best_split(x: np.ndarray, r: np.ndarray, min_leaf: int = 1):
    """Best ``(feature, threshold, gain)`` for residuals ``r`` on rows ``x``.

    Returns None when no candidate reduces the SSE.
    """
    n, p = x.shape
    total = r.sum()
    nl = np.arange(1, n)
    per_feature = []
    for f in range(p):
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        csum = np.cumsum(r[order])[:-1]
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        # SSE reduction = S_l^2/n_l + S_r^2/n_r - S^2/n
        gain = csum**2 / nl + (total - csum) ** 2 / (n - nl) - total**2 / n
        per_feature.append((xs, np.where(valid, gain, -np.inf)))
    top = max((float(g.max()) for _, g in per_feature if len(g)), default=-np.inf)
    # gains at rounding level (e.g. constant residuals) do not justify a split
    if not top > TIE_RTOL * max(1.0, float(r @ r)):
        return None
    cutoff = top - TIE_RTOL * max(1.0, abs(top))
    for f, (xs, gain) in enumerate(per_feature):
        hits = np.flatnonzero(gain >= cutoff)
        if len(hits):
            k = int(hits[0])
            thr = float((xs[k] + xs[k + 1]) / 2.0)
            if thr >= xs[k + 1]:  # midpoint of adjacent floats rounds up
                thr = float(xs[k])
            return f, thr, float(gain[k])
    return None


def fit_tree(x: np.ndarray, r: np.ndarray, cfg: GbConfig) -> Tree:
    tree = Tree()

    def grow(rows: np.ndarray, depth: int) -> int:
        node = tree.add(value=float(np.mean(r[rows])))
        if depth >= cfg.max_depth or len(rows) < cfg.min_samples_split:
            return node
        split = best_split(x[rows], r[rows], cfg.min_samples_leaf)
        if split is None:
            return node
        f, thr, _ = split
        go_left = x[rows, f] <= thr
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = grow(rows[go_left], depth + 1)
        tree.right[node] = grow(rows[~go_left], depth + 1)
        return node

    grow(np.arange(len(r)), 0)
    return tree


def fit_gb(features, targets, cfg: GbConfig | None = None) -> GbEnsemble:
    """Fit ``cfg.n_stages`` shrunken trees to squared-error residuals."""
    cfg = cfg or GbConfig()
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    if x.ndim != 2 or len(x) != len(y):
        raise FitError("features must be (n, p) with one target per row")
    if len(y) < 2:
        raise FitError("need at least 2 rows to fit")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitError("non-finite training data")
    base = float(np.mean(y))
    pred = np.full(len(y), base)
    trees = []
    for _ in range(cfg.n_stages):
        tree = fit_tree(x, y - pred, cfg)
        trees.append(tree)
        pred = pred + cfg.learning_rate * tree.predict(x)
    return GbEnsemble(base, cfg.learning_rate, trees, x.shape[1], cfg, pred)


def predict_gb(ens: GbEnsemble, features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != ens.n_features:
        raise InputError(f"expected (n, {ens.n_features}) features, got {x.shape}")
    pred = np.full(len(x), ens.base_prediction)
    for tree in ens.trees:
        pred = pred + ens.learning_rate * tree.predict(x)
    return pred


def save_ensemble(ens: GbEnsemble, path) -> None:
    Path(path).write_text(json.dumps(ens.to_dict(), indent=1, sort_keys=True) + "\n")


def load_ensemble(path) -> GbEnsemble:
    return GbEnsemble.from_dict(json.loads(Path(path).read_text()))
