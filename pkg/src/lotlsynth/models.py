"""From-scratch classifiers: boosted trees, random forests, an MLP, and signature rules.

Tree learners share one histogram builder. Each feature is quantized into at
most ``max_bins`` bins whose cut points come from the training data; a split
on bin ``s`` is stored as the real threshold ``cuts[s]`` and routes a row
left iff its raw value is ``<= threshold``. Bin 0 always holds zero for
sparse inputs, so split finding only touches stored entries.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .records import BENIGN, MALICIOUS, CommandRecord

SCHEMA_VERSION = 1


class TrainingError(RuntimeError):
    """Training could not produce a usable model."""


def _as_matrix(X) -> sp.csr_matrix | np.ndarray:
    if sp.issparse(X):
        X = X.tocsr()
        X.sort_indices()
        return X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d feature matrix, got shape {X.shape}")
    return X


def _check_labels(y, n_rows: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_rows,):
        raise ValueError(f"expected {n_rows} labels, got shape {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        raise ValueError("training labels contain a single class")
    return y.astype(np.float64)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_loss(y: np.ndarray, logits: np.ndarray) -> float:
    """Mean binary cross-entropy computed from logits (overflow safe)."""
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


# --------------------------------------------------------------------------
# binning
# --------------------------------------------------------------------------

@dataclass
class BinnedMatrix:
    """Row-major non-zero bins: ``cols[indptr[i]:indptr[i+1]]`` for row i."""

    indptr: np.ndarray
    cols: np.ndarray
    bins: np.ndarray
    cuts: list[np.ndarray]
    n_bins: int

    @property
    def n_rows(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_features(self) -> int:
        return len(self.cuts)

    def entries(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Positions-in-``rows``, columns and bins of all stored entries of ``rows``."""
        starts = self.indptr[rows]
        lens = self.indptr[rows + 1] - starts
        total = int(lens.sum())
        if total == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty
        owner = np.repeat(np.arange(len(rows)), lens)
        offs = np.cumsum(lens) - lens
        idx = np.repeat(starts - offs, lens) + np.arange(total)
        return owner, self.cols[idx], self.bins[idx]


def _cut_points(values: np.ndarray, max_bins: int) -> np.ndarray:
    u = np.unique(values)
    if len(u) <= max_bins:
        return u[:-1]
    q = np.quantile(values, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    return np.unique(q[q < u[-1]])


def bin_features(X, max_bins: int = 32) -> BinnedMatrix:
    X = _as_matrix(X)
    n, d = X.shape
    if sp.issparse(X):
        if X.nnz and X.data.min() < 0:
            raise ValueError("sparse features must be non-negative")
        csc = X.tocsc()
        csc.sort_indices()
        cuts, col_bins = [], np.zeros(csc.nnz, dtype=np.int64)
        for j in range(d):
            lo, hi = csc.indptr[j], csc.indptr[j + 1]
            vals = csc.data[lo:hi]
            vals = vals[vals > 0]
            c = np.concatenate([[0.0], _cut_points(vals, max_bins - 1)]) if len(vals) else np.zeros(0)
            cuts.append(c)
            if hi > lo and len(c):
                col_bins[lo:hi] = np.searchsorted(c, csc.data[lo:hi], side="left")
        binned = sp.csc_matrix((col_bins, csc.indices, csc.indptr), shape=(n, d)).tocsr()
    else:
        cuts = [_cut_points(X[:, j], max_bins) for j in range(d)]
        dense_bins = np.zeros((n, d), dtype=np.int64)
        for j in range(d):
            dense_bins[:, j] = np.searchsorted(cuts[j], X[:, j], side="left")
        binned = sp.csr_matrix(dense_bins)
    binned.eliminate_zeros()
    binned.sort_indices()
    n_bins = max([len(c) + 1 for c in cuts] + [1])
    return BinnedMatrix(
        indptr=binned.indptr.astype(np.int64),
        cols=binned.indices.astype(np.int64),
        bins=binned.data.astype(np.int64),
        cuts=cuts,
        n_bins=n_bins,
    )


# --------------------------------------------------------------------------
# trees
# --------------------------------------------------------------------------

@dataclass
class Tree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        active = np.arange(n)
        while True:
            f = self.feature[node[active]]
            active = active[f >= 0]
            if len(active) == 0:
                return node
            cur = node[active]
            f = self.feature[cur]
            if sp.issparse(X):
                vals = np.asarray(X[active, f]).ravel()
            else:
                vals = X[active, f]
            go_left = vals <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
            "gain": [float(g) for g in self.gain],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            gain=np.asarray(d["gain"], dtype=np.float64),
        )


# A split criterion receives per-candidate left stats, right stats and node
# stats (each of shape (2, ...)) and returns the gain; invalid candidates get -inf.
Criterion = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _newton_gain(reg_lambda: float, min_child_weight: float) -> Criterion:
    def gain(left, right, node):
        def score(s):
            return s[0] ** 2 / (s[1] + reg_lambda)
        g = 0.5 * (score(left) + score(right) - score(node))
        ok = (left[1] >= min_child_weight) & (right[1] >= min_child_weight)
        return np.where(ok, g, -np.inf)
    return gain


def _gini_gain(min_samples_leaf: float) -> Criterion:
    # stats are (weighted positives, weight); gain is the weighted impurity decrease
    def impurity(s):
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(s[1] > 0, s[0] / np.where(s[1] > 0, s[1], 1.0), 0.0)
        return s[1] * 2.0 * p * (1.0 - p)

    def gain(left, right, node):
        g = impurity(node) - impurity(left) - impurity(right)
        ok = (left[1] >= min_samples_leaf) & (right[1] >= min_samples_leaf)
        return np.where(ok, g, -np.inf)
    return gain


def _grow_tree(
    binned: BinnedMatrix,
    rows: np.ndarray,
    stats: np.ndarray,
    criterion: Criterion,
    leaf_value: Callable[[np.ndarray], float],
    max_depth: int,
    rng: np.random.Generator | None = None,
    max_features: int | None = None,
    is_pure: Callable[[np.ndarray], bool] | None = None,
) -> Tree:
    """Grow one tree depth-first over ``rows`` using per-row ``stats`` of shape (2, n)."""
    d, B = binned.n_features, binned.n_bins
    feature, threshold, left, right, value, gain = [], [], [], [], [], []

    def new_node() -> int:
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0), (gain, 0.0)):
            lst.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, rows, 0)]
    while stack:
        node, node_rows, depth = stack.pop()
        node_stats = stats[:, node_rows].sum(axis=1)
        value[node] = leaf_value(node_stats)
        if depth >= max_depth or len(node_rows) < 2 or (is_pure is not None and is_pure(node_stats)):
            continue
        owner, cols, bins = binned.entries(node_rows)
        if len(cols) == 0:
            continue
        key = cols * B + bins
        hist = np.stack([np.bincount(key, weights=stats[c, node_rows][owner], minlength=d * B) for c in range(2)])
        hist = hist.reshape(2, d, B)
        hist[:, :, 0] = node_stats[:, None] - hist[:, :, 1:].sum(axis=2)
        left_stats = np.cumsum(hist, axis=2)[:, :, :-1]
        right_stats = node_stats[:, None, None] - left_stats
        gains = criterion(left_stats, right_stats, node_stats[:, None, None])
        # a candidate exists only where the feature has a cut at that bin
        n_cuts = np.fromiter((len(c) for c in binned.cuts), dtype=np.int64, count=d)
        gains[np.arange(B - 1)[None, :] >= n_cuts[:, None]] = -np.inf
        present = np.zeros(d, dtype=bool)
        present[cols] = True
        gains[~present] = -np.inf
        if max_features is not None and rng is not None:
            usable = np.flatnonzero(np.isfinite(gains).any(axis=1))
            if len(usable) > max_features:
                keep = rng.choice(usable, size=max_features, replace=False)
                mask = np.ones(d, dtype=bool)
                mask[keep] = False
                gains[mask] = -np.inf
        flat = int(np.argmax(gains))
        best = gains.flat[flat]
        # zero-gain splits are kept so that XOR-like interactions stay learnable
        if not np.isfinite(best) or best < 0.0:
            continue
        f, s = divmod(flat, B - 1)
        go_right = np.zeros(len(node_rows), dtype=bool)
        sel = (cols == f) & (bins > s)
        go_right[owner[sel]] = True
        feature[node], threshold[node], gain[node] = f, float(binned.cuts[f][s]), float(best)
        l_node, r_node = new_node(), new_node()
        left[node], right[node] = l_node, r_node
        stack.append((r_node, node_rows[go_right], depth + 1))
        stack.append((l_node, node_rows[~go_right], depth + 1))
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        gain=np.asarray(gain, dtype=np.float64),
    )


# --------------------------------------------------------------------------
# gradient boosting
# --------------------------------------------------------------------------

@dataclass
class GbdtParams:
    n_estimators: int = 100
    max_depth: int = 10
    learning_rate: float = 0.3
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    max_bins: int = 32
    colsample_bynode: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_estimators < 0 or self.max_depth < 1:
            raise ValueError("n_estimators must be >= 0 and max_depth >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if not 0.0 < self.colsample_bynode <= 1.0:
            raise ValueError("colsample_bynode must be in (0, 1]")


@dataclass
class GbdtModel:
    trees: list[Tree]
    base_score: float
    learning_rate: float
    n_features: int
    params: GbdtParams = field(default_factory=GbdtParams)
    train_loss: list[float] = field(default_factory=list)

    kind = "gbdt"

    def decision_function(self, X) -> np.ndarray:
        X = _as_matrix(X)
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))


def _safeguarded_leaves(tree: Tree, leaf_of: np.ndarray, y: np.ndarray, logits: np.ndarray, lr: float) -> None:
    """Halve any leaf's Newton step until that leaf's training loss does not rise.

    Leaves partition the rows, so this makes the total loss non-increasing
    per round without changing the usual prediction formula.
    """
    order = np.argsort(leaf_of, kind="stable")
    uniq, starts = np.unique(leaf_of[order], return_index=True)
    for leaf, rows in zip(uniq, np.split(order, starts[1:])):
        yy, zz = y[rows], logits[rows]
        before = np.sum(np.logaddexp(0.0, zz) - yy * zz)
        w = tree.value[leaf]
        for _ in range(60):
            z2 = zz + lr * w
            if np.sum(np.logaddexp(0.0, z2) - yy * z2) <= before:
                break
            w *= 0.5
        else:
            w = 0.0
        tree.value[leaf] = w


def train_gbdt(X, y, params: GbdtParams | None = None) -> GbdtModel:
    """Logistic-loss gradient boosting with damped Newton leaf values."""
    p = params or GbdtParams()
    X = _as_matrix(X)
    y = _check_labels(y, X.shape[0])
    prior = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    base = float(np.log(prior / (1.0 - prior)))
    logits = np.full(len(y), base)
    model = GbdtModel(trees=[], base_score=base, learning_rate=p.learning_rate, n_features=X.shape[1], params=p)
    model.train_loss.append(log_loss(y, logits))
    if p.n_estimators == 0:
        return model
    binned = bin_features(X, p.max_bins)
    crit = _newton_gain(p.reg_lambda, p.min_child_weight)
    rows = np.arange(len(y))
    rng = np.random.default_rng(p.seed)
    d = X.shape[1]
    max_features = None if p.colsample_bynode >= 1.0 else max(1, int(round(p.colsample_bynode * d)))
    for _ in range(p.n_estimators):
        prob = sigmoid(logits)
        stats = np.stack([prob - y, prob * (1.0 - prob)])
        tree = _grow_tree(binned, rows, stats, crit, lambda s: -s[0] / (s[1] + p.reg_lambda), p.max_depth,
                          rng=rng, max_features=max_features)
        leaf_of = tree.apply(X)
        _safeguarded_leaves(tree, leaf_of, y, logits, p.learning_rate)
        logits = logits + p.learning_rate * tree.value[leaf_of]
        model.trees.append(tree)
        model.train_loss.append(log_loss(y, logits))
    return model


# --------------------------------------------------------------------------
# random forest
# --------------------------------------------------------------------------

@dataclass
class ForestParams:
    n_estimators: int = 100
    max_depth: int = 10
    feature_subsample: float | None = None  # None means sqrt(dims)
    bootstrap: bool = True
    max_bins: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ValueError("n_estimators and max_depth must be >= 1")
        if self.feature_subsample is not None and not 0.0 < self.feature_subsample <= 1.0:
            raise ValueError("feature_subsample must be in (0, 1]")


@dataclass
class RandomForestModel:
    trees: list[Tree]
    n_features: int
    params: ForestParams = field(default_factory=ForestParams)

    kind = "random_forest"

    def predict_proba(self, X) -> np.ndarray:
        X = _as_matrix(X)
        return np.mean([t.predict(X) for t in self.trees], axis=0)


def _gini_leaf(s: np.ndarray) -> float:
    return float(s[0] / s[1]) if s[1] > 0 else 0.0


def train_decision_tree(X, y, max_depth: int = 10, max_bins: int = 32, weights: np.ndarray | None = None,
                        max_features: int | None = None, rng: np.random.Generator | None = None,
                        binned: BinnedMatrix | None = None) -> Tree:
    """Gini classification tree whose leaves hold the positive-class fraction."""
    X = _as_matrix(X)
    y = _check_labels(y, X.shape[0])
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    binned = binned or bin_features(X, max_bins)
    rows = np.flatnonzero(w > 0)
    stats = np.stack([w * y, w])
    return _grow_tree(binned, rows, stats, _gini_gain(1.0), _gini_leaf, max_depth, rng=rng,
                      max_features=max_features, is_pure=lambda s: s[0] <= 0 or s[0] >= s[1])


def train_random_forest(X, y, params: ForestParams | None = None) -> RandomForestModel:
    p = params or ForestParams()
    X = _as_matrix(X)
    y = _check_labels(y, X.shape[0])
    n, d = X.shape
    frac = p.feature_subsample
    m = max(1, int(round(np.sqrt(d)))) if frac is None else max(1, int(round(frac * d)))
    max_features = None if m >= d else m
    binned = bin_features(X, p.max_bins)
    rng = np.random.default_rng(p.seed)
    trees = []
    for _ in range(p.n_estimators):
        w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64) if p.bootstrap else np.ones(n)
        trees.append(train_decision_tree(X, y, p.max_depth, weights=w, max_features=max_features, rng=rng, binned=binned))
    return RandomForestModel(trees=trees, n_features=d, params=p)


# --------------------------------------------------------------------------
# multilayer perceptron
# --------------------------------------------------------------------------

@dataclass
class MlpParams:
    hidden: tuple[int, ...] = (64, 32)
    learning_rate: float = 1e-3
    batch_size: int = 512
    epochs: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in self.hidden) or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid MLP parameters")


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    params: MlpParams = field(default_factory=MlpParams)
    train_loss: list[float] = field(default_factory=list)

    kind = "mlp"

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]

    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def logits(self, X) -> np.ndarray:
        X = _as_matrix(X)
        out = np.empty(X.shape[0])
        for lo in range(0, X.shape[0], 4096):
            chunk = X[lo:lo + 4096]
            a = chunk.toarray() if sp.issparse(chunk) else chunk
            out[lo:lo + 4096] = _forward(self.weights, self.biases, a)[-1][:, 0]
        return out

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.logits(X))


def init_mlp(n_inputs: int, hidden: Sequence[int] = (64, 32), seed: int = 0) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """He-initialized weights and zero biases for widths ``[n_inputs, *hidden, 1]``."""
    rng = np.random.default_rng(seed)
    widths = [n_inputs, *hidden, 1]
    weights = [rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)) for a, b in zip(widths, widths[1:])]
    biases = [np.zeros(b) for b in widths[1:]]
    return weights, biases


def _forward(weights, biases, X) -> list[np.ndarray]:
    """Activations per layer; the final entry holds raw logits."""
    acts = [X]
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = acts[-1] @ W + b
        acts.append(z if i == len(weights) - 1 else np.maximum(z, 0.0))
    return acts


def mlp_loss_and_grads(weights, biases, X, y) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean binary cross-entropy and its gradients by backpropagation."""
    X = X.toarray() if sp.issparse(X) else np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    acts = _forward(weights, biases, X)
    z = acts[-1][:, 0]
    loss = log_loss(y, z)
    delta = ((sigmoid(z) - y) / len(y))[:, None]
    gw, gb = [None] * len(weights), [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ weights[i].T) * (acts[i] > 0)
    return loss, gw, gb


def train_mlp(X, y, params: MlpParams | None = None) -> MlpModel:
    """Mini-batch Adam on binary cross-entropy."""
    p = params or MlpParams()
    X = _as_matrix(X)
    y = _check_labels(y, X.shape[0])
    weights, biases = init_mlp(X.shape[1], p.hidden, p.seed)
    model = MlpModel(weights=weights, biases=biases, params=p)
    rng = np.random.default_rng([p.seed, 1])
    b1, b2, eps = 0.9, 0.999, 1e-8
    state = [np.zeros_like(a) for a in (*weights, *biases)]
    m_state, v_state = state, [np.zeros_like(a) for a in state]
    step = 0
    for epoch in range(p.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for lo in range(0, len(y), p.batch_size):
            idx = np.sort(order[lo:lo + p.batch_size])
            loss, gw, gb = mlp_loss_and_grads(weights, biases, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"MLP loss became {loss} at epoch {epoch}, step {step}; "
                                    f"max |weight| {max(np.abs(w).max() for w in weights):.3g}")
            total += loss * len(idx)
            step += 1
            params_ = [*weights, *biases]
            for k, (param, grad) in enumerate(zip(params_, [*gw, *gb])):
                m_state[k] = b1 * m_state[k] + (1 - b1) * grad
                v_state[k] = b2 * v_state[k] + (1 - b2) * grad * grad
                m_hat = m_state[k] / (1 - b1**step)
                v_hat = v_state[k] / (1 - b2**step)
                param -= p.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        model.train_loss.append(total / len(y))
    return model


# --------------------------------------------------------------------------
# scoring and persistence
# --------------------------------------------------------------------------

Model = GbdtModel | RandomForestModel | MlpModel


def predict_scores(model: Model, X) -> np.ndarray:
    """Malicious-class probability per row."""
    X = _as_matrix(X)
    if X.shape[1] != model.n_features:
        raise ValueError(f"feature dims {X.shape[1]} do not match model dims {model.n_features}")
    return np.clip(model.predict_proba(X), 0.0, 1.0)


def model_to_dict(model: Model) -> dict:
    if isinstance(model, GbdtModel):
        params = vars(model.params)
        body = {"base_score": model.base_score, "learning_rate": model.learning_rate,
                "trees": [t.to_dict() for t in model.trees], "train_loss": model.train_loss}
    elif isinstance(model, RandomForestModel):
        params = vars(model.params)
        body = {"trees": [t.to_dict() for t in model.trees]}
    elif isinstance(model, MlpModel):
        params = {**vars(model.params), "hidden": list(model.params.hidden)}
        body = {"weights": [w.tolist() for w in model.weights], "biases": [b.tolist() for b in model.biases],
                "train_loss": model.train_loss}
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    return {"kind": model.kind, "n_features": model.n_features, "params": dict(params), **body}


def model_from_dict(d: dict) -> Model:
    kind = d.get("kind")
    if kind == "gbdt":
        return GbdtModel(trees=[Tree.from_dict(t) for t in d["trees"]], base_score=d["base_score"],
                         learning_rate=d["learning_rate"], n_features=d["n_features"],
                         params=GbdtParams(**d["params"]), train_loss=list(d.get("train_loss", [])))
    if kind == "random_forest":
        return RandomForestModel(trees=[Tree.from_dict(t) for t in d["trees"]], n_features=d["n_features"],
                                 params=ForestParams(**d["params"]))
    if kind == "mlp":
        return MlpModel(weights=[np.asarray(w, dtype=np.float64).reshape(len(w), -1) for w in d["weights"]],
                        biases=[np.asarray(b, dtype=np.float64) for b in d["biases"]],
                        params=MlpParams(**d["params"]), train_loss=list(d.get("train_loss", [])))
    raise ValueError(f"unknown model kind {kind!r}")


TRAINERS = {"gbdt": (train_gbdt, GbdtParams), "random_forest": (train_random_forest, ForestParams),
            "mlp": (train_mlp, MlpParams)}


def train_model(kind: str, X, y, params: dict | None = None) -> Model:
    try:
        trainer, param_cls = TRAINERS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(TRAINERS)}") from None
    return trainer(X, y, param_cls(**(params or {})))


# --------------------------------------------------------------------------
# signature rules
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SignatureRule:
    id: str
    pattern: str
    description: str = ""
    targets: tuple[str, ...] = ()


class SignatureRuleset:
    """Regex detection rules; a command is flagged when any rule matches."""

    def __init__(self, rules: Sequence[SignatureRule]):
        ids = [r.id for r in rules]
        if len(set(ids)) != len(ids):
            raise ValueError("signature rule ids must be unique")
        self.rules = list(rules)
        self._compiled = []
        for r in self.rules:
            try:
                self._compiled.append((r.id, re.compile(r.pattern)))
            except re.error as exc:
                raise ValueError(f"rule {r.id}: pattern does not compile ({exc})") from None

    def __len__(self) -> int:
        return len(self.rules)

    def match(self, cmd: str) -> list[str]:
        return [rid for rid, rx in self._compiled if rx.search(cmd)]

    def scores(self, cmds: Sequence[str]) -> np.ndarray:
        return np.array([1.0 if self.match(c) else 0.0 for c in cmds])

    def targeted_templates(self) -> set[str]:
        return {t for r in self.rules for t in r.targets}


def match_signatures(cmd: str, rules: SignatureRuleset) -> list[str]:
    return rules.match(cmd)


def load_signatures(path: str | Path | None = None) -> SignatureRuleset:
    if path is None:
        text = resources.files("lotlsynth").joinpath("data/signatures.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text)
    return SignatureRuleset([SignatureRule(id=r["id"], pattern=r["pattern"], description=r.get("description", ""),
                                           targets=tuple(r.get("targets", ()))) for r in doc["rules"]])


# --------------------------------------------------------------------------
# adversarial training
# --------------------------------------------------------------------------

def adversarial_augment(records: Sequence[CommandRecord], rho: float, seed: int) -> list[CommandRecord]:
    """Perturbed copies of a ``rho`` fraction of malicious records.

    Each copy is a random benign training command, ``;``, then the original
    malicious command.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    evil = [r for r in records if r.label == MALICIOUS]
    legit = [r for r in records if r.label == BENIGN]
    k = int(round(rho * len(evil)))
    if k == 0:
        return []
    if not legit:
        raise ValueError("adversarial augmentation needs benign training records")
    rng = np.random.default_rng([seed, 0xAD])
    chosen = np.sort(rng.choice(len(evil), size=k, replace=False))
    prefixes = rng.integers(0, len(legit), size=k)
    return [CommandRecord(cmd=f"{legit[j].cmd};{evil[i].cmd}", label=MALICIOUS, origin="adversarial:prepend",
                          split=evil[i].split) for i, j in zip(chosen, prefixes)]


def adversarial_train(trainer: Callable[[Sequence[CommandRecord]], Model], records: Sequence[CommandRecord],
                      rho: float, seed: int) -> Model:
    """Train on ``records`` plus their adversarial copies (``rho=0`` is plain training)."""
    return trainer([*records, *adversarial_augment(records, rho, seed)])


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
