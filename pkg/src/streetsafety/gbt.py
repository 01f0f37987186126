"""Second-order gradient boosted trees with exact greedy splits.

Two objectives: multiclass softmax cross-entropy (one tree per class per
round) and squared error. Trees are grown depth-wise on presorted columns;
among equal-gain candidates the lowest feature index, then the lowest
threshold, wins, so fits are bit-reproducible.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from functools import cached_property

import numpy as np
from numba import njit

SCHEMA_VERSION = 1
HESS_FLOOR = 1e-16


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    l2_lambda: float = 1.0
    min_child_weight: float = 1.0
    seed: int = 0  # no row/column subsampling yet; kept for config echo

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.l2_lambda < 0 or self.min_child_weight < 0:
            raise ValueError("l2_lambda and min_child_weight must be non-negative")


@dataclass
class Tree:
    """Array-backed binary tree; node 0 is the root, ``feature == -1`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def depth(self) -> int:
        def rec(i):
            return 0 if self.feature[i] < 0 else 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return _predict_tree(self.feature, self.threshold, self.left, self.right, self.value, X)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "cover")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        ints = ("feature", "left", "right")
        return cls(**{k: np.asarray(d[k], dtype=np.int64 if k in ints else np.float64)
                      for k in ("feature", "threshold", "left", "right", "value", "cover")})

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0) -> "Tree":
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                   np.array([float(value)]), np.array([float(cover)]))


@dataclass
class TreeEnsemble:
    objective: str                   # "multiclass_softprob" or "squared_error"
    n_classes: int                   # K; 1 for regression
    n_features: int
    base_score: np.ndarray           # length K
    trees: list = field(default_factory=list)   # trees[round][class]
    config: TrainConfig = field(default_factory=TrainConfig)
    classes: list | None = None      # original labels for class index k

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    @cached_property
    def _flat(self):
        feats, thr, left, right, val, roots, cls = [], [], [], [], [], [], []
        offset = 0
        for rnd in self.trees:
            for k, t in enumerate(rnd):
                feats.append(t.feature)
                thr.append(t.threshold)
                left.append(np.where(t.left >= 0, t.left + offset, -1))
                right.append(np.where(t.right >= 0, t.right + offset, -1))
                val.append(t.value)
                roots.append(offset)
                cls.append(k)
                offset += t.n_nodes
        if not roots:
            e_i, e_f = np.zeros(0, np.int64), np.zeros(0)
            return e_i, e_f, e_i, e_i, e_f, e_i, e_i
        return (np.concatenate(feats).astype(np.int64), np.concatenate(thr).astype(np.float64),
                np.concatenate(left).astype(np.int64), np.concatenate(right).astype(np.int64),
                np.concatenate(val).astype(np.float64), np.asarray(roots, np.int64),
                np.asarray(cls, np.int64))

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} columns, got {X.shape[1]}")
        return X

    def predict_logits(self, X) -> np.ndarray:
        """Raw scores, shape (n, K): base score plus the sum of each class's trees."""
        X = self._check(X)
        return _predict_flat(*self._flat, self.base_score.astype(np.float64), X)

    def predict_proba(self, X) -> np.ndarray:
        if self.objective != "multiclass_softprob":
            raise ValueError("predict_proba needs a multiclass model")
        return softmax(self.predict_logits(X))

    def predict(self, X) -> np.ndarray:
        z = self.predict_logits(X)
        if self.objective == "squared_error":
            return z[:, 0]
        idx = z.argmax(axis=1)
        return np.asarray(self.classes, dtype=object)[idx] if self.classes is not None else idx

    # --- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "objective": self.objective,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "base_score": self.base_score.tolist(),
            "classes": self.classes,
            "config": asdict(self.config),
            "trees": [[t.to_dict() for t in rnd] for rnd in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema version {d.get('schema_version')}")
        return cls(
            objective=d["objective"], n_classes=d["n_classes"], n_features=d["n_features"],
            base_score=np.asarray(d["base_score"], dtype=np.float64),
            trees=[[Tree.from_dict(t) for t in rnd] for rnd in d["trees"]],
            config=TrainConfig(**d["config"]), classes=d.get("classes"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TreeEnsemble":
        return cls.from_dict(json.loads(text))


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


softmax_probabilities = softmax


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _predict_tree(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def _predict_flat(feature, threshold, left, right, value, roots, tree_class, base, X):
    n = X.shape[0]
    K = base.shape[0]
    out = np.empty((n, K))
    for i in range(n):
        for k in range(K):
            out[i, k] = base[k]
        for t in range(roots.shape[0]):
            node = roots[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i, tree_class[t]] += value[node]
    return out


@njit(cache=True)
def _grow_tree(X, order, g, h, max_depth, lam, min_child_weight, eta, min_gain):
    """Depth-wise exact greedy growth.

    ``order[f]`` lists row indices sorted by column ``f``. Returns the node
    arrays, node count and each row's leaf value.
    """
    n, F = X.shape
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap)
    start = np.zeros(cap, np.int64)
    stop = np.zeros(cap, np.int64)
    depth = np.zeros(cap, np.int64)

    sorted_rows = order.copy()
    vals = np.empty((F, n))
    for f in range(F):
        for i in range(n):
            vals[f, i] = X[sorted_rows[f, i], f]
    vscratch = np.empty(n)
    goes_left = np.zeros(n, np.bool_)
    scratch = np.empty(n, np.int64)
    row_value = np.zeros(n)

    start[0], stop[0] = 0, n
    n_nodes = 1
    head = 0
    while head < n_nodes:
        node = head
        head += 1
        s, e = start[node], stop[node]
        G = 0.0
        H = 0.0
        for i in range(s, e):
            r = sorted_rows[0, i]
            G += g[r]
            H += h[r]
        cover[node] = H
        value[node] = -G / (H + lam) * eta

        best_gain = min_gain
        best_f = -1
        best_pos = -1
        best_thr = 0.0
        if depth[node] < max_depth and e - s >= 2:
            parent_score = G * G / (H + lam)
            for f in range(F):
                GL = 0.0
                HL = 0.0
                for i in range(s, e - 1):
                    r = sorted_rows[f, i]
                    GL += g[r]
                    HL += h[r]
                    a = vals[f, i]
                    b = vals[f, i + 1]
                    if a == b:
                        continue
                    HR = H - HL
                    if HL < min_child_weight or HR < min_child_weight:
                        continue
                    GR = G - GL
                    gain = GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent_score
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_pos = i
                        thr = a + (b - a) / 2.0
                        if not (thr >= a and thr < b):
                            thr = a
                        best_thr = thr
        if best_f < 0:
            for i in range(s, e):
                row_value[sorted_rows[0, i]] = value[node]
            continue

        feature[node] = best_f
        threshold[node] = best_thr
        for i in range(s, e):
            r = sorted_rows[best_f, i]
            goes_left[r] = i <= best_pos
        n_left = best_pos - s + 1
        for f in range(F):
            li = s
            ri = s + n_left
            for i in range(s, e):
                r = sorted_rows[f, i]
                if goes_left[r]:
                    scratch[li] = r
                    vscratch[li] = vals[f, i]
                    li += 1
                else:
                    scratch[ri] = r
                    vscratch[ri] = vals[f, i]
                    ri += 1
            for i in range(s, e):
                sorted_rows[f, i] = scratch[i]
                vals[f, i] = vscratch[i]
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node], right[node] = lc, rc
        start[lc], stop[lc] = s, s + n_left
        start[rc], stop[rc] = s + n_left, e
        depth[lc] = depth[node] + 1
        depth[rc] = depth[node] + 1

    # parent cover as the exact sum of its children
    for node in range(n_nodes - 1, -1, -1):
        if feature[node] >= 0:
            cover[node] = cover[left[node]] + cover[right[node]]
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes], cover[:n_nodes], row_value


def _presort(X: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def grow_tree(X, g, h, cfg: TrainConfig, order=None, min_gain: float = 0.0):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if order is None:
        order = _presort(X)
    f, t, l, r, v, c, rows = _grow_tree(
        X, order, np.asarray(g, np.float64), np.asarray(h, np.float64),
        cfg.max_depth, float(cfg.l2_lambda), float(cfg.min_child_weight), float(cfg.learning_rate), min_gain,
    )
    return Tree(f.copy(), t.copy(), l.copy(), r.copy(), v.copy(), c.copy()), rows


# ---------------------------------------------------------------------------
# training


def _as_matrix(X) -> np.ndarray:
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.ndim != 2:
        raise FitError("feature matrix must be 2-D")
    if X.shape[1] == 0:
        raise FitError("feature matrix has no columns")
    if not np.isfinite(X).all():
        raise FitError("feature matrix contains missing or non-finite values; impute first")
    return X


def cross_entropy(logits: np.ndarray, y_idx: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y_idx)), y_idx].mean())


def fit_multiclass(X, y, cfg: TrainConfig | None = None, classes=None, history: list | None = None) -> TreeEnsemble:
    """Boost a K-class softmax model.

    ``y`` holds arbitrary labels; ``classes`` fixes their order (default:
    sorted unique labels). If ``history`` is a list, the training
    cross-entropy after every round is appended to it (index 0 = base).
    """
    cfg = cfg or TrainConfig()
    X = _as_matrix(X)
    y = np.asarray(y)
    if classes is None:
        classes = sorted(set(y.tolist()))
    classes = list(classes)
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        y_idx = np.array([lookup[v] for v in y.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise FitError(f"label {exc.args[0]!r} not among classes") from None
    K = len(classes)
    present = np.bincount(y_idx, minlength=K)
    if K < 2 or (present > 0).sum() < 2:
        raise FitError("multiclass fit needs at least two distinct classes")
    prior = np.maximum(present / len(y_idx), 1e-12)
    base = np.log(prior)
    onehot = np.zeros((len(y_idx), K))
    onehot[np.arange(len(y_idx)), y_idx] = 1.0
    order = _presort(X)
    logits = np.tile(base, (len(y_idx), 1))
    if history is not None:
        history.append(cross_entropy(logits, y_idx))
    trees = []
    for _ in range(cfg.rounds):
        p = softmax(logits)
        rnd = []
        updates = np.empty_like(logits)
        for k in range(K):
            g = p[:, k] - onehot[:, k]
            h = np.maximum(p[:, k] * (1.0 - p[:, k]), HESS_FLOOR)
            tree, rows = grow_tree(X, g, h, cfg, order)
            rnd.append(tree)
            updates[:, k] = rows
        logits += updates
        trees.append(rnd)
        if history is not None:
            history.append(cross_entropy(logits, y_idx))
    return TreeEnsemble("multiclass_softprob", K, X.shape[1], base, trees, cfg,
                        [c.item() if hasattr(c, "item") else c for c in classes])


def fit_regressor(X, y, cfg: TrainConfig | None = None) -> TreeEnsemble:
    cfg = cfg or TrainConfig()
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise FitError("cannot fit a regressor on empty input")
    base = float(y.mean())
    pred = np.full(len(y), base)
    order = _presort(X)
    h = np.ones(len(y))
    trees = []
    for _ in range(cfg.rounds):
        tree, rows = grow_tree(X, pred - y, h, cfg, order)
        pred += rows
        trees.append([tree])
    return TreeEnsemble("squared_error", 1, X.shape[1], np.array([base]), trees, cfg)


# ---------------------------------------------------------------------------
# evaluation


def evaluate_classifier(model: TreeEnsemble, X, y) -> dict:
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty test set")
    pred = model.predict(X)
    labels = list(model.classes) if model.classes is not None else sorted(set(y.tolist()))
    idx = {c: i for i, c in enumerate(labels)}
    K = len(labels)
    conf = np.zeros((K, K), dtype=np.int64)
    for t, p in zip(y.tolist(), pred.tolist()):
        conf[idx[t], idx[p]] += 1
    tp = np.diag(conf).astype(float)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    present = support > 0
    return {
        "accuracy": float(tp.sum() / len(y)),
        "macro_f1": float(f1[present].mean()),
        "per_class_f1": {str(c): float(v) for c, v in zip(labels, f1)},
        "labels": [str(c) for c in labels],
        "confusion": conf.tolist(),
    }
