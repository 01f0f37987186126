"""Exact path-dependent TreeSHAP for ``TreeEnsemble`` models, plus summaries.

Attributions live in logit space: for every class ``k``,
``phi0[k] + phi[k].sum() == predict_logits(x)[k]``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from numba import njit

from .gbt import Tree, TreeEnsemble


@dataclass
class Attribution:
    phi: np.ndarray     # (K, M)
    phi0: np.ndarray    # (K,)
    sample_ref: object = None
    x: np.ndarray | None = None


@dataclass
class ImportanceSummary:
    features: list[str]
    mean_abs: np.ndarray    # (M,)
    shares: np.ndarray      # (M,), sums to 1

    def ranking(self) -> list[tuple[str, float]]:
        order = sorted(range(len(self.features)), key=lambda j: (-self.shares[j], j))
        return [(self.features[j], float(self.shares[j])) for j in order]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "mean_abs_shap", "share"])
        for f, m, s in zip(self.features, self.mean_abs, self.shares):
            w.writerow([f, repr(float(m)), repr(float(s))])
        return buf.getvalue()


class NoSignalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# path bookkeeping (one path segment per recursion level in flat buffers)


@njit(cache=True)
def _extend(pf, pz, po, pw, off, depth, zero, one, feat):
    pf[off + depth] = feat
    pz[off + depth] = zero
    po[off + depth] = one
    pw[off + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[off + i + 1] += one * pw[off + i] * (i + 1) / (depth + 1)
        pw[off + i] = zero * pw[off + i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(pf, pz, po, pw, off, depth, idx):
    one = po[off + idx]
    zero = pz[off + idx]
    nxt = pw[off + depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[off + i]
            pw[off + i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[off + i] * zero * (depth - i) / (depth + 1)
        else:
            pw[off + i] = pw[off + i] * (depth + 1) / (zero * (depth - i))
    for i in range(idx, depth):
        pf[off + i] = pf[off + i + 1]
        pz[off + i] = pz[off + i + 1]
        po[off + i] = po[off + i + 1]


@njit(cache=True)
def _unwound_sum(pz, po, pw, off, depth, idx):
    one = po[off + idx]
    zero = pz[off + idx]
    nxt = pw[off + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = nxt * (depth + 1) / ((i + 1) * one)
            total += tmp
            nxt = pw[off + i] - tmp * zero * (depth - i) / (depth + 1)
        else:
            total += pw[off + i] / zero / ((depth - i) / (depth + 1))
    return total


# Not cached on disk: reloading a cached self-recursive function segfaults
# under numba 0.66, so these two compile once per process instead.
@njit
def _recurse(feature, threshold, left, right, value, cover, x, phi,
             pf, pz, po, pw, node, depth, parent_off, off, zero, one, feat):
    # copy parent path into this level's segment, then extend it
    for i in range(depth):
        pf[off + i] = pf[parent_off + i]
        pz[off + i] = pz[parent_off + i]
        po[off + i] = po[parent_off + i]
        pw[off + i] = pw[parent_off + i]
    _extend(pf, pz, po, pw, off, depth, zero, one, feat)

    split = feature[node]
    if split < 0:
        for i in range(1, depth + 1):
            w = _unwound_sum(pz, po, pw, off, depth, i)
            phi[pf[off + i]] += w * (po[off + i] - pz[off + i]) * value[node]
        return 0

    if x[split] <= threshold[node]:
        hot, cold = left[node], right[node]
    else:
        hot, cold = right[node], left[node]
    hot_zero = cover[hot] / cover[node]
    cold_zero = cover[cold] / cover[node]
    in_zero = 1.0
    in_one = 1.0
    k = 0
    while k <= depth:
        if pf[off + k] == split:
            break
        k += 1
    if k != depth + 1:
        in_zero = pz[off + k]
        in_one = po[off + k]
        _unwind(pf, pz, po, pw, off, depth, k)
        depth -= 1
    nxt = off + depth + 2
    _recurse(feature, threshold, left, right, value, cover, x, phi,
             pf, pz, po, pw, hot, depth + 1, off, nxt, hot_zero * in_zero, in_one, split)
    _recurse(feature, threshold, left, right, value, cover, x, phi,
             pf, pz, po, pw, cold, depth + 1, off, nxt, cold_zero * in_zero, 0.0, split)
    return 0


@njit
def _tree_shap_one(feature, threshold, left, right, value, cover, x, phi, max_depth):
    size = (max_depth + 2) * (max_depth + 3) // 2 + max_depth + 3
    pf = np.full(size, -1, np.int64)
    pz = np.zeros(size)
    po = np.zeros(size)
    pw = np.zeros(size)
    _recurse(feature, threshold, left, right, value, cover, x, phi,
             pf, pz, po, pw, 0, 0, 0, 0, 1.0, 1.0, -1)


def expected_value(tree: Tree) -> float:
    """Cover-weighted mean leaf value, the tree's output with no feature known."""
    leaves = tree.feature < 0
    return float((tree.value[leaves] * tree.cover[leaves]).sum() / tree.cover[0])


def tree_shap_single(tree: Tree, x, n_features: int) -> tuple[np.ndarray, float]:
    phi = np.zeros(n_features)
    if tree.feature[0] < 0:
        return phi, float(tree.value[0])
    x = np.asarray(x, dtype=np.float64)
    _tree_shap_one(tree.feature, tree.threshold, tree.left, tree.right, tree.value, tree.cover,
                   x, phi, tree.depth())
    return phi, expected_value(tree)


def tree_shap(model: TreeEnsemble, x, sample_ref=None) -> Attribution:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {x.shape[0]}")
    K, M = model.n_classes, model.n_features
    phi = np.zeros((K, M))
    phi0 = model.base_score.astype(np.float64).copy()
    for rnd in model.trees:
        for k, tree in enumerate(rnd):
            p, e = tree_shap_single(tree, x, M)
            phi[k] += p
            phi0[k] += e
    return Attribution(phi, phi0, sample_ref, x)


def explain(model: TreeEnsemble, X, refs=None) -> list[Attribution]:
    X = np.asarray(X, dtype=np.float64)
    refs = range(len(X)) if refs is None else refs
    return [tree_shap(model, row, r) for row, r in zip(X, refs)]


# ---------------------------------------------------------------------------
# summaries


def _normalize(mean_abs: np.ndarray, what: str) -> np.ndarray:
    total = mean_abs.sum()
    if not total > 0:
        raise NoSignalError(f"no signal: all attributions are zero ({what})")
    return mean_abs / total


def global_importance(attributions, features=None) -> ImportanceSummary:
    attributions = list(attributions)
    if not attributions:
        raise ValueError("empty attribution set")
    stack = np.stack([a.phi for a in attributions])  # (n, K, M)
    mean_abs = np.abs(stack).mean(axis=(0, 1))
    features = list(features) if features is not None else [f"f{j}" for j in range(stack.shape[2])]
    return ImportanceSummary(features, mean_abs, _normalize(mean_abs, "global"))


def class_importance(attributions, k: int, features=None) -> ImportanceSummary:
    attributions = list(attributions)
    if not attributions:
        raise ValueError("empty attribution set")
    stack = np.stack([a.phi[k] for a in attributions])  # (n, M)
    mean_abs = np.abs(stack).mean(axis=0)
    features = list(features) if features is not None else [f"f{j}" for j in range(stack.shape[1])]
    return ImportanceSummary(features, mean_abs, _normalize(mean_abs, f"class {k}"))


def dependence_table(attributions, j: int, k: int) -> list[tuple[float, float]]:
    """(feature value, phi) pairs sorted by value; ties keep sample order."""
    rows = []
    for pos, a in enumerate(attributions):
        ref = a.sample_ref if a.sample_ref is not None else pos
        rows.append((float(a.x[j]), float(a.phi[k, j]), ref, pos))
    rows.sort(key=lambda r: (r[0], _sortable(r[2]), r[3]))
    return [(v, p) for v, p, _, _ in rows]


def _sortable(ref):
    return (0, ref, "") if isinstance(ref, (int, np.integer)) else (1, 0, str(ref))


def dependence_csv(table, feature: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([feature, "shap"])
    for v, p in table:
        w.writerow([repr(v), repr(p)])
    return buf.getvalue()
