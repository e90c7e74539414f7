"""Random forest with entropy splits.

Trees are grown by a small numba kernel and stored as flat node arrays, so
prediction is a tight loop and a whole model serialises to JSON.

Randomness is fully determined by ``(rng_seed, tree_index)``: each tree owns
a Philox stream that draws its bootstrap and one 64-bit seed per node; the
node seed drives the feature shuffle inside the kernel.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

FORMAT_VERSION = "mmfusion-forest/1"


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    max_features: str | int | float = "sqrt"
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    def features_per_split(self, n_features: int) -> int:
        mf = self.max_features
        if mf == "sqrt":
            k = int(math.sqrt(n_features))
        elif mf == "log2":
            k = int(math.log2(n_features)) if n_features > 1 else 1
        elif mf is None or mf == "all":
            k = n_features
        elif isinstance(mf, float):
            k = int(mf * n_features)
        else:
            k = int(mf)
        return min(max(1, k), n_features)

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "max_depth": self.max_depth,
                "min_samples_split": self.min_samples_split,
                "max_features": self.max_features, "rng_seed": self.rng_seed}


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    """Counter-based stream for one tree; independent of how many trees
    exist or in which order they are built."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed % 2 ** 64, tree_index])))


def entropy(counts) -> float:
    """Base-2 Shannon entropy of a class-count vector."""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum()) + 0.0


def information_gain(y_parent, y_left, y_right, n_classes: int) -> float:
    n = len(y_parent)
    return (entropy(np.bincount(y_parent, minlength=n_classes))
            - len(y_left) / n * entropy(np.bincount(y_left, minlength=n_classes))
            - len(y_right) / n * entropy(np.bincount(y_right, minlength=n_classes)))


# -- kernels -----------------------------------------------------------------

@numba.njit(cache=True)
def _entropy_nb(counts, n):
    h = 0.0
    for c in counts:
        if c > 0:
            p = c / n
            h -= p * math.log2(p)
    return h


@numba.njit(cache=True)
def _splitmix64(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return state, z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _feature_split(X, y, idx, start, end, f, n_classes):
    """Lowest weighted child entropy over midpoint thresholds of feature f.

    Returns (child_entropy, threshold, valid)."""
    n = end - start
    xs = np.empty(n)
    for i in range(n):
        xs[i] = X[idx[start + i], f]
    order = np.argsort(xs)
    total = np.zeros(n_classes)
    for i in range(n):
        total[y[idx[start + i]]] += 1.0
    left = np.zeros(n_classes)
    right = np.empty(n_classes)
    best = np.inf
    thr = 0.0
    found = False
    for i in range(n - 1):
        left[y[idx[start + order[i]]]] += 1.0
        a = xs[order[i]]
        b = xs[order[i + 1]]
        if not a < b:
            continue
        for c in range(n_classes):
            right[c] = total[c] - left[c]
        nl = i + 1.0
        child = (nl * _entropy_nb(left, nl) + (n - nl) * _entropy_nb(right, n - nl)) / n
        if child < best:
            best = child
            thr = (a + b) / 2.0
            if not thr < b:
                thr = a
            found = True
    return best, thr, found


@numba.njit(cache=True)
def _grow(X, y, n_classes, k, max_depth, min_split, node_seeds):
    n, n_features = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, n_classes))
    idx = np.arange(n)
    perm = np.arange(n_features)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    n_nodes = 1
    st_node[0], st_start[0], st_end[0], st_depth[0] = 0, 0, n, 0
    top = 1
    while top > 0:
        top -= 1
        node, start, end, depth = st_node[top], st_start[top], st_end[top], st_depth[top]
        size = end - start
        counts = np.zeros(n_classes)
        for i in range(start, end):
            counts[y[idx[i]]] += 1.0
        pure = False
        for c in range(n_classes):
            if counts[c] == size:
                pure = True
        for c in range(n_classes):
            value[node, c] = counts[c] / size
        if pure or size < min_split or (max_depth >= 0 and depth >= max_depth):
            continue

        state = node_seeds[node]
        for j in range(n_features):
            perm[j] = j
        best_child = np.inf
        best_f = -1
        best_thr = 0.0
        tried = 0
        for j in range(n_features):
            if tried >= k:
                break
            state, r = _splitmix64(state)
            s = j + np.int64(r % np.uint64(n_features - j))
            tmp = perm[j]
            perm[j] = perm[s]
            perm[s] = tmp
            f = perm[j]
            child, thr, ok = _feature_split(X, y, idx, start, end, f, n_classes)
            if not ok:
                # constant features do not use up the draw budget
                continue
            tried += 1
            if child < best_child or (child == best_child and f < best_f):
                best_child = child
                best_f = f
                best_thr = thr
        if best_f < 0:
            continue

        # partition idx[start:end] so samples going left come first
        i, j = start, end - 1
        while i <= j:
            if X[idx[i], best_f] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        st_node[top], st_start[top], st_end[top], st_depth[top] = right[node], i, end, depth + 1
        top += 1
        st_node[top], st_start[top], st_end[top], st_depth[top] = left[node], start, i, depth + 1
        top += 1
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@numba.njit(cache=True)
def _apply(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], dtype=np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


def best_split(X, y, n_classes: int, features=None):
    """Best ``(information_gain, feature, threshold)`` among ``features``,
    or ``None`` when all of them are constant. Samples with
    ``x <= threshold`` go left; ties prefer the lower feature index, then
    the lower threshold."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    idx = np.arange(y.size)
    parent = entropy(np.bincount(y, minlength=n_classes))
    best = None
    for f in (range(X.shape[1]) if features is None else sorted(features)):
        child, thr, ok = _feature_split(X, y, idx, 0, y.size, int(f), n_classes)
        if ok and (best is None or child < best[0]):
            best = (child, int(f), float(thr))
    if best is None:
        return None
    return parent - best[0], best[1], best[2]


# -- model -------------------------------------------------------------------

@dataclass
class Tree:
    feature: np.ndarray      # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray        # (n_nodes, n_classes) class frequencies

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        return _apply(self.feature, self.threshold, self.left, self.right, X)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        value = np.array(d["value"], dtype=np.float64)
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=np.float64),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   value.reshape(len(d["feature"]), -1))


def grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, params: ForestParams,
              rng: np.random.Generator) -> Tree:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    node_seeds = rng.integers(0, 2 ** 63 - 1, size=2 * y.size + 1, dtype=np.int64).astype(np.uint64)
    max_depth = -1 if params.max_depth is None else params.max_depth
    parts = _grow(X, y, n_classes, params.features_per_split(X.shape[1]), max_depth,
                  params.min_samples_split, node_seeds)
    return Tree(*(np.ascontiguousarray(a) for a in parts))


@dataclass
class TrainedForest:
    trees: list
    params: ForestParams
    n_classes: int
    n_features: int
    in_bag: Optional[np.ndarray] = field(default=None, repr=False)  # (n_trees, n_samples) counts

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[-1]}")
        return X

    def predict_proba(self, X) -> np.ndarray:
        """Mean leaf frequency over trees, one row per input row."""
        X = self._check(X)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        out = np.zeros((X.shape[0], self.n_classes))
        for tree in self.trees:
            out += tree.predict(X)
        out /= len(self.trees)
        return out[0] if single else out

    def oob_proba(self, X_train) -> np.ndarray:
        """Out-of-bag supports for the training rows; rows that were in every
        bootstrap fall back to the full-forest prediction."""
        X = np.atleast_2d(self._check(X_train))
        if self.in_bag is None or self.in_bag.shape[1] != X.shape[0]:
            raise ValueError("out-of-bag bookkeeping does not match these training rows")
        out = np.zeros((X.shape[0], self.n_classes))
        hits = np.zeros(X.shape[0], dtype=np.int64)
        for t, tree in enumerate(self.trees):
            oob = self.in_bag[t] == 0
            if oob.any():
                out[oob] += tree.predict(X[oob])
                hits[oob] += 1
        missing = hits == 0
        if missing.any():
            out[missing] = self.predict_proba(X[missing])
            hits[missing] = 1
        return out / hits[:, None]

    def to_json(self) -> str:
        return json.dumps({
            "format": FORMAT_VERSION, "params": self.params.to_dict(),
            "n_classes": self.n_classes, "n_features": self.n_features,
            "trees": [t.to_dict() for t in self.trees],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainedForest":
        d = json.loads(text)
        if d.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        return cls([Tree.from_dict(t) for t in d["trees"]], ForestParams(**d["params"]),
                   d["n_classes"], d["n_features"])


def train_forest(X, y, params: ForestParams = ForestParams(), n_classes: Optional[int] = None) -> TrainedForest:
    """Fit a forest on rows ``X`` with integer class labels ``y``.

    Each tree sees a same-size bootstrap drawn from ``tree_rng(seed, t)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2:
        raise TrainingError("samples must form a 2-D array with uniform dimensionality")
    if X.shape[0] != y.size:
        raise TrainingError(f"{X.shape[0]} samples but {y.size} labels")
    if y.size < 2:
        raise TrainingError("need at least two training samples")
    if np.unique(y).size < 2:
        raise TrainingError("training set holds a single class")
    if not np.all(np.isfinite(X)):
        raise TrainingError("training features contain NaN or infinity")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    n = y.size
    trees, in_bag = [], np.zeros((params.n_trees, n), dtype=np.int64)
    for t in range(params.n_trees):
        rng = tree_rng(params.rng_seed, t)
        boot = rng.integers(0, n, size=n)
        in_bag[t] = np.bincount(boot, minlength=n)
        trees.append(grow_tree(X[boot], y[boot], n_classes, params, rng))
    return TrainedForest(trees, params, n_classes, X.shape[1], in_bag)


def predict_soft(model: TrainedForest, x) -> np.ndarray:
    return model.predict_proba(np.asarray(x, dtype=np.float64).reshape(-1))


def predict_crisp(model: TrainedForest, x) -> int:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return int(np.argmax(predict_soft(model, x)))
