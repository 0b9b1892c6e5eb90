"""Random forest of CART trees (Gini, bootstrap, sqrt(d) candidate features).

Tree growth and prediction are compiled with numba and release the GIL, so
trees are fit on a thread pool. Each tree draws its bootstrap and its
feature-sampling stream from ``(seed, tree_index)`` only, so the result
does not depend on the number of threads.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .core import read_container, write_container
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: str | int = "sqrt"
    class_weight: str | None = "balanced"
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1 or None")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if not (self.max_features == "sqrt" or (isinstance(self.max_features, int) and self.max_features >= 1)):
            raise ConfigError(f"max_features must be 'sqrt' or a positive int, got {self.max_features!r}")
        if self.class_weight not in (None, "balanced"):
            raise ConfigError(f"class_weight must be None or 'balanced', got {self.class_weight!r}")

    def n_candidates(self, d: int) -> int:
        if self.max_features == "sqrt":
            return max(1, math.ceil(math.sqrt(d)))
        return min(d, int(self.max_features))


# compiled kernels


@numba.njit(cache=True, nogil=True)
def _next(state):
    # xorshift64
    s = state[0]
    s ^= s << np.uint64(13)
    s ^= s >> np.uint64(7)
    s ^= s << np.uint64(17)
    state[0] = s
    return s


@numba.njit(cache=True, nogil=True)
def _gini_sum(wp, wn):
    # weighted impurity times node weight: W * (1 - p^2 - q^2) = 2 wp wn / W
    w = wp + wn
    if w <= 0.0:
        return 0.0
    return 2.0 * wp * wn / w


@numba.njit(cache=True, nogil=True)
def _grow(X, y, w, cnt, rows, mtry, max_depth, min_leaf, seed):
    n = rows.shape[0]
    d = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap)
    state = np.empty(1, np.uint64)
    state[0] = np.uint64(seed) | np.uint64(1)
    for _ in range(8):
        _next(state)

    idx = rows.copy()
    stack_node = np.empty(cap, np.int64)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_depth[0] = 0
    top = 1
    n_nodes = 1
    feats = np.arange(d)
    vals = np.empty(n)
    order = np.empty(n, np.int64)
    tmp = np.empty(n, np.int64)
    evaluated = np.empty(d, np.int64)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        wp = 0.0
        wn = 0.0
        count = 0
        for i in range(lo, hi):
            r = idx[i]
            count += cnt[r]
            if y[r] == 1:
                wp += w[r]
            else:
                wn += w[r]
        value[node] = wp / (wp + wn) if wp + wn > 0 else 0.0
        if wp == 0.0 or wn == 0.0 or count < 2 * min_leaf or (max_depth > 0 and depth >= max_depth):
            continue
        parent = _gini_sum(wp, wn)

        # sample candidate features without replacement; keep drawing past
        # mtry while the drawn ones are constant in this node
        for j in range(d):
            feats[j] = j
        n_eval = 0
        n_valid = 0
        remaining = d
        while remaining > 0 and n_valid < mtry:
            k = int(_next(state) % np.uint64(remaining))
            f = feats[k]
            feats[k] = feats[remaining - 1]
            feats[remaining - 1] = f
            remaining -= 1
            first = X[idx[lo], f]
            varies = False
            for i in range(lo + 1, hi):
                if X[idx[i], f] != first:
                    varies = True
                    break
            if varies:
                evaluated[n_eval] = f
                n_eval += 1
                n_valid += 1
        if n_eval == 0:
            continue
        ev = np.sort(evaluated[:n_eval])

        best_score = -1.0
        best_f = -1
        best_t = 0.0
        m = hi - lo
        for e in range(n_eval):
            f = ev[e]
            for i in range(m):
                vals[i] = X[idx[lo + i], f]
            o = np.argsort(vals[:m])
            lp = 0.0
            ln = 0.0
            lc = 0
            for i in range(m - 1):
                r = idx[lo + o[i]]
                lc += cnt[r]
                if y[r] == 1:
                    lp += w[r]
                else:
                    ln += w[r]
                a = vals[o[i]]
                b = vals[o[i + 1]]
                if a == b:
                    continue
                if lc < min_leaf or count - lc < min_leaf:
                    continue
                score = parent - _gini_sum(lp, ln) - _gini_sum(wp - lp, wn - ln)
                t = 0.5 * (a + b)
                if t >= b:
                    t = a
                # ties go to the lower feature index, then the lower threshold
                if score > best_score + 1e-12 * (wp + wn):
                    best_score = score
                    best_f = f
                    best_t = t
        if best_f < 0:
            continue

        # partition idx[lo:hi] in place
        nl = 0
        nr = 0
        for i in range(lo, hi):
            r = idx[i]
            if X[r, best_f] <= best_t:
                order[nl] = r
                nl += 1
            else:
                tmp[nr] = r
                nr += 1
        for i in range(nl):
            idx[lo + i] = order[i]
        for i in range(nr):
            idx[lo + nl + i] = tmp[i]

        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        # push right first so the left subtree is expanded first
        stack_node[top] = n_nodes + 1
        stack_lo[top] = lo + nl
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = n_nodes
        stack_lo[top] = lo
        stack_hi[top] = lo + nl
        stack_depth[top] = depth + 1
        top += 1
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@numba.njit(cache=True, nogil=True)
def _predict(X, feature, threshold, left, right, value, offsets, out):
    n_trees = offsets.shape[0] - 1
    for i in range(X.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[i] = acc / n_trees


# model


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.left[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def structure(self) -> tuple:
        return (self.feature.tobytes(), self.threshold.tobytes(), self.left.tobytes(), self.right.tobytes())


@dataclass
class ForestModel:
    trees: list[Tree]
    n_features: int
    params: ForestParams
    seed: int
    feature_names: list[str] = field(default_factory=list)

    def _packed(self):
        sizes = [t.n_nodes for t in self.trees]
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(sizes)
        cat = lambda attr: np.concatenate([getattr(t, attr) for t in self.trees])  # noqa: E731
        return cat("feature"), cat("threshold"), cat("left"), cat("right"), cat("value"), offsets

    def predict_proba(self, X, n_jobs: int = 1) -> np.ndarray:
        return predict_proba(self, X, n_jobs=n_jobs)

    def split_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_features, dtype=np.int64)
        for t in self.trees:
            f = t.feature[t.feature >= 0]
            counts += np.bincount(f, minlength=self.n_features)
        return counts

    def save(self, path: str | Path) -> str:
        feature, threshold, left, right, value, offsets = self._packed()
        meta = {
            "kind": "forest",
            "n_features": self.n_features,
            "params": asdict(self.params),
            "seed": self.seed,
            "feature_names": list(self.feature_names),
        }
        cols = {"feature": feature, "threshold": threshold, "left": left, "right": right, "value": value, "offsets": offsets}
        return write_container(path, cols, meta)

    @classmethod
    def load(cls, path: str | Path) -> "ForestModel":
        cols, meta = read_container(path)
        if meta.get("kind") != "forest":
            raise DataError(f"{path}: not a forest model")
        off = cols["offsets"]
        trees = [
            Tree(*(cols[k][off[t] : off[t + 1]].copy() for k in ("feature", "threshold", "left", "right", "value")))
            for t in range(len(off) - 1)
        ]
        return cls(trees, meta["n_features"], ForestParams(**meta["params"]), meta["seed"], meta["feature_names"])


def tree_seed(seed: int, tree_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(tree_index)])


def class_weights(y: np.ndarray, mode: str | None) -> np.ndarray:
    """Per-class weights [w0, w1]; balanced: n / (2 n_k)."""
    if mode is None:
        return np.ones(2)
    n = len(y)
    n1 = int(y.sum())
    return np.array([n / (2.0 * (n - n1)), n / (2.0 * n1)])


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise DataError(f"X shape {X.shape} does not match {len(y)} labels")
    if not np.isfinite(X).all():
        raise DataError("X contains non-finite values")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0/1")
    if y.sum() == 0 or y.sum() == len(y):
        raise DataError("need both classes to fit a forest")
    return X, y


def fit_forest(X, y, params: ForestParams | None = None, seed: int = 0, n_jobs: int = 1, feature_names=None) -> ForestModel:
    params = params or ForestParams()
    X, y = _check_xy(X, y)
    n, d = X.shape
    cw = class_weights(y, params.class_weight)
    mtry = params.n_candidates(d)
    max_depth = -1 if params.max_depth is None else params.max_depth

    def one(t):
        ss = tree_seed(seed, t)
        rng = np.random.default_rng(ss)
        if params.bootstrap:
            cnt = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.int64)
        else:
            cnt = np.ones(n, dtype=np.int64)
        w = cnt * cw[y]
        rows = np.flatnonzero(cnt > 0).astype(np.int64)
        stream_seed = int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
        return Tree(*_grow(X, y, w, cnt, rows, mtry, max_depth, params.min_samples_leaf, stream_seed))

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(one, range(params.n_trees)))
    else:
        trees = [one(t) for t in range(params.n_trees)]
    return ForestModel(trees, d, params, seed, list(feature_names) if feature_names is not None else [])


def predict_proba(model: ForestModel, X, n_jobs: int = 1) -> np.ndarray:
    """Mean over trees of the leaf's weighted positive fraction."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DataError(f"expected {model.n_features} feature columns, got shape {X.shape}")
    packed = model._packed()
    out = np.empty(X.shape[0])
    if n_jobs > 1 and X.shape[0] > 1:
        parts = np.array_split(np.arange(X.shape[0]), n_jobs)

        def work(ix):
            if len(ix):
                o = np.empty(len(ix))
                _predict(X[ix], *packed, o)
                out[ix] = o

        with ThreadPoolExecutor(n_jobs) as pool:
            list(pool.map(work, parts))
    else:
        _predict(X, *packed, out)
    return out


# tuning


DEFAULT_GRID = {"n_trees": [100, 300], "max_depth": [None, 8], "min_samples_leaf": [1, 5]}


def expand_grid(grid: dict | list) -> list[ForestParams]:
    """Cartesian product of a dict of lists, or a list of param dicts."""
    if isinstance(grid, dict):
        keys = sorted(grid)
        combos = [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    else:
        combos = [dict(g) for g in grid]
    if not combos:
        raise ConfigError("empty forest grid")
    out = []
    for c in combos:
        try:
            out.append(ForestParams(**c))
        except TypeError as exc:
            raise ConfigError(f"invalid grid entry {c}: {exc}") from exc
    return out


def cross_validate(X, y, folds: list[np.ndarray], params: ForestParams, seed: int = 0, columns=None, n_jobs: int = 1):
    """Validation AUCs, ROC curves and scores per fold.

    ``folds`` holds one validation-row mask per fold; ``columns`` optionally
    one feature mask per fold (selected on that fold's training rows).
    """
    from .evaluate import roc_auc

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    aucs, curves, scores = [], [], []
    for i, val in enumerate(folds):
        train = ~val
        cols = np.ones(X.shape[1], dtype=bool) if columns is None else np.asarray(columns[i], dtype=bool)
        if not cols.any():
            s = np.full(int(val.sum()), 0.5)
        else:
            m = fit_forest(X[train][:, cols], y[train], params, seed=seed + i, n_jobs=n_jobs)
            s = predict_proba(m, X[val][:, cols], n_jobs=n_jobs)
        curve = roc_auc(s, y[val])
        aucs.append(curve.auc)
        curves.append(curve)
        scores.append(s)
    return np.array(aucs), curves, scores


def size_key(p: ForestParams) -> tuple:
    """Smaller models sort first: fewer trees, then shallower, then larger leaves."""
    depth = math.inf if p.max_depth is None else p.max_depth
    return (p.n_trees, depth, -p.min_samples_leaf)


def search_grid(X, y, folds, candidates: list[ForestParams], seed: int = 0, columns=None, n_jobs: int = 1):
    """Cross-validate every candidate; returns (best, its aucs, its curves, history).

    Ties in mean AUC (to 12 decimals) go to the smaller model.
    """
    best = None
    history = []
    for p in candidates:
        aucs, curves, _ = cross_validate(X, y, folds, p, seed=seed, columns=columns, n_jobs=n_jobs)
        mean = float(np.mean(aucs))
        log.info("forest %s: cv auc %.4f", p, mean)
        history.append({"params": asdict(p), "val_aucs": [float(a) for a in aucs], "mean_auc": mean})
        key = (-round(mean, 12), size_key(p))
        if best is None or key < best[0]:
            best = (key, p, aucs, curves)
    return best[1], best[2], best[3], history


def tune_forest(
    X, y, driver_ids, grid=None, k: int = 5, seed: int = 0, q: float | None = None, n_jobs: int = 1,
    history: list | None = None,
) -> ForestParams:
    """Grid search on mean grouped-stratified k-fold validation AUC.

    With ``q`` set, features are re-selected on each fold's training rows.
    """
    from .features import benjamini_yekutieli, relevance_pvalues
    from .splits import grouped_stratified_kfold

    candidates = expand_grid(DEFAULT_GRID if grid is None else grid)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    driver_ids = np.asarray(driver_ids)
    folds = [f.mask(driver_ids, "test") for f in grouped_stratified_kfold(driver_ids, y, k=k, seed=seed)]
    columns = None
    if q is not None:
        columns = [benjamini_yekutieli(relevance_pvalues(X[~f], y[~f]), q) for f in folds]
    best, _, _, hist = search_grid(X, y, folds, candidates, seed=seed, columns=columns, n_jobs=n_jobs)
    if history is not None:
        history.extend(hist)
    return best


def params_to_json(p: ForestParams) -> str:
    return json.dumps(asdict(p), sort_keys=True)
