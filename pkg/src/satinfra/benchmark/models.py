"""Ridge regression and a small CART family (single, boosted, bagged)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularSystemError(np.linalg.LinAlgError):
    pass


def ridge_fit(X, y, lam=1.0):
    """Ridge with an unpenalised intercept. Returns (coef, intercept).

    Columns and target are centred, then ``(Xc'Xc + lam I) b = Xc'yc`` is
    solved; the intercept restores the means.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    A = Xc.T @ Xc + lam * np.eye(X.shape[1])
    if np.linalg.matrix_rank(A) < X.shape[1]:
        raise SingularSystemError("normal equations are singular (collinear columns with lambda = 0?)")
    coef = np.linalg.solve(A, Xc.T @ (y - ym))
    return coef, float(ym - xm @ coef)


class Ridge:
    """Ridge on columns standardised with training-split statistics."""

    def __init__(self, lam=1.0, standardize=True):
        self.lam = lam
        self.standardize = standardize

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if self.standardize:
            self.mu_ = X.mean(axis=0)
            sd = X.std(axis=0)
            self.sd_ = np.where(sd > 0, sd, 1.0)
        else:
            self.mu_ = np.zeros(X.shape[1])
            self.sd_ = np.ones(X.shape[1])
        self.coef_, self.intercept_ = ridge_fit((X - self.mu_) / self.sd_, y, self.lam)
        return self

    def predict(self, X):
        return ((np.asarray(X, dtype=np.float64) - self.mu_) / self.sd_) @ self.coef_ + self.intercept_


@dataclass
class TreeParams:
    max_depth: int = 8
    min_leaf: int = 5


class RegressionTree:
    """Greedy variance-reduction tree; splits sit at midpoints of sorted unique values.

    Rows with ``x[feature] <= threshold`` go left. Among equally good
    splits the lowest feature index, then the lowest threshold, wins.
    """

    def __init__(self, max_depth=8, min_leaf=5):
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if len(y) == 0:
            raise ValueError("cannot fit a tree on zero rows")
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []
        self._grow(X, y, np.arange(len(y)), 0)
        self.feature = np.array(self.feature)
        self.threshold = np.array(self.threshold)
        self.left = np.array(self.left)
        self.right = np.array(self.right)
        self.value = np.array(self.value)
        return self

    def _new_node(self, value):
        for lst, v in ((self.feature, -1), (self.threshold, np.nan), (self.left, -1), (self.right, -1),
                       (self.value, value)):
            lst.append(v)
        return len(self.value) - 1

    def _grow(self, X, y, idx, depth):
        v = y[idx]
        lo = v.min()
        node = self._new_node(float(lo + (v - lo).mean()))  # exact for constant targets
        if depth >= self.max_depth or len(idx) < 2 * self.min_leaf:
            return node
        split = best_split(X[idx], y[idx], self.min_leaf)
        if split is None:
            return node
        f, thr = split
        go_left = X[idx, f] <= thr
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self._grow(X, y, idx[go_left], depth + 1)
        self.right[node] = self._grow(X, y, idx[~go_left], depth + 1)
        return node

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            active = self.feature[node] >= 0
            if not active.any():
                return self.value[node]
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def structure(self, node=0):
        """Nested (feature, threshold, left, right) tuples; leaves are their mean."""
        if self.feature[node] < 0:
            return float(self.value[node])
        return (int(self.feature[node]), float(self.threshold[node]),
                self.structure(self.left[node]), self.structure(self.right[node]))

    @property
    def depth(self):
        def d(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(d(self.left[node]), d(self.right[node]))
        return d(0)


def best_split(X, y, min_leaf):
    """(feature, threshold) minimising the children's summed squared error, or None."""
    n, p = X.shape
    yc = y - y.mean()
    parent = float(yc @ yc)
    if parent <= 1e-12 * max(1.0, float(y @ y)):
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = yc[order]
    s = np.cumsum(ys, axis=0)[:-1]
    q = np.cumsum(ys * ys, axis=0)[:-1]
    n_left = np.arange(1, n)[:, None]
    n_right = n - n_left
    sse = (q - s * s / n_left) + ((parent - q) - (-s) ** 2 / n_right)
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    sse = np.where(valid, sse, np.inf).T  # feature-major so argmin prefers low feature, low threshold
    k = int(np.argmin(sse))
    f, pos = divmod(k, n - 1)
    if not np.isfinite(sse[f, pos]) or sse[f, pos] >= parent * (1 - 1e-12):
        return None
    return f, float(0.5 * (xs[pos, f] + xs[pos + 1, f]))


class BoostedTrees:
    """Least-squares gradient boosting: mean(y) + nu * sum of residual trees."""

    def __init__(self, n_rounds=100, learning_rate=0.1, max_depth=3, min_leaf=5):
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.base_ = float(y.mean())
        self.trees_ = []
        self.train_loss_ = []
        pred = np.full(len(y), self.base_)
        for _ in range(self.n_rounds):
            tree = RegressionTree(self.max_depth, self.min_leaf).fit(X, y - pred)
            pred = pred + self.learning_rate * tree.predict(X)
            self.trees_.append(tree)
            self.train_loss_.append(float(np.mean((y - pred) ** 2)))
        return self

    def predict(self, X):
        out = np.full(len(np.asarray(X)), self.base_)
        for tree in self.trees_:
            out = out + self.learning_rate * tree.predict(X)
        return out


class BaggedTrees:
    """Mean of trees grown on bootstrap resamples drawn from ``seed``."""

    def __init__(self, n_trees=100, bootstrap=True, max_depth=8, min_leaf=5, seed=0):
        self.n_trees = n_trees
        self.bootstrap = bootstrap
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        rng = np.random.default_rng(self.seed)
        n = len(y)
        self.trees_ = []
        for _ in range(self.n_trees):
            idx = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            self.trees_.append(RegressionTree(self.max_depth, self.min_leaf).fit(X[idx], y[idx]))
        return self

    def predict_each(self, X):
        return np.stack([t.predict(X) for t in self.trees_])

    def predict(self, X):
        return self.predict_each(X).mean(axis=0)
