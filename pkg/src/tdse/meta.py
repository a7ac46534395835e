"""The seven Stage-2 meta-classifiers.

All share one interface: ``score(X)`` gives P(Up)-like scores in [0, 1] and
``predict(X)`` is ``score > 0.5`` (so exact 0.5 falls to Down).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import nn
from .errors import KTooLarge, NoConvergence, SingleClassTraining, TooFewSamples


class MetaKind(str, Enum):
    LR = "LR"
    KNN = "KNN"
    RbfSvm = "RbfSvm"
    PolySvm = "PolySvm"
    RF = "RF"
    ET = "ET"
    ANN = "ANN"


# selection priority on accuracy ties
KIND_ORDER = [MetaKind.LR, MetaKind.KNN, MetaKind.RbfSvm, MetaKind.PolySvm, MetaKind.RF, MetaKind.ET, MetaKind.ANN]

GRID_C = (0.1, 1, 10, 100, 1000)
GRID_GAMMA = (0.1, 0.5, 1, 1.5, 2, 2.5)
GRID_DEGREE = tuple(range(2, 11))
GRID_TREES = tuple(range(5, 51, 5))
GRID_NEIGHBORS = tuple(range(2, 21))
GRID_WIDTH = tuple(range(2, 51))


def _check_binary(y):
    y = np.asarray(y, dtype=int)
    if len(np.unique(y)) < 2:
        raise SingleClassTraining("training labels contain a single class")
    return y


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


class MetaModel:
    kind: MetaKind
    hyper: dict

    def score(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        return (self.score(X) > 0.5).astype(int)

    def state(self) -> dict[str, np.ndarray]:
        raise NotImplementedError


# ------------------------------------------------------------------------ LR


@dataclass
class LogisticModel(MetaModel):
    coef: np.ndarray
    intercept: float
    hyper: dict = field(default_factory=dict)
    iterations: int = 0
    kind: MetaKind = MetaKind.LR

    def decision(self, X):
        return np.asarray(X, dtype=float) @ self.coef + self.intercept

    def score(self, X):
        return sigmoid(self.decision(X))

    def state(self):
        return {"coef": self.coef, "intercept": np.array([self.intercept])}


def log_likelihood(X, y, coef, intercept, C=None) -> float:
    z = np.asarray(X, dtype=float) @ coef + intercept
    ll = float(np.sum(y * z - np.logaddexp(0.0, z)))
    if C is not None:
        ll -= float(coef @ coef) / (2.0 * C)
    return ll


def fit_logistic(X, y, C: float = 1.0, tol: float = 1e-6, max_iter: int = 10_000) -> LogisticModel:
    """Gradient ascent (step 1/L) on sum log-likelihood - ||w||^2 / (2C).

    The intercept is not penalised.
    """
    X = np.asarray(X, dtype=float)
    y = _check_binary(y)
    if len(y) < 2:
        raise TooFewSamples("need at least 2 samples")
    xa = np.hstack([X, np.ones((len(X), 1))])
    lam = 1.0 / C
    lip = 0.25 * np.linalg.norm(xa, 2) ** 2 + lam
    beta = np.zeros(xa.shape[1])
    pen = np.ones_like(beta)
    pen[-1] = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        grad = xa.T @ (y - sigmoid(xa @ beta)) - lam * pen * beta
        if np.linalg.norm(grad) < tol:
            break
        beta = beta + grad / lip
    return LogisticModel(beta[:-1].copy(), float(beta[-1]), {"C": C}, it)


# ----------------------------------------------------------------------- KNN


@dataclass
class KnnModel(MetaModel):
    X: np.ndarray
    y: np.ndarray
    k: int
    hyper: dict = field(default_factory=dict)
    kind: MetaKind = MetaKind.KNN

    def neighbors(self, Q) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        d2 = np.sum((Q[:, None, :] - self.X[None, :, :]) ** 2, axis=2)
        return np.argsort(d2, axis=1, kind="stable")[:, : self.k]

    def score(self, X):
        return self.y[self.neighbors(X)].mean(axis=1)

    def state(self):
        return {"X": self.X, "y": self.y.astype(float), "k": np.array([self.k], dtype=float)}


def fit_knn(X, y, k: int) -> KnnModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if k < 1 or k > len(y):
        raise KTooLarge(f"k={k} exceeds training size {len(y)}")
    return KnnModel(X.copy(), y.copy(), int(k), {"k": int(k)})


def knn_predict(X, y, query, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(labels, scores) for the query rows; distance ties -> lower index, vote ties -> Down."""
    m = fit_knn(X, y, k)
    s = m.score(query)
    return (s > 0.5).astype(int), s


# ----------------------------------------------------------------------- SVM


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2 * A @ B.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


def poly_kernel(A, B, degree: int) -> np.ndarray:
    """(x.y / d + 1)^degree, d = feature count."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    return (A @ B.T / A.shape[1] + 1.0) ** degree


@dataclass
class SvmModel(MetaModel):
    sv: np.ndarray
    coef: np.ndarray  # alpha_i * y_i for the support vectors
    rho: float
    kernel: str
    param: float
    hyper: dict = field(default_factory=dict)
    alpha: np.ndarray | None = None
    iterations: int = 0
    kind: MetaKind = MetaKind.RbfSvm

    def gram(self, A, B):
        return rbf_kernel(A, B, self.param) if self.kernel == "rbf" else poly_kernel(A, B, int(self.param))

    def decision(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if len(self.sv) == 0:
            return np.full(len(X), -self.rho)
        return self.gram(X, self.sv) @ self.coef - self.rho

    def score(self, X):
        return sigmoid(self.decision(X))

    def state(self):
        return {"sv": self.sv, "coef": self.coef, "rho": np.array([self.rho]), "param": np.array([self.param])}


def smo(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 200_000):
    """Solve min 1/2 a'Qa - e'a, 0 <= a <= C, y'a = 0 with Q_ij = y_i y_j K_ij.

    Second-order working-set selection; stops when the maximal KKT
    violation m(a) - M(a) drops below ``tol``. Returns (alpha, rho, iters).
    """
    n = len(y)
    yf = y.astype(float)
    Q = yf[:, None] * yf[None, :] * K
    diag = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    tau = 1e-12
    for it in range(max_iter):
        yg = -yf * G
        up = ((yf > 0) & (alpha < C)) | ((yf < 0) & (alpha > 0))
        low = ((yf < 0) & (alpha < C)) | ((yf > 0) & (alpha > 0))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        m_val = yg[i]
        M_val = yg[low].min()
        if m_val - M_val < tol:
            break
        cand = low & (yg < m_val)
        b = m_val - yg[cand]
        a = diag[i] + diag[cand] - 2.0 * K[i, cand]
        a = np.where(a > 0, a, tau)
        j = int(np.flatnonzero(cand)[np.argmin(-(b * b) / a)])
        ai, aj = alpha[i], alpha[j]
        quad = max(diag[i] + diag[j] - 2.0 * K[i, j], tau)
        if yf[i] != yf[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        G += Q[:, i] * (ai - alpha[i]) + Q[:, j] * (aj - alpha[j])
        alpha[i], alpha[j] = ai, aj
    else:
        raise NoConvergence(f"SMO hit the iteration cap ({max_iter})")
    # offset as in libsvm: average over free vectors, else midpoint of the feasible interval
    yg = yf * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yg[free].mean())
    else:
        at_up = alpha >= C
        ub_mask = (at_up & (yf < 0)) | (~at_up & (yf > 0))
        lb_mask = (at_up & (yf > 0)) | (~at_up & (yf < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub + lb) else float(ub if np.isfinite(ub) else lb)
    return alpha, rho, it


def dual_objective(K, y, alpha) -> float:
    """1/2 a'Qa - sum(a) (the minimised form)."""
    ya = alpha * np.where(np.asarray(y) > 0, 1.0, -1.0)
    return float(0.5 * ya @ K @ ya - alpha.sum())


def fit_svm(X, y, kernel: str = "rbf", C: float = 1.0, gamma: float = 1.0, degree: int = 3,
            tol: float = 1e-3, max_iter: int = 200_000) -> SvmModel:
    X = np.asarray(X, dtype=float)
    y01 = _check_binary(y)
    ys = np.where(y01 > 0, 1, -1)
    if kernel == "rbf":
        K, param, kind, hyper = rbf_kernel(X, X, gamma), float(gamma), MetaKind.RbfSvm, {"C": C, "gamma": gamma}
    elif kernel == "poly":
        K, param, kind, hyper = poly_kernel(X, X, degree), float(degree), MetaKind.PolySvm, {"C": C, "degree": degree}
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    alpha, rho, iters = smo(K, ys, float(C), tol, max_iter)
    nz = alpha > 0
    return SvmModel(X[nz].copy(), (alpha * ys)[nz], rho, kernel, param, hyper, alpha, iters, kind)


# ------------------------------------------------------------------- forests


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # fraction of Up in the node

    def leaf_value(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=int)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            rows = np.flatnonzero(inner)
            go_left = X[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def vote(self, X) -> np.ndarray:
        return (self.leaf_value(X) > 0.5).astype(int)


def _gini_best(xs, ys):
    """Best midpoint split of sorted xs; returns (impurity, threshold) or None."""
    n = len(xs)
    cum = np.cumsum(ys)[:-1]
    nl = np.arange(1, n)
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    pl = cum / nl
    pr = (ys.sum() - cum) / (n - nl)
    imp = (nl * 2 * pl * (1 - pl) + (n - nl) * 2 * pr * (1 - pr)) / n
    imp = np.where(valid, imp, np.inf)
    s = int(np.argmin(imp))
    return float(imp[s]), float((xs[s] + xs[s + 1]) / 2)


def _gini_at(x, ys, thr):
    left = x <= thr
    n = len(ys)
    out = 0.0
    for mask in (left, ~left):
        m = mask.sum()
        if m == 0:
            return None
        p = ys[mask].mean()
        out += m * 2 * p * (1 - p)
    return out / n


def build_tree(X, y, rng: np.random.Generator, max_features: int, extra: bool) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)))]
    d = X.shape[1]
    while stack:
        node, idx = stack.pop()
        ys = y[idx]
        if len(idx) < 2 or ys.min() == ys.max():
            continue
        best = None
        tried = 0
        for f in rng.permutation(d):
            if tried >= max_features:
                break
            x = X[idx, f]
            lo, hi = x.min(), x.max()
            if lo == hi:
                continue
            tried += 1
            if extra:
                thr = float(rng.uniform(lo, hi))
                imp = _gini_at(x, ys, thr)
                res = None if imp is None else (imp, thr)
            else:
                order = np.argsort(x, kind="stable")
                res = _gini_best(x[order], ys[order])
            if res is not None and (best is None or res[0] < best[0]):
                best = (res[0], res[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(li), new_node(ri)
        stack.append((right[node], ri))
        stack.append((left[node], li))
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(value))


@dataclass
class ForestModel(MetaModel):
    trees: list
    hyper: dict = field(default_factory=dict)
    oob_score: float | None = None
    kind: MetaKind = MetaKind.RF

    def votes(self, X) -> np.ndarray:
        return np.array([t.vote(np.asarray(X, dtype=float)) for t in self.trees])

    def score(self, X):
        return self.votes(X).mean(axis=0)

    def subset(self, n_trees: int) -> "ForestModel":
        """The forest made of the first ``n_trees`` trees (equal to fitting with that count)."""
        return ForestModel(self.trees[:n_trees], {**self.hyper, "n_trees": n_trees}, None, self.kind)

    def state(self):
        out = {}
        for i, t in enumerate(self.trees):
            for name in ("feature", "threshold", "left", "right", "value"):
                out[f"tree{i}.{name}"] = getattr(t, name).astype(float)
        return out


def fit_forest(X, y, n_trees: int = 10, variant: str = "RF", seed: int = 0, oob: bool = False) -> ForestModel:
    """RF: bootstrap + best Gini split over sqrt(d) random features.
    ET: full sample + one uniform random threshold per candidate feature.

    Tree t draws from its own stream ``(seed, t)``, so a forest's first n
    trees do not depend on how many trees are grown in total.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n, d = X.shape
    max_features = max(1, int(round(math.sqrt(d))))
    extra = variant == "ET"
    trees, in_bag = [], []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        if extra:
            idx = np.arange(n)
        else:
            idx = rng.integers(0, n, size=n)
        in_bag.append(idx)
        trees.append(build_tree(X[idx], y[idx], rng, max_features, extra))
    oob_score = None
    if oob and not extra:
        votes = np.zeros(n)
        counts = np.zeros(n)
        for tree, idx in zip(trees, in_bag):
            out = np.ones(n, dtype=bool)
            out[idx] = False
            votes[out] += tree.vote(X[out])
            counts[out] += 1
        have = counts > 0
        if have.any():
            oob_score = float(np.mean(((votes[have] / counts[have]) > 0.5) == y[have]))
    kind = MetaKind.ET if extra else MetaKind.RF
    return ForestModel(trees, {"n_trees": n_trees, "variant": kind.value}, oob_score, kind)


# ----------------------------------------------------------------------- ANN


@dataclass
class MlpModel(MetaModel):
    net: nn.MLP
    hyper: dict = field(default_factory=dict)
    kind: MetaKind = MetaKind.ANN

    def score(self, X):
        return self.net.predict_proba(np.asarray(X, dtype=float))[:, 1]

    def state(self):
        return self.net.state_dict()


def fit_mlp(X, y, widths=(16, 16, 16), epochs: int = 200, lr: float = 0.01, seed: int = 0) -> MlpModel:
    """Three ReLU hidden layers + softmax head, full-batch Adam."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(y) < 2:
        raise TooFewSamples("ANN needs at least 2 samples")
    net = nn.MLP(X.shape[1], list(widths), seed=seed)
    nn.train_model(net, X, y, epochs=epochs, batch_size=len(y), lr=lr, seed=seed)
    return MlpModel(net, {"widths": tuple(int(w) for w in widths)})


# -------------------------------------------------------------- dispatch


@dataclass(frozen=True)
class Stage2Params:
    """The 11 Stage-2 hyper-parameters."""

    lr_C: float = 1.0
    rbf_C: float = 1.0
    rbf_gamma: float = 1.0
    poly_C: float = 1.0
    poly_degree: int = 2
    rf_trees: int = 25
    ann_h1: int = 16
    ann_h2: int = 16
    ann_h3: int = 16
    knn_k: int = 5
    et_trees: int = 25

    def hyper_for(self, kind: MetaKind) -> tuple:
        return {
            MetaKind.LR: (self.lr_C,),
            MetaKind.KNN: (self.knn_k,),
            MetaKind.RbfSvm: (self.rbf_C, self.rbf_gamma),
            MetaKind.PolySvm: (self.poly_C, self.poly_degree),
            MetaKind.RF: (self.rf_trees,),
            MetaKind.ET: (self.et_trees,),
            MetaKind.ANN: (self.ann_h1, self.ann_h2, self.ann_h3),
        }[kind]


def fit_meta(kind: MetaKind, hyper: tuple, X, y, seed: int = 0) -> MetaModel:
    kind = MetaKind(kind)
    if kind is MetaKind.LR:
        return fit_logistic(X, y, C=hyper[0])
    if kind is MetaKind.KNN:
        return fit_knn(X, y, k=min(int(hyper[0]), len(y)))
    if kind is MetaKind.RbfSvm:
        return fit_svm(X, y, "rbf", C=hyper[0], gamma=hyper[1])
    if kind is MetaKind.PolySvm:
        return fit_svm(X, y, "poly", C=hyper[0], degree=int(hyper[1]))
    if kind in (MetaKind.RF, MetaKind.ET):
        return fit_forest(X, y, int(hyper[0]), kind.value, seed)
    if kind is MetaKind.ANN:
        return fit_mlp(X, y, tuple(int(h) for h in hyper), seed=seed)
    raise ValueError(kind)
