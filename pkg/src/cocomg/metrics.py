"""Downstream evaluation: linear probe F1, k-means, matched accuracy, NMI, silhouette."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .numerics import Rng, as_matrix

EXHAUSTIVE_MATCH_MAX_K = 8


@dataclass(frozen=True)
class Partition:
    assignments: np.ndarray
    k: int
    inertia: float | None = None
    inertia_trace: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64)
        if a.size and (a.min() < 0 or a.max() >= self.k):
            raise ValueError(f"assignments must lie in [0, {self.k})")
        object.__setattr__(self, "assignments", a)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        a = np.asarray(labels, dtype=np.int64)
        return cls(a, int(a.max()) + 1 if a.size else 0)


def _assignments(p) -> np.ndarray:
    return p.assignments if isinstance(p, Partition) else np.asarray(p, dtype=np.int64)


# --- classification -------------------------------------------------------


def f1_scores(y_true, y_pred, classes=None) -> tuple[float, float]:
    """``(macro_f1, micro_f1)`` for single-label predictions."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if classes is None:
        classes = np.union1d(y_true, y_pred)
    per_class = []
    for c in classes:
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        per_class.append(2 * tp / denom if denom else 0.0)
    micro = float(np.mean(y_true == y_pred)) if y_true.size else 0.0
    return float(np.mean(per_class)) if per_class else 0.0, micro


def linear_probe(z_train, y_train, z_test, y_test, rng: Rng | None = None, *,
                 iters: int = 200, lr: float = 0.5, l2: float = 1e-4) -> dict[str, float]:
    """Softmax regression on frozen embeddings, full-batch gradient descent from zero.

    Inputs are centered on the training mean and divided by one global scale,
    the training RMS row norm, so the step size behaves the same for any
    embedding magnitude while the relative weight of dimensions is kept.
    ``rng`` is unused (the procedure is deterministic) and kept for interface
    symmetry.
    """
    z_train = as_matrix(z_train, "z_train")
    z_test = as_matrix(z_test, "z_test")
    y_train = np.asarray(y_train, dtype=np.int64)
    y_test = np.asarray(y_test, dtype=np.int64)
    if z_train.shape[1] != z_test.shape[1]:
        raise ValueError("train and test embeddings differ in width")
    classes = np.unique(y_train)
    if len(classes) < 2:
        raise ValueError("linear probe needs at least 2 classes in the training labels")
    missing = np.setdiff1d(np.unique(y_test), classes)
    if missing.size:
        warnings.warn(f"test classes {missing.tolist()} never appear in training", stacklevel=2)

    mu = z_train.mean(axis=0)
    scale = max(float(np.sqrt(np.mean(np.sum((z_train - mu) ** 2, axis=1)))), 1e-12)
    a = np.hstack([(z_train - mu) / scale, np.ones((len(z_train), 1))])
    b = np.hstack([(z_test - mu) / scale, np.ones((len(z_test), 1))])
    onehot = (y_train[:, None] == classes[None, :]).astype(np.float64)
    w = np.zeros((a.shape[1], len(classes)))
    reg = np.ones_like(w)
    reg[-1] = 0.0  # intercept is not penalized
    n = len(a)
    for _ in range(iters):
        logits = a @ w
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        w -= lr * (a.T @ (p - onehot) / n + l2 * reg * w)
    pred = classes[np.argmax(b @ w, axis=1)]
    macro, micro = f1_scores(y_test, pred, np.union1d(classes, y_test))
    return {"macro_f1": macro, "micro_f1": micro}


# --- clustering -----------------------------------------------------------


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations to an assignment fixpoint; returns ``(labels, centers, inertia_trace)``."""
    centers = centers.copy()
    k = len(centers)
    labels = None
    trace: list[float] = []
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        new = np.argmin(d, axis=1)
        dist = d[np.arange(len(x)), new]
        trace.append(float(dist.sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c]:
                centers[c] = x[labels == c].mean(axis=0)
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(dist))
            centers[c] = x[far]
            dist[far] = 0.0
    return labels, centers, trace


def kmeans(z, k: int, rng: Rng, *, restarts: int = 10, max_iter: int = 300) -> Partition:
    """k-means++ seeded Lloyd, best of ``restarts`` by inertia (ties go to the earliest restart)."""
    x = as_matrix(z, "z")
    if k <= 0:
        raise ValueError("k must be positive")
    if k > len(x):
        raise ValueError(f"k={k} exceeds the number of points {len(x)}")
    best = None
    for _ in range(restarts):
        labels, _, trace = lloyd(x, _kmeanspp(x, k, rng), max_iter)
        if best is None or trace[-1] < best.inertia:
            best = Partition(labels, k, trace[-1], tuple(trace))
    return best


def contingency(p, labels) -> np.ndarray:
    a = _assignments(p)
    y = np.asarray(labels, dtype=np.int64)
    if a.shape != y.shape:
        raise ValueError("partition and labels differ in length")
    size = int(max(a.max(initial=-1), y.max(initial=-1))) + 1
    m = np.zeros((size, size), dtype=np.int64)
    np.add.at(m, (a, y), 1)
    return m


def clustering_accuracy(p, labels) -> float:
    """Best one-to-one cluster-to-class matching, as a fraction of points."""
    m = contingency(p, labels)
    n = m.sum()
    if n == 0:
        return 0.0
    k = len(m)
    if k <= EXHAUSTIVE_MATCH_MAX_K:
        perms = np.array(list(itertools.permutations(range(k))))
        matched = m[np.arange(k)[None, :], perms].sum(axis=1).max()
    else:
        r, c = linear_sum_assignment(-m)
        matched = m[r, c].sum()
    return float(matched) / float(n)


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(p, labels) -> float:
    """Mutual information over the geometric mean of the two entropies (0 if either is 0)."""
    m = contingency(p, labels).astype(np.float64)
    n = m.sum()
    if n == 0:
        return 0.0
    hp = _entropy(m.sum(axis=1))
    hy = _entropy(m.sum(axis=0))
    if hp <= 0 or hy <= 0:
        return 0.0
    pij = m / n
    outer = np.outer(m.sum(axis=1), m.sum(axis=0)) / (n * n)
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(min(max(mi / np.sqrt(hp * hy), 0.0), 1.0))


def silhouette(z, p) -> float:
    x = as_matrix(z, "z")
    a_ = _assignments(p)
    groups = np.unique(a_)
    if len(groups) < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    d = np.sqrt(_sq_dists(x, x))
    np.fill_diagonal(d, 0.0)
    onehot = (a_[:, None] == groups[None, :]).astype(np.float64)
    sizes = onehot.sum(axis=0)
    sums = d @ onehot
    own = np.searchsorted(groups, a_)
    idx = np.arange(len(x))
    own_size = sizes[own]
    intra = np.where(own_size > 1, sums[idx, own] / np.maximum(own_size - 1, 1), 0.0)
    mean_other = sums / sizes
    mean_other[idx, own] = np.inf
    inter = mean_other.min(axis=1)
    denom = np.maximum(intra, inter)
    s = np.where((own_size > 1) & (denom > 0), (inter - intra) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


# --- output ---------------------------------------------------------------


def format_metrics(metrics: dict[str, float]) -> str:
    lines = ["metric\tvalue"]
    lines += [f"{k}\t{v:.6f}" for k, v in metrics.items()]
    return "\n".join(lines) + "\n"
