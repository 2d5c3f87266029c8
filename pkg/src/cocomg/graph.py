"""Multiplex graphs: storage, text I/O, proximity, noise, SBM synthesis, OOS splits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .numerics import STREAM_NOISE, Rng, as_matrix, make_rng

PROXIMITY_MODES = ("one_hop", "two_hop", "combined")


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SparseAdjacency:
    """Symmetric weighted adjacency without self-loops.

    Entries are stored in both directions, sorted by ``(src, dst)``.
    Build instances with :meth:`from_edges` rather than directly.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges, weights=None) -> "SparseAdjacency":
        """Symmetrize an edge list; duplicates keep the largest weight, self-loops are dropped."""
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        w = np.ones(len(e)) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
        if len(w) != len(e):
            raise ValueError("weights length does not match edge count")
        if len(e) and (e.min() < 0 or e.max() >= n):
            raise ValueError(f"edge endpoint outside [0, {n})")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("edge weights must be finite and nonnegative")
        keep = e[:, 0] != e[:, 1]
        e, w = e[keep], w[keep]
        s = np.concatenate([e[:, 0], e[:, 1]])
        d = np.concatenate([e[:, 1], e[:, 0]])
        ww = np.concatenate([w, w])
        # sort by (src, dst, -weight) so the first of each duplicate run has the max weight
        order = np.lexsort((-ww, d, s))
        s, d, ww = s[order], d[order], ww[order]
        first = np.ones(len(s), dtype=bool)
        first[1:] = (s[1:] != s[:-1]) | (d[1:] != d[:-1])
        return cls(int(n), s[first], d[first], ww[first])

    @classmethod
    def from_csr(cls, m: sp.spmatrix) -> "SparseAdjacency":
        coo = sp.triu(m, k=1).tocoo()
        return cls.from_edges(m.shape[0], np.column_stack([coo.row, coo.col]), coo.data)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.src) // 2

    def undirected(self) -> tuple[np.ndarray, np.ndarray]:
        """``(edges, weights)`` with each undirected edge once, ``src < dst``."""
        m = self.src < self.dst
        return np.column_stack([self.src[m], self.dst[m]]), self.weight[m]

    def edge_set(self) -> set[tuple[int, int]]:
        e, _ = self.undirected()
        return set(map(tuple, e.tolist()))

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.weight, (self.src, self.dst)), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseAdjacency):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.weight, other.weight)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MultiplexGraph:
    features: np.ndarray
    layers: tuple[SparseAdjacency, ...]
    labels: np.ndarray | None = None

    def __post_init__(self):
        x = as_matrix(self.features, "features")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "layers", tuple(self.layers))
        n, d = x.shape
        if d < 1:
            raise ValueError("feature dimension must be at least 1")
        if not self.layers:
            raise ValueError("a multiplex graph needs at least one layer")
        for i, a in enumerate(self.layers):
            if a.n != n:
                raise ValueError(f"layer {i} has {a.n} nodes, features have {n}")
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (n,):
                raise ValueError(f"labels must have length {n}")
            if y.min(initial=0) < 0:
                raise ValueError("labels must be nonnegative")
            object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def without_labels(self) -> "MultiplexGraph":
        return MultiplexGraph(self.features, self.layers, None)

    def with_layers(self, layers: Sequence[SparseAdjacency]) -> "MultiplexGraph":
        return MultiplexGraph(self.features, tuple(layers), self.labels)


@dataclass(frozen=True)
class ProximityMatrix:
    """Symmetric nonnegative proximity with zero diagonal; only positive weights stored."""

    n: int
    matrix: sp.csr_matrix

    def row_support(self, i: int) -> np.ndarray:
        return self.matrix.indices[self.matrix.indptr[i] : self.matrix.indptr[i + 1]]

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @cached_property
    def row_normalized(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense row-stochastic weights and the mask of rows with nonempty support."""
        dense = self.to_dense()
        sums = dense.sum(axis=1)
        active = sums > 0
        dense[active] /= sums[active, None]
        return dense, active


def high_order(a: SparseAdjacency, mode: str = "two_hop") -> ProximityMatrix:
    """Proximity weights from an adjacency.

    ``one_hop`` is ``A``, ``two_hop`` is ``A A^T`` (co-neighbour walk counts) and
    ``combined`` is ``A + A A^T``. The diagonal is always zeroed.
    """
    if mode not in PROXIMITY_MODES:
        raise ValueError(f"unknown proximity mode {mode!r}; expected one of {PROXIMITY_MODES}")
    m = a.to_csr()
    if mode == "two_hop":
        w = m @ m.T
    elif mode == "combined":
        w = m + m @ m.T
    else:
        w = m.copy()
    w = sp.csr_matrix(w)
    w.setdiag(0)
    w.eliminate_zeros()
    w.sort_indices()
    return ProximityMatrix(a.n, w)


def inject_noise(a: SparseAdjacency, eta: float, rng: Rng) -> SparseAdjacency:
    """Replace ``ceil(eta * |E|)`` random edges with random non-edges.

    New edges get weight 1 and never coincide with an original edge, so the
    edge count is preserved.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    edges, weights = a.undirected()
    m_edges = len(edges)
    if eta == 0.0:
        return a
    if m_edges == 0:
        raise ValueError("cannot inject noise into a graph with no edges")
    n = a.n
    n_replace = math.ceil(eta * m_edges - 1e-9)
    free = n * (n - 1) // 2 - m_edges
    if free < n_replace:
        raise ValueError(f"only {free} non-edges available, {n_replace} needed")

    drop = rng.choice(m_edges, size=n_replace, replace=False)
    keep = np.ones(m_edges, dtype=bool)
    keep[drop] = False

    existing = set(map(tuple, edges.tolist()))
    new: list[tuple[int, int]] = []
    if free <= 4 * n_replace:
        # dense graph: sample directly from the complement
        iu, ju = np.triu_indices(n, k=1)
        cand = [(i, j) for i, j in zip(iu.tolist(), ju.tolist()) if (i, j) not in existing]
        pick = rng.choice(len(cand), size=n_replace, replace=False)
        new = [cand[p] for p in sorted(pick.tolist())]
    else:
        chosen: set[tuple[int, int]] = set()
        while len(new) < n_replace:
            i, j = rng.integers(0, n, size=2).tolist()
            if i == j:
                continue
            pair = (min(i, j), max(i, j))
            if pair in existing or pair in chosen:
                continue
            chosen.add(pair)
            new.append(pair)

    out_e = np.concatenate([edges[keep], np.asarray(new, dtype=np.int64).reshape(-1, 2)])
    out_w = np.concatenate([weights[keep], np.ones(len(new))])
    return SparseAdjacency.from_edges(n, out_e, out_w)


def inject_noise_multiplex(g: MultiplexGraph, eta: float, seed: int) -> MultiplexGraph:
    """Per-layer noise; layer ``v`` draws from its own substream of ``seed``."""
    return g.with_layers(inject_noise(a, eta, make_rng((seed, STREAM_NOISE, v))) for v, a in enumerate(g.layers))


# --- synthetic data -------------------------------------------------------


@dataclass(frozen=True)
class SbmConfig:
    """Planted-partition multiplex generator settings.

    ``p_in``/``p_out`` may be scalars or one value per layer. With
    ``complementary`` set, the adjacent block pairs ``(b, b+1)`` are handed to
    layers round-robin and each layer joins its pairs with ``p_in`` edges, so
    every layer merges some blocks and only the union of layers separates all
    of them. ``mean_scale`` is the std of the per-block feature means, on the
    same footing as ``feature_noise``.
    """

    n: int = 300
    k: int = 3
    v: int = 2
    d_feat: int = 128
    p_in: float | tuple[float, ...] = 0.1
    p_out: float | tuple[float, ...] = 0.01
    feature_noise: float = 1.0
    mean_scale: float = 1.0
    complementary: bool = True

    def per_layer(self, p) -> tuple[float, ...]:
        if np.isscalar(p):
            return (float(p),) * self.v
        p = tuple(float(x) for x in p)
        if len(p) != self.v:
            raise ValueError(f"expected {self.v} per-layer probabilities, got {len(p)}")
        return p

    def validate(self) -> None:
        if self.n < 2 or self.k < 1 or self.v < 1 or self.d_feat < 1:
            raise ValueError("n >= 2, k >= 1, v >= 1 and d_feat >= 1 are required")
        if self.k > self.n:
            raise ValueError("more blocks than nodes")
        for pi, po in zip(self.per_layer(self.p_in), self.per_layer(self.p_out)):
            if not 0.0 <= po < pi <= 1.0:
                raise ValueError(f"need 0 <= p_out < p_in <= 1, got p_in={pi}, p_out={po}")
        if self.feature_noise < 0 or self.mean_scale < 0:
            raise ValueError("feature_noise and mean_scale must be nonnegative")


def block_labels(n: int, k: int) -> np.ndarray:
    size = n // k
    y = np.minimum(np.arange(n) // size, k - 1)
    return y.astype(np.int64)


def merge_plan(k: int, v: int, complementary: bool) -> list[list[tuple[int, int]]]:
    """Block pairs joined by ``p_in`` edges in each layer (empty lists when not complementary)."""
    plan: list[list[tuple[int, int]]] = [[] for _ in range(v)]
    if complementary:
        for b in range(k - 1):
            plan[b % v].append((b, b + 1))
    return plan


def layer_communities(k: int, merged: Sequence[tuple[int, int]]) -> np.ndarray:
    """Map block -> community id within one layer after applying its merges."""
    parent = list(range(k))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for a, b in merged:
        parent[find(b)] = find(a)
    roots = [find(b) for b in range(k)]
    _, comm = np.unique(roots, return_inverse=True)
    return comm


def synth_multiplex_sbm(cfg: SbmConfig, rng: Rng) -> tuple[MultiplexGraph, list[list[tuple[int, int]]]]:
    """Sample a labelled multiplex SBM; also returns the per-layer merge plan."""
    cfg.validate()
    y = block_labels(cfg.n, cfg.k)
    plan = merge_plan(cfg.k, cfg.v, cfg.complementary)
    means = rng.normal(0.0, cfg.mean_scale, size=(cfg.k, cfg.d_feat))
    x = means[y] + rng.normal(0.0, cfg.feature_noise, size=(cfg.n, cfg.d_feat))

    iu, ju = np.triu_indices(cfg.n, k=1)
    layers = []
    for layer, (pi, po) in enumerate(zip(cfg.per_layer(cfg.p_in), cfg.per_layer(cfg.p_out))):
        comm = layer_communities(cfg.k, plan[layer])[y]
        p = np.where(comm[iu] == comm[ju], pi, po)
        hit = rng.random(len(iu)) < p
        layers.append(SparseAdjacency.from_edges(cfg.n, np.column_stack([iu[hit], ju[hit]])))
    return MultiplexGraph(x, tuple(layers), y), plan


# --- out-of-sample split --------------------------------------------------


@dataclass(frozen=True, eq=False)
class OosSplit:
    train_graph: MultiplexGraph
    unseen_features: np.ndarray
    unseen_labels: np.ndarray | None
    seen_index: np.ndarray
    unseen_index: np.ndarray


def induced_subgraph(a: SparseAdjacency, keep: np.ndarray) -> SparseAdjacency:
    remap = np.full(a.n, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    m = (remap[a.src] >= 0) & (remap[a.dst] >= 0) & (a.src < a.dst)
    e = np.column_stack([remap[a.src[m]], remap[a.dst[m]]])
    return SparseAdjacency.from_edges(len(keep), e, a.weight[m])


def oos_split(g: MultiplexGraph, ratio: float, rng: Rng) -> OosSplit:
    """Hold out ``ceil(ratio * N)`` random nodes; training keeps only the seen-node subgraph."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"ratio must lie in [0, 1), got {ratio}")
    n = g.n
    n_unseen = math.ceil(ratio * n - 1e-9)
    if n - n_unseen < 2:
        raise ValueError(f"ratio {ratio} leaves fewer than 2 seen nodes")
    unseen = np.sort(rng.choice(n, size=n_unseen, replace=False)) if n_unseen else np.zeros(0, np.int64)
    mask = np.ones(n, dtype=bool)
    mask[unseen] = False
    seen = np.flatnonzero(mask)
    train = MultiplexGraph(
        g.features[seen],
        tuple(induced_subgraph(a, seen) for a in g.layers),
        None if g.labels is None else g.labels[seen],
    )
    return OosSplit(
        train_graph=train,
        unseen_features=g.features[unseen],
        unseen_labels=None if g.labels is None else g.labels[unseen],
        seen_index=seen,
        unseen_index=unseen,
    )


# --- text I/O -------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def read_features(path) -> np.ndarray:
    path = Path(path)
    lines = list(_data_lines(path))
    if not lines:
        raise GraphFormatError(f"{path}: empty features file")
    lineno, head = lines[0]
    try:
        n, d = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise GraphFormatError(f"{path}:{lineno}: header must be 'N D'") from None
    if len(lines) - 1 != n:
        raise GraphFormatError(f"{path}: header declares {n} rows, found {len(lines) - 1}")
    x = np.empty((n, d))
    for r, (lineno, toks) in enumerate(lines[1:]):
        if len(toks) != d:
            raise GraphFormatError(f"{path}:{lineno}: expected {d} values, got {len(toks)}")
        try:
            x[r] = [float(t) for t in toks]
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-numeric feature value") from None
    if not np.all(np.isfinite(x)):
        raise GraphFormatError(f"{path}: non-finite feature value")
    return x


def read_layer(path, n: int) -> SparseAdjacency:
    path = Path(path)
    edges, weights = [], []
    for lineno, toks in _data_lines(path):
        if len(toks) not in (2, 3):
            raise GraphFormatError(f"{path}:{lineno}: expected 'src dst [weight]'")
        try:
            s, d = int(toks[0]), int(toks[1])
            w = float(toks[2]) if len(toks) == 3 else 1.0
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: malformed edge") from None
        if not (0 <= s < n and 0 <= d < n):
            raise GraphFormatError(f"{path}:{lineno}: node index out of range [0, {n})")
        if w < 0 or not math.isfinite(w):
            raise GraphFormatError(f"{path}:{lineno}: weight must be finite and nonnegative")
        edges.append((s, d))
        weights.append(w)
    if not edges:
        warnings.warn(f"{path}: layer has no edges", stacklevel=2)
    return SparseAdjacency.from_edges(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2), weights)


def read_labels(path, n: int) -> np.ndarray:
    path = Path(path)
    y = np.full(n, -1, dtype=np.int64)
    for lineno, toks in _data_lines(path):
        try:
            i, c = int(toks[0]), int(toks[1])
        except (ValueError, IndexError):
            raise GraphFormatError(f"{path}:{lineno}: expected 'node label'") from None
        if not 0 <= i < n:
            raise GraphFormatError(f"{path}:{lineno}: node index out of range [0, {n})")
        if c < 0:
            raise GraphFormatError(f"{path}:{lineno}: negative label")
        y[i] = c
    if np.any(y < 0):
        raise GraphFormatError(f"{path}: {int(np.sum(y < 0))} nodes have no label")
    return y


def load_multiplex(features_path, layer_paths: Sequence, labels_path=None) -> MultiplexGraph:
    x = read_features(features_path)
    layers = tuple(read_layer(p, x.shape[0]) for p in layer_paths)
    y = None if labels_path is None else read_labels(labels_path, x.shape[0])
    return MultiplexGraph(x, layers, y)


def write_matrix(path, x: np.ndarray) -> None:
    x = as_matrix(x)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{x.shape[0]} {x.shape[1]}\n")
        for row in x:
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


def write_layer(path, a: SparseAdjacency) -> None:
    e, w = a.undirected()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (s, d), wt in zip(e.tolist(), w.tolist()):
            fh.write(f"{s} {d} {_fmt(wt)}\n")


def write_labels(path, y: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, c in enumerate(np.asarray(y).tolist()):
            fh.write(f"{i} {c}\n")


def write_plan(path, k: int, plan: Sequence[Sequence[tuple[int, int]]]) -> None:
    """Per-layer merged block pairs and the resulting block -> community map."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer\tmerged_pairs\tcommunities\n")
        for v, merged in enumerate(plan):
            pairs = ",".join(f"{a}-{b}" for a, b in merged) or "-"
            comm = " ".join(str(c) for c in layer_communities(k, merged))
            fh.write(f"{v}\t{pairs}\t{comm}\n")


@dataclass
class GraphFiles:
    features: Path
    layers: list[Path] = field(default_factory=list)
    labels: Path | None = None


def write_multiplex(g: MultiplexGraph, directory, prefix: str = "graph") -> GraphFiles:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = GraphFiles(directory / f"{prefix}.features")
    write_matrix(files.features, g.features)
    for v, a in enumerate(g.layers):
        p = directory / f"{prefix}.layer{v}"
        write_layer(p, a)
        files.layers.append(p)
    if g.labels is not None:
        files.labels = directory / f"{prefix}.labels"
        write_labels(files.labels, g.labels)
    return files
