"""Per-layer encoders with hand-written backprop, plus Adam.

Hidden layers use ``tanh``; the final layer is linear. The GCN encoder keeps the
same parameter layout but left-multiplies every layer's input by the
symmetric-normalized adjacency ``D^-1/2 (A + I) D^-1/2``; it exists only as a
comparison baseline.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graph import SparseAdjacency
from .numerics import Rng, as_matrix

_ids = itertools.count()


class StaleCacheError(RuntimeError):
    pass


class MlpEncoder:
    kind = "mlp"

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64).ravel() for b in biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input dim {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")
        self.uid = next(_ids)
        self.version = 0

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def depth(self) -> int:
        return len(self.weights)

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def touch(self) -> None:
        """Mark parameters as modified; outstanding caches become stale."""
        self.version += 1

    def copy(self) -> "MlpEncoder":
        return MlpEncoder(self.weights, self.biases)


class GcnEncoder(MlpEncoder):
    kind = "gcn"

    def __init__(self, weights, biases, propagation: sp.spmatrix):
        super().__init__(weights, biases)
        self.propagation = sp.csr_matrix(propagation)

    def copy(self) -> "GcnEncoder":
        return GcnEncoder(self.weights, self.biases, self.propagation)


def normalized_propagation(a: SparseAdjacency) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with degrees taken from ``A + I``."""
    m = a.to_csr() + sp.identity(a.n, format="csr")
    deg = np.asarray(m.sum(axis=1)).ravel()
    inv = sp.diags(1.0 / np.sqrt(deg))
    return sp.csr_matrix(inv @ m @ inv)


def glorot_params(dims: Sequence[int], rng: Rng) -> tuple[list[np.ndarray], list[np.ndarray]]:
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"dims must list at least two positive sizes, got {dims}")
    ws, bs = [], []
    for din, dout in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (din + dout))
        ws.append(rng.uniform(-bound, bound, size=(din, dout)))
        bs.append(np.zeros(dout))
    return ws, bs


def mlp_init(dims: Sequence[int], rng: Rng) -> MlpEncoder:
    return MlpEncoder(*glorot_params(dims, rng))


def gcn_init(dims: Sequence[int], adjacency: SparseAdjacency, rng: Rng) -> GcnEncoder:
    return GcnEncoder(*glorot_params(dims, rng), normalized_propagation(adjacency))


@dataclass
class ForwardCache:
    x: np.ndarray
    inputs: list[np.ndarray]  # per layer, the (propagated) input multiplied by W
    pre: list[np.ndarray]
    post: list[np.ndarray]
    encoder_uid: int
    encoder_version: int


@dataclass
class Gradients:
    dW: list[np.ndarray]
    db: list[np.ndarray]
    dx: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.dW, self.db)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out


def _forward(enc: MlpEncoder, x, propagation) -> tuple[np.ndarray, ForwardCache]:
    x = as_matrix(x, "x")
    if x.shape[1] != enc.dims[0]:
        raise ValueError(f"input has {x.shape[1]} columns, encoder expects {enc.dims[0]}")
    if propagation is not None and propagation.shape[0] != x.shape[0]:
        raise ValueError(f"propagation matrix is {propagation.shape[0]}-node, input has {x.shape[0]} rows")
    h = x
    inputs, pre, post = [], [], []
    last = enc.depth - 1
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        if propagation is not None:
            h = propagation @ h
        inputs.append(h)
        a = h @ w + b
        pre.append(a)
        h = a if i == last else np.tanh(a)
        post.append(h)
    return h, ForwardCache(x, inputs, pre, post, enc.uid, enc.version)


def mlp_forward(enc: MlpEncoder, x) -> tuple[np.ndarray, ForwardCache]:
    """Embed the rows of ``x``; rows are processed independently."""
    return _forward(enc, x, None)


def gcn_forward(enc: GcnEncoder, x) -> tuple[np.ndarray, ForwardCache]:
    return _forward(enc, x, enc.propagation)


def encoder_forward(enc: MlpEncoder, x) -> tuple[np.ndarray, ForwardCache]:
    if isinstance(enc, GcnEncoder):
        return gcn_forward(enc, x)
    return mlp_forward(enc, x)


def encoder_backward(enc: MlpEncoder, cache: ForwardCache, dz) -> Gradients:
    """Gradients of ``<dz, z>`` w.r.t. every weight, bias and the input."""
    if cache.encoder_uid != enc.uid or cache.encoder_version != enc.version:
        raise StaleCacheError("forward cache does not belong to the current encoder parameters")
    dz = as_matrix(dz, "dz")
    if dz.shape != cache.post[-1].shape:
        raise ValueError(f"dz has shape {dz.shape}, forward output was {cache.post[-1].shape}")
    prop = enc.propagation if isinstance(enc, GcnEncoder) else None
    dW: list[np.ndarray] = [None] * enc.depth  # type: ignore[list-item]
    db: list[np.ndarray] = [None] * enc.depth  # type: ignore[list-item]
    g = dz
    for i in range(enc.depth - 1, -1, -1):
        if i != enc.depth - 1:
            g = g * (1.0 - cache.post[i] ** 2)
        dW[i] = cache.inputs[i].T @ g
        db[i] = g.sum(axis=0)
        g = g @ enc.weights[i].T
        if prop is not None:
            g = prop.T @ g
    return Gradients(dW, db, g)


mlp_backward = encoder_backward


# --- Adam -----------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name, g in grads.items():
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# --- serialization --------------------------------------------------------


def save_encoder(path, enc: MlpEncoder) -> None:
    """Text format: ``MLP L d0 .. dL`` header, then per layer its weight rows and a bias line."""
    tag = "GCN" if isinstance(enc, GcnEncoder) else "MLP"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{tag} {enc.depth} " + " ".join(map(str, enc.dims)) + "\n")
        for w, b in zip(enc.weights, enc.biases):
            for row in w:
                fh.write(" ".join(format(v, ".17g") for v in row) + "\n")
            fh.write(" ".join(format(v, ".17g") for v in b) + "\n")


def load_encoder(path, adjacency: SparseAdjacency | None = None) -> MlpEncoder:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    tag, depth = head[0], int(head[1])
    dims = [int(t) for t in head[2:]]
    if tag not in ("MLP", "GCN") or len(dims) != depth + 1:
        raise ValueError(f"{path}: malformed encoder header")
    pos = 1
    ws, bs = [], []
    for din, dout in zip(dims[:-1], dims[1:]):
        ws.append(np.array([[float(t) for t in lines[pos + r].split()] for r in range(din)]).reshape(din, dout))
        pos += din
        bs.append(np.array([float(t) for t in lines[pos].split()]).reshape(dout))
        pos += 1
    if tag == "GCN":
        if adjacency is None:
            raise ValueError("a GCN encoder needs its layer adjacency to be rebuilt")
        return GcnEncoder(ws, bs, normalized_propagation(adjacency))
    return MlpEncoder(ws, bs)
