"""Dense kernels and seeded randomness.

Matrices are plain ``float64`` numpy arrays. Random streams use numpy's
``Generator`` over the PCG64 bit generator, seeded from an integer (or an
integer tuple for substreams), so a given seed reproduces the same sequence
on every platform running the same numpy release.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

EPS_NORM = 1e-12
EPS_STD = 1e-8

Rng = np.random.Generator

# substream tags: make_rng((seed, TAG, ...)) keeps unrelated draws independent
STREAM_GRAPH = 0
STREAM_NOISE = 1
STREAM_INIT = 2
STREAM_EVAL = 3


def make_rng(seed: int | Sequence[int]) -> Rng:
    """PCG64 generator; pass ``(seed, i)`` to get an independent substream."""
    if isinstance(seed, (int, np.integer)):
        seed = [int(seed)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seed))))


def rng_uniform(rng: Rng, n: int) -> np.ndarray:
    return rng.random(n)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between ``u`` and ``v``.

    Returns 0 when either vector has norm below ``EPS_NORM``.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < EPS_NORM or nv < EPS_NORM:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def column_scales(z: np.ndarray) -> np.ndarray:
    """Per-column ``popstd * sqrt(rows)`` with the std floored at ``EPS_STD``."""
    std = np.maximum(z.std(axis=0), EPS_STD)
    return std * np.sqrt(z.shape[0])


def standardize_columns(z) -> np.ndarray:
    """Center each column and scale it to unit Euclidean norm.

    With this scaling ``zhat.T @ zhat`` is the column correlation matrix.
    Constant columns map to zero.
    """
    z = as_matrix(z, "z")
    if z.shape[0] < 2:
        raise ValueError(f"standardize_columns needs at least 2 rows, got {z.shape[0]}")
    return (z - z.mean(axis=0)) / column_scales(z)
