"""Training objectives with exact gradients.

``lp_loss`` is a weighted softmax over exp-cosine similarities: for every node
``i`` with proximity support, neighbours ``j`` are scored against all other
nodes ``k != i``, and the row-normalized proximity weights average the
log-probabilities. ``cca_loss`` works on column-standardized embeddings: it
rewards per-dimension agreement between every pair of views and penalizes
off-identity correlation inside each view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import ProximityMatrix
from .numerics import EPS_NORM, EPS_STD, as_matrix


def _row_normalize(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1)
    safe = np.where(norms < EPS_NORM, 1.0, norms)
    u = z / safe[:, None]
    u[norms < EPS_NORM] = 0.0
    return u, norms


def lp_loss(z, w: ProximityMatrix) -> tuple[float, np.ndarray]:
    """Local-preserve loss and its gradient w.r.t. ``z``.

    Rows with no proximity support contribute nothing. Zero-norm embedding rows
    have cosine 0 with everything and receive zero gradient.
    """
    z = as_matrix(z, "z")
    n = z.shape[0]
    if n != w.n:
        raise ValueError(f"embedding has {n} rows, proximity has {w.n} nodes")
    if n < 2:
        raise ValueError("lp_loss needs at least 2 nodes")
    what, active = w.row_normalized
    if not active.any():
        return 0.0, np.zeros_like(z)

    u, norms = _row_normalize(z)
    cos = u @ u.T
    s = np.exp(cos)
    np.fill_diagonal(s, 0.0)
    denom = s.sum(axis=1)

    value = float(-(what * cos).sum() + np.log(denom[active]).sum())

    # dL/dcos: -what_ij from the numerators, softmax weights from the log-denominators
    g = s * (active / denom)[:, None]
    g -= what
    du = (g + g.T) @ u
    proj = np.einsum("ij,ij->i", du, u)
    dz = (du - u * proj[:, None]) / np.where(norms < EPS_NORM, 1.0, norms)[:, None]
    dz[norms < EPS_NORM] = 0.0
    return value, dz


def _standardize_with_scale(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = z.shape[0]
    zc = z - z.mean(axis=0)
    std = zc.std(axis=0)
    floored = std < EPS_STD
    scale = np.maximum(std, EPS_STD) * math.sqrt(n)
    return zc / scale, scale, floored


def _standardize_backward(zhat, scale, floored, dzhat) -> np.ndarray:
    # zhat = zc / ||zc|| per column (unless floored, where the scale is constant)
    proj = np.einsum("ij,ij->j", zhat, dzhat)
    proj[floored] = 0.0
    dzc = (dzhat - zhat * proj) / scale
    return dzc - dzc.mean(axis=0)


def cca_loss(zs: Sequence, gamma: float) -> tuple[float, float, list[np.ndarray]]:
    """Return ``(invariance, decorrelation, grads)``.

    ``grads[v]`` is the gradient of ``invariance + gamma * decorrelation``
    w.r.t. ``zs[v]``, backpropagated through the standardization.
    """
    zs = [as_matrix(z, f"zs[{i}]") for i, z in enumerate(zs)]
    if not zs:
        raise ValueError("cca_loss needs at least one view")
    shape = zs[0].shape
    if any(z.shape != shape for z in zs):
        raise ValueError(f"all views must share shape {shape}")
    if shape[0] < 2:
        raise ValueError("cca_loss needs at least 2 rows")
    d = shape[1]
    parts = [_standardize_with_scale(z) for z in zs]
    hats = [p[0] for p in parts]

    total = np.sum(hats, axis=0)
    invariance = -0.5 * (float(np.sum(total * total)) - sum(float(np.sum(h * h)) for h in hats))
    decorrelation = 0.0
    grads = []
    eye = np.eye(d)
    for (zhat, scale, floored) in parts:
        m = zhat.T @ zhat - eye
        decorrelation += float(np.sum(m * m))
        dzhat = -(total - zhat) + gamma * 4.0 * (zhat @ m)
        grads.append(_standardize_backward(zhat, scale, floored, dzhat))
    return invariance, decorrelation, grads


@dataclass(frozen=True)
class LossReport:
    lp_per_layer: tuple[float, ...]
    cca_invariance: float
    cca_decorrelation: float
    total: float
    beta: float
    gamma: float

    COLUMNS = ("lp_total", "cca_invariance", "cca_decorrelation", "total")

    def row(self) -> list[float]:
        return [sum(self.lp_per_layer), self.cca_invariance, self.cca_decorrelation, self.total]


def total_loss(lp_values: Sequence[float], invariance: float, decorrelation: float, beta: float, gamma: float) -> LossReport:
    lp = tuple(float(x) for x in lp_values)
    terms = {"lp": lp, "cca_invariance": invariance, "cca_decorrelation": decorrelation, "beta": beta, "gamma": gamma}
    for name, val in terms.items():
        if not np.all(np.isfinite(val)):
            raise FloatingPointError(f"non-finite {name}: {val}")
    total = sum(lp) + beta * (invariance + gamma * decorrelation)
    return LossReport(lp, float(invariance), float(decorrelation), float(total), float(beta), float(gamma))
