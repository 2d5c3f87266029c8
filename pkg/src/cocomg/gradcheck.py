"""Finite-difference verification of every hand-written gradient.

Each check draws a small random instance, compares the analytic gradient with
central differences entry by entry, and reports the largest relative error.
The ``fault`` argument flips the sign of one component's analytic gradient so
the harness itself can be shown to catch errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph import SparseAdjacency, high_order
from .loss import cca_loss, lp_loss
from .model import encoder_backward, mlp_forward, mlp_init
from .numerics import make_rng
from .train import TrainConfig, objective

COMPONENTS = ("lp_loss", "cca_loss", "mlp_backward", "total_loss")
STEP = 1e-5
TOLERANCE = 1e-4
REL_FLOOR = 1e-6


@dataclass(frozen=True)
class CheckResult:
    component: str
    block: str
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def random_layer(n: int, p: float, rng) -> SparseAdjacency:
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return SparseAdjacency.from_edges(n, np.column_stack([iu[keep], ju[keep]]))


def _instance(seed: int, n: int, v: int, d: int, d_in: int, hidden: int):
    rng = make_rng(seed)
    x = rng.standard_normal((n, d_in))
    layers = [random_layer(n, 0.35, rng) for _ in range(v)]
    encoders = [mlp_init([d_in, hidden, d], rng) for _ in range(v)]
    zs = [rng.standard_normal((n, d)) for _ in range(v)]
    return rng, x, layers, encoders, zs


def run_gradcheck(seed: int = 0, fault: str | None = None, n: int = 12, v: int = 2, d: int = 5,
                  d_in: int = 4, hidden: int = 6) -> list[CheckResult]:
    if fault is not None and fault not in COMPONENTS:
        raise ValueError(f"unknown component {fault!r}; choose from {', '.join(COMPONENTS)}")
    sign = {c: (-1.0 if c == fault else 1.0) for c in COMPONENTS}
    rng, x, layers, encoders, zs = _instance(seed, n, v, d, d_in, hidden)
    results = []

    for i, a in enumerate(layers):
        w = high_order(a, "two_hop")
        z = zs[i].copy()
        _, dz = lp_loss(z, w)
        num = numeric_gradient(lambda: lp_loss(z, w)[0], z)
        results.append(CheckResult("lp_loss", f"layer{i}.dz", relative_error(sign["lp_loss"] * dz, num)))

    gamma = 0.7
    zs_c = [z.copy() for z in zs]
    _, _, grads = cca_loss(zs_c, gamma)
    for i, z in enumerate(zs_c):
        def f():
            inv, dec, _ = cca_loss(zs_c, gamma)
            return inv + gamma * dec
        num = numeric_gradient(f, z)
        results.append(CheckResult("cca_loss", f"view{i}.dz", relative_error(sign["cca_loss"] * grads[i], num)))

    enc = encoders[0].copy()
    probe = rng.standard_normal((n, d))
    xm = x.copy()
    _, cache = mlp_forward(enc, xm)
    g = encoder_backward(enc, cache, probe)
    analytic = {**g.as_dict(), "dx": g.dx}
    targets = {**enc.parameters(), "dx": xm}
    for name, arr in targets.items():
        num = numeric_gradient(lambda: float(np.sum(mlp_forward(enc, xm)[0] * probe)), arr)
        results.append(CheckResult("mlp_backward", name, relative_error(sign["mlp_backward"] * analytic[name], num)))

    cfg = TrainConfig(beta=0.5, gamma=gamma)
    prox = [high_order(a, cfg.w_mode) for a in layers]
    encs = [e.copy() for e in encoders]
    _, grads = objective(encs, x, prox, cfg)
    for i, e in enumerate(encs):
        for name, arr in e.parameters().items():
            num = numeric_gradient(lambda: objective(encs, x, prox, cfg)[0].total, arr)
            results.append(CheckResult("total_loss", f"encoder{i}.{name}",
                                       relative_error(sign["total_loss"] * grads[i][name], num)))
    return results


def summarize(results: list[CheckResult]) -> list[tuple[str, float, str, bool]]:
    """Worst block per component: ``(component, max_rel_err, block, passed)``."""
    rows = []
    for comp in COMPONENTS:
        mine = [r for r in results if r.component == comp]
        if mine:
            worst = max(mine, key=lambda r: r.max_rel_err)
            rows.append((comp, worst.max_rel_err, worst.block, all(r.passed for r in mine)))
    return rows


def format_report(results: list[CheckResult]) -> str:
    lines = ["component\tmax_rel_err\tworst_block\tstatus"]
    for comp, err, block, ok in summarize(results):
        lines.append(f"{comp}\t{err:.3e}\t{block}\t{'pass' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n"
