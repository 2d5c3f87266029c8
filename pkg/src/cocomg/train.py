"""Joint full-batch training of the per-layer encoders, fusion and unseen-node inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .graph import PROXIMITY_MODES, MultiplexGraph, ProximityMatrix, SparseAdjacency, high_order, write_matrix
from .loss import LossReport, cca_loss, lp_loss, total_loss
from .model import (
    AdamState,
    GcnEncoder,
    MlpEncoder,
    adam_step,
    encoder_backward,
    encoder_forward,
    gcn_init,
    mlp_init,
    normalized_propagation,
)
from .numerics import STREAM_INIT, as_matrix, make_rng

log = logging.getLogger(__name__)

ENCODER_KINDS = ("mlp", "gcn-baseline")
VARIANTS = ("full", "lp_only", "cca_only")


class TrainingError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``dims`` is the full encoder architecture ``[D, h1, ..., d]``; when ``None``
    it resolves to ``[D, *hidden, out_dim]`` once the feature width is known.
    ``variant`` drops one of the two objectives for ablations.
    """

    dims: tuple[int, ...] | None = None
    hidden: tuple[int, ...] = (256,)
    out_dim: int = 64
    epochs: int = 500
    lr: float = 1e-3
    beta: float = 1.0
    gamma: float = 1.0
    w_mode: str = "two_hop"
    seed: int = 0
    encoder_kind: str = "mlp"
    variant: str = "full"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be >= 0")
        if self.w_mode not in PROXIMITY_MODES:
            raise ValueError(f"w_mode must be one of {PROXIMITY_MODES}")
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    def resolve_dims(self, d_in: int) -> list[int]:
        if self.dims is not None:
            dims = [int(x) for x in self.dims]
            if dims[0] != d_in:
                raise ValueError(f"config dims start at {dims[0]} but features have {d_in} columns")
            return dims
        return [d_in, *self.hidden, self.out_dim]


@dataclass
class TrainedModel:
    encoders: list[MlpEncoder]
    config: TrainConfig
    loss_history: list[LossReport] = field(default_factory=list)


@dataclass(frozen=True)
class EmbeddingSet:
    per_layer: tuple[np.ndarray, ...]
    fused: np.ndarray


def fuse(per_layer: Sequence[np.ndarray]) -> EmbeddingSet:
    per_layer = tuple(per_layer)
    return EmbeddingSet(per_layer, np.mean(np.stack(per_layer), axis=0))


def init_encoders(layers: Sequence[SparseAdjacency], d_in: int, cfg: TrainConfig) -> list[MlpEncoder]:
    dims = cfg.resolve_dims(d_in)
    encs = []
    for v, a in enumerate(layers):
        rng = make_rng((cfg.seed, STREAM_INIT, v))
        encs.append(gcn_init(dims, a, rng) if cfg.encoder_kind == "gcn-baseline" else mlp_init(dims, rng))
    return encs


def _check(value, epoch: int, term: str) -> None:
    if not np.all(np.isfinite(value)):
        raise TrainingError(f"non-finite {term} at epoch {epoch}")


def objective(encoders: Sequence[MlpEncoder], x: np.ndarray, proximities: Sequence[ProximityMatrix],
              cfg: TrainConfig, epoch: int = 0) -> tuple[LossReport, list[dict[str, np.ndarray]]]:
    """Combined loss at the current parameters and its gradient for every encoder."""
    use_lp = cfg.variant != "cca_only"
    beta = 0.0 if cfg.variant == "lp_only" else cfg.beta
    outs = [encoder_forward(enc, x) for enc in encoders]
    zs = [z for z, _ in outs]
    lp_vals, dzs = [], []
    for v, z in enumerate(zs):
        if use_lp:
            val, dz = lp_loss(z, proximities[v])
            _check(val, epoch, f"lp_loss[layer {v}]")
        else:
            val, dz = 0.0, np.zeros_like(z)
        lp_vals.append(val)
        dzs.append(dz)
    inv, dec, cca_grads = cca_loss(zs, cfg.gamma)
    _check(inv, epoch, "cca_invariance")
    _check(dec, epoch, "cca_decorrelation")
    report = total_loss(lp_vals, inv, dec, beta, cfg.gamma)
    grads = []
    for v, (enc, (_, cache)) in enumerate(zip(encoders, outs)):
        dz = dzs[v] + beta * cca_grads[v] if beta else dzs[v]
        grads.append(encoder_backward(enc, cache, dz).as_dict())
    return report, grads


def fit(features: np.ndarray, layers: Sequence[SparseAdjacency], cfg: TrainConfig) -> TrainedModel:
    """Train one encoder per layer on features and structure only (labels never reach here)."""
    x = as_matrix(features, "features")
    encoders = init_encoders(layers, x.shape[1], cfg)
    proximities = [high_order(a, cfg.w_mode) for a in layers]
    states = [AdamState(lr=cfg.lr) for _ in encoders]
    history: list[LossReport] = []
    for epoch in range(cfg.epochs):
        report, grads = objective(encoders, x, proximities, cfg, epoch)
        history.append(report)
        for v, enc in enumerate(encoders):
            try:
                adam_step(enc.parameters(), grads[v], states[v])
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch}, encoder {v}: {exc}") from None
            enc.touch()
        if log.isEnabledFor(logging.DEBUG) and epoch % 50 == 0:
            log.debug("epoch %d total %.6f", epoch, report.total)
    return TrainedModel(encoders, cfg, history)


def train(g: MultiplexGraph, cfg: TrainConfig) -> TrainedModel:
    unlabeled = g.without_labels()
    return fit(unlabeled.features, unlabeled.layers, cfg)


def embed(model: TrainedModel, g: MultiplexGraph) -> EmbeddingSet:
    if len(model.encoders) != g.num_layers:
        raise ValueError(f"model has {len(model.encoders)} encoders, graph has {g.num_layers} layers")
    if g.features.shape[1] != model.encoders[0].dims[0]:
        raise ValueError(f"features have {g.features.shape[1]} columns, encoders expect {model.encoders[0].dims[0]}")
    encs = model.encoders
    if model.config.encoder_kind == "gcn-baseline" and any(
        e.propagation.shape[0] != g.n for e in encs  # type: ignore[attr-defined]
    ):
        encs = rebind_gcn(model, g.layers)
    return fuse(encoder_forward(enc, g.features)[0] for enc in encs)


def rebind_gcn(model: TrainedModel, layers: Sequence[SparseAdjacency]) -> list[GcnEncoder]:
    return [GcnEncoder(e.weights, e.biases, normalized_propagation(a)) for e, a in zip(model.encoders, layers)]


def infer_unseen(model: TrainedModel, x_un) -> EmbeddingSet:
    """Embed unseen nodes from their features alone."""
    if model.config.encoder_kind != "mlp" or any(isinstance(e, GcnEncoder) for e in model.encoders):
        raise TypeError(
            "feature-only inference needs MLP encoders; message-passing encoders would require "
            "rebuilding every graph layer around the unseen nodes"
        )
    x_un = as_matrix(x_un, "x_un")
    if x_un.shape[1] != model.encoders[0].dims[0]:
        raise ValueError(f"x_un has {x_un.shape[1]} columns, encoders expect {model.encoders[0].dims[0]}")
    return fuse(encoder_forward(enc, x_un)[0] for enc in model.encoders)


def with_depth(cfg: TrainConfig, depth: int, width: int) -> TrainConfig:
    return replace(cfg, dims=None, hidden=(width,) * (depth - 1))


def write_embeddings(path, z: np.ndarray) -> None:
    write_matrix(path, z)


def write_loss_log(path, history: Sequence[LossReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch\t" + "\t".join(LossReport.COLUMNS) + "\n")
        for i, r in enumerate(history):
            fh.write(f"{i}\t" + "\t".join(format(v, ".10g") for v in r.row()) + "\n")
