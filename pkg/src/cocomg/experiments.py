"""Protocol runners shared by the CLI and the acceptance suite.

Every run is keyed by an integer seed. The seed picks the synthetic graph, the
noise draws, the encoder initialization and the evaluation splits through
separate substreams, so results are reproducible run to run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .graph import MultiplexGraph, SbmConfig, inject_noise_multiplex, oos_split, synth_multiplex_sbm
from .metrics import Partition, clustering_accuracy, kmeans, linear_probe, nmi, silhouette
from .numerics import STREAM_EVAL, STREAM_GRAPH, make_rng, standardize_columns
from .train import TrainConfig, embed, infer_unseen, train, with_depth


def sbm_sample(cfg: SbmConfig, seed: int):
    """Graph and merge plan for one seed."""
    return synth_multiplex_sbm(cfg, make_rng((seed, STREAM_GRAPH)))


def sbm_graph(cfg: SbmConfig, seed: int) -> MultiplexGraph:
    return sbm_sample(cfg, seed)[0]


def _num_classes(labels: np.ndarray) -> int:
    return len(np.unique(labels))


def _maybe_normalize(z: np.ndarray, normalize: bool) -> np.ndarray:
    if not normalize:
        return z
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z / np.where(norms > 0, norms, 1.0)


def evaluate_clustering(z, labels, seed: int, normalize: bool = False) -> dict[str, float]:
    """k-means with one cluster per class; silhouette is of the true classes."""
    z = _maybe_normalize(np.asarray(z, dtype=np.float64), normalize)
    labels = np.asarray(labels)
    p = kmeans(z, _num_classes(labels), make_rng((seed, STREAM_EVAL, 0)))
    out = {"accuracy": clustering_accuracy(p, labels), "nmi": nmi(p, labels)}
    if _num_classes(labels) >= 2:
        out["silhouette"] = silhouette(z, Partition.from_labels(labels))
    return out


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    perm = make_rng((seed, STREAM_EVAL, 1)).permutation(n)
    n_train = max(1, min(n - 1, int(round(train_fraction * n))))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def evaluate_classification(z, labels, seed: int, train_fraction: float = 0.2,
                            normalize: bool = False) -> dict[str, float]:
    z = _maybe_normalize(np.asarray(z, dtype=np.float64), normalize)
    labels = np.asarray(labels)
    tr, te = split_indices(len(z), train_fraction, seed)
    return linear_probe(z[tr], labels[tr], z[te], labels[te])


def decorrelation_ratio(z: np.ndarray) -> float:
    """``||Zhat^T Zhat - I||_F / d`` for one embedding matrix."""
    zh = standardize_columns(z)
    return float(np.linalg.norm(zh.T @ zh - np.eye(z.shape[1])) / z.shape[1])


# --- complementary information --------------------------------------------


@dataclass(frozen=True)
class ComplementaryResult:
    seed: int
    fused_nmi: float
    layer_nmi: tuple[float, ...]
    decorrelation: tuple[float, ...]


def complementary_run(sbm: SbmConfig, cfg: TrainConfig, seed: int) -> ComplementaryResult:
    g = sbm_graph(sbm, seed)
    model = train(g, replace(cfg, seed=seed))
    emb = embed(model, g)
    fused = evaluate_clustering(emb.fused, g.labels, seed)["nmi"]
    layers = tuple(evaluate_clustering(z, g.labels, seed)["nmi"] for z in emb.per_layer)
    return ComplementaryResult(seed, fused, layers, tuple(decorrelation_ratio(z) for z in emb.per_layer))


# --- noise robustness / ablation ------------------------------------------

NOISE_COLUMNS = ("eta", "variant", "nmi", "nmi_std", "accuracy", "macro_f1", "micro_f1")


def noise_sweep(sbm: SbmConfig, cfg: TrainConfig, etas: Sequence[float], seeds: Sequence[int],
                variants: Sequence[str] = ("full", "lp_only", "cca_only"),
                train_fraction: float = 0.2) -> list[dict]:
    """One row per ``(eta, variant)``, metrics averaged over seeds."""
    per: dict[tuple[float, str], list[dict[str, float]]] = {}
    for seed in seeds:
        g = sbm_graph(sbm, seed)
        for eta in etas:
            noisy = inject_noise_multiplex(g, eta, seed) if eta > 0 else g
            for variant in variants:
                model = train(noisy, replace(cfg, seed=seed, variant=variant))
                z = embed(model, noisy).fused
                m = evaluate_clustering(z, g.labels, seed)
                m.update(evaluate_classification(z, g.labels, seed, train_fraction))
                per.setdefault((eta, variant), []).append(m)
    rows = []
    for eta in etas:
        for variant in variants:
            ms = per[(eta, variant)]
            nmis = [m["nmi"] for m in ms]
            rows.append({
                "eta": eta,
                "variant": variant,
                "nmi": float(np.mean(nmis)),
                "nmi_std": float(np.std(nmis)),
                "accuracy": float(np.mean([m["accuracy"] for m in ms])),
                "macro_f1": float(np.mean([m["macro_f1"] for m in ms])),
                "micro_f1": float(np.mean([m["micro_f1"] for m in ms])),
            })
    return rows


# --- out-of-sample --------------------------------------------------------

OOS_COLUMNS = ("ratio", "seed", "n_seen", "n_unseen", "seen_macro_f1", "seen_micro_f1",
               "unseen_macro_f1", "unseen_micro_f1", "infer_ms")


def oos_run(g: MultiplexGraph, cfg: TrainConfig, ratio: float, seed: int, train_fraction: float = 0.2,
            trainer: Callable = train, infer: Callable = infer_unseen) -> dict:
    """Train on seen nodes only, then embed the held-out nodes from features.

    The probe is fit on seen nodes; its seen-test set has the same size as the
    unseen set (capped at half the seen nodes). ``infer_ms`` times only the
    unseen-node inference call.
    """
    split = oos_split(g, ratio, make_rng((seed, STREAM_EVAL, 2)))
    model = trainer(split.train_graph, replace(cfg, seed=seed))
    z_seen = embed(model, split.train_graph).fused
    y_seen = split.train_graph.labels
    n_seen, n_unseen = len(split.seen_index), len(split.unseen_index)
    row = {"ratio": ratio, "seed": seed, "n_seen": n_seen, "n_unseen": n_unseen}

    if n_unseen == 0:
        row.update(evaluate_classification(z_seen, y_seen, seed, train_fraction))
        row = {**row, "seen_macro_f1": row.pop("macro_f1"), "seen_micro_f1": row.pop("micro_f1")}
        row.update({"unseen_macro_f1": None, "unseen_micro_f1": None, "infer_ms": None})
        return row

    t0 = time.perf_counter()
    z_unseen = infer(model, split.unseen_features).fused
    row["infer_ms"] = (time.perf_counter() - t0) * 1000.0

    perm = make_rng((seed, STREAM_EVAL, 3)).permutation(n_seen)
    n_test = min(n_unseen, n_seen // 2)
    test, fit = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    seen = linear_probe(z_seen[fit], y_seen[fit], z_seen[test], y_seen[test])
    unseen = linear_probe(z_seen[fit], y_seen[fit], z_unseen, split.unseen_labels)
    row.update({
        "seen_macro_f1": seen["macro_f1"], "seen_micro_f1": seen["micro_f1"],
        "unseen_macro_f1": unseen["macro_f1"], "unseen_micro_f1": unseen["micro_f1"],
    })
    return row


def oos_experiment(sbm: SbmConfig, cfg: TrainConfig, ratios: Sequence[float], seeds: Sequence[int],
                   train_fraction: float = 0.2, **kw) -> list[dict]:
    """Per-seed rows followed by one aggregate row (``seed = "mean"``) per ratio."""
    rows = []
    for ratio in ratios:
        runs = [oos_run(sbm_graph(sbm, s), cfg, ratio, s, train_fraction, **kw) for s in seeds]
        rows.extend(runs)
        agg = {"ratio": ratio, "seed": "mean"}
        for col in OOS_COLUMNS[2:]:
            vals = [r[col] for r in runs if r[col] is not None]
            agg[col] = float(np.mean(vals)) if vals else None
        rows.append(agg)
    return rows


# --- depth / over-smoothing -----------------------------------------------

DEPTH_COLUMNS = ("depth", "encoder_kind", "nmi", "accuracy", "micro_f1")


def depth_sweep(sbm: SbmConfig, cfg: TrainConfig, depths: Sequence[int], seeds: Sequence[int],
                width: int = 64, kinds: Iterable[str] = ("mlp", "gcn-baseline"),
                train_fraction: float = 0.2) -> list[dict]:
    graphs = {s: sbm_graph(sbm, s) for s in seeds}
    rows = []
    for depth in depths:
        for kind in kinds:
            ms = []
            for s, g in graphs.items():
                c = replace(with_depth(cfg, depth, width), seed=s, encoder_kind=kind)
                z = embed(train(g, c), g).fused
                m = evaluate_clustering(z, g.labels, s)
                m.update(evaluate_classification(z, g.labels, s, train_fraction))
                ms.append(m)
            rows.append({
                "depth": depth,
                "encoder_kind": kind,
                "nmi": float(np.mean([m["nmi"] for m in ms])),
                "accuracy": float(np.mean([m["accuracy"] for m in ms])),
                "micro_f1": float(np.mean([m["micro_f1"] for m in ms])),
            })
    return rows


def format_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    """TSV with a header row; ``None`` prints as ``-``; floats get 6 decimals."""

    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.6f}"
        return str(v)

    out = ["\t".join(columns)]
    for r in rows:
        out.append("\t".join(cell(r.get(c)) for c in columns))
    return "\n".join(out) + "\n"
