"""``cocomg`` command-line entry point.

Configuration is flat ``key=value`` text, one pair per line with ``#``
comments, read from ``--config`` and then overridden by any ``key=value``
arguments after the subcommand. Every run writes its fully resolved config to
``<out>/<command>.config``. Tables go to stdout and to a TSV file in the output
directory; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import experiments as ex
from .gradcheck import COMPONENTS, format_report, run_gradcheck, summarize
from .graph import PROXIMITY_MODES, MultiplexGraph, SbmConfig, load_multiplex, read_features, read_labels, write_multiplex, write_plan
from .metrics import format_metrics
from .model import load_encoder, save_encoder
from .train import ENCODER_KINDS, VARIANTS, TrainConfig, TrainedModel, embed, train, write_embeddings, write_loss_log

log = logging.getLogger("cocomg")


# --- typed config keys ----------------------------------------------------


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _list(item: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse(s: str) -> tuple:
        parts = [p.strip() for p in s.split(",") if p.strip()]
        if not parts:
            raise ValueError("expected a comma-separated list")
        return tuple(item(p) for p in parts)
    return parse


def _float_or_list(s: str):
    vals = _list(float)(s)
    return vals[0] if len(vals) == 1 else vals


def _choice(options: tuple[str, ...]) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return parse


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


_SBM, _TRAIN = SbmConfig(), TrainConfig()

KEYS: dict[str, Key] = {
    # synthetic multiplex SBM
    "n": Key(int, _SBM.n, "number of nodes"),
    "k": Key(int, _SBM.k, "number of planted blocks"),
    "v": Key(int, _SBM.v, "number of layers"),
    "d_feat": Key(int, _SBM.d_feat, "feature dimension"),
    "p_in": Key(_float_or_list, _SBM.p_in, "within-block edge probability (scalar or per layer)"),
    "p_out": Key(_float_or_list, _SBM.p_out, "between-block edge probability (scalar or per layer)"),
    "feature_noise": Key(float, _SBM.feature_noise, "feature noise std"),
    "mean_scale": Key(float, _SBM.mean_scale, "std of the per-block feature means"),
    "complementary": Key(_bool, _SBM.complementary, "each layer merges some blocks"),
    # training
    "dims": Key(_list(int), _TRAIN.dims, "explicit encoder dims D,h1,...,d"),
    "hidden": Key(_list(int), _TRAIN.hidden, "hidden widths"),
    "out_dim": Key(int, _TRAIN.out_dim, "embedding dimension"),
    "epochs": Key(int, _TRAIN.epochs, "training epochs"),
    "lr": Key(float, _TRAIN.lr, "Adam learning rate"),
    "beta": Key(float, _TRAIN.beta, "weight of the correlation objective"),
    "gamma": Key(float, _TRAIN.gamma, "weight of the decorrelation term"),
    "w_mode": Key(_choice(PROXIMITY_MODES), _TRAIN.w_mode, "proximity matrix"),
    "encoder_kind": Key(_choice(ENCODER_KINDS), _TRAIN.encoder_kind, "encoder type"),
    "variant": Key(_choice(VARIANTS), _TRAIN.variant, "objective variant"),
    "seed": Key(int, _TRAIN.seed, "seed for graph generation, initialization and evaluation"),
    # experiments
    "seeds": Key(_list(int), None, "seed list for repeated runs (per-command default)"),
    "etas": Key(_list(float), (0.0, 0.1, 0.3, 0.5, 0.7, 0.9), "noisy-edge ratios"),
    "variants": Key(_list(_choice(VARIANTS)), VARIANTS, "variants in the noise sweep"),
    "oos_ratios": Key(_list(float), (0.1, 0.2, 0.3, 0.4, 0.5), "held-out node ratios"),
    "depths": Key(_list(int), (1, 2, 4, 8, 12, 16), "encoder depths"),
    "depth_width": Key(int, 64, "hidden width in the depth sweep"),
    "depth_kinds": Key(_list(_choice(ENCODER_KINDS)), ENCODER_KINDS, "encoder kinds in the depth sweep"),
    "train_fraction": Key(float, 0.2, "labelled fraction for the linear probe"),
    "normalize": Key(_bool, False, "L2-normalize embedding rows before evaluation"),
    # files
    "features": Key(Path, None, "features file; unset means generate a synthetic graph"),
    "layers": Key(_list(Path), None, "comma-separated layer edge files"),
    "labels": Key(Path, None, "labels file"),
    "embeddings": Key(Path, None, "embedding matrix file for the eval commands"),
    "model_dir": Key(Path, None, "directory holding encoder*.txt for embed"),
}

DEFAULT_SEEDS = {"noise-sweep": (0, 1, 2, 3, 4), "oos": (0, 1, 2, 3, 4), "depth-sweep": (0, 1, 2)}


class ConfigError(ValueError):
    pass


def parse_pairs(lines, source: str) -> dict[str, Any]:
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}; valid keys: {', '.join(KEYS)}")
        if value == "":
            out[key] = None
            continue
        try:
            out[key] = KEYS[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve_config(path: Path | None, overrides: list[str], seed: int | None, command: str) -> dict[str, Any]:
    cfg = {k: key.default for k, key in KEYS.items()}
    if path is not None:
        cfg.update(parse_pairs(Path(path).read_text(encoding="utf-8").splitlines(), str(path)))
    cfg.update(parse_pairs(overrides, "command line"))
    if seed is not None:
        cfg["seed"] = seed
        cfg["seeds"] = (seed,)
    if cfg["seeds"] is None:
        cfg["seeds"] = DEFAULT_SEEDS.get(command, (cfg["seed"],))
    return cfg


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    return str(value)


def write_resolved(cfg: dict[str, Any], out: Path, command: str) -> None:
    lines = [f"# resolved configuration for {command}"]
    lines += [f"{k}={_render(v)}" for k, v in cfg.items()]
    (out / f"{command}.config").write_text("\n".join(lines) + "\n", encoding="utf-8")


def sbm_config(cfg) -> SbmConfig:
    sbm = SbmConfig(**{f.name: cfg[f.name] for f in fields(SbmConfig)})
    sbm.validate()
    return sbm


def train_config(cfg) -> TrainConfig:
    return TrainConfig(**{f.name: cfg[f.name] for f in fields(TrainConfig)})


def load_graph(cfg) -> MultiplexGraph:
    """The graph named by ``features``/``layers``/``labels``, or a synthetic one."""
    if cfg["features"] is None:
        if cfg["layers"] is not None:
            raise ConfigError("layers given without features")
        return ex.sbm_graph(sbm_config(cfg), cfg["seed"])
    if not cfg["layers"]:
        raise ConfigError("features given without layers")
    return load_multiplex(cfg["features"], cfg["layers"], cfg["labels"])


def _emit(text: str, path: Path) -> None:
    path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _require(cfg, key: str, command: str):
    if cfg[key] is None:
        raise ConfigError(f"{command} needs {key}=PATH")
    return cfg[key]


# --- commands -------------------------------------------------------------


def cmd_synth(cfg, out: Path) -> int:
    sbm = sbm_config(cfg)
    g, plan = ex.sbm_sample(sbm, cfg["seed"])
    files = write_multiplex(g, out, "graph")
    write_plan(out / "graph.plan", sbm.k, plan)
    for p in [files.features, *files.layers, files.labels, out / "graph.plan"]:
        sys.stdout.write(f"{p}\n")
    return 0


def cmd_train(cfg, out: Path) -> int:
    g = load_graph(cfg)
    model = train(g, train_config(cfg))
    for v, enc in enumerate(model.encoders):
        save_encoder(out / f"encoder{v}.txt", enc)
    write_loss_log(out / "loss.tsv", model.loss_history)
    _write_embedding_set(embed(model, g), out)
    if model.loss_history:
        log.info("final total loss %.6f", model.loss_history[-1].total)
    return 0


def _write_embedding_set(emb, out: Path) -> None:
    write_embeddings(out / "embeddings.txt", emb.fused)
    for v, z in enumerate(emb.per_layer):
        write_embeddings(out / f"embeddings.layer{v}.txt", z)
    sys.stdout.write(f"{out / 'embeddings.txt'}\n")


def cmd_embed(cfg, out: Path) -> int:
    model_dir = _require(cfg, "model_dir", "embed")
    g = load_graph(cfg)
    encoders = [load_encoder(Path(model_dir) / f"encoder{v}.txt", a) for v, a in enumerate(g.layers)]
    kinds = {e.kind for e in encoders}
    if len(kinds) != 1:
        raise ConfigError(f"{model_dir}: mixed encoder kinds {sorted(kinds)}")
    kind = "gcn-baseline" if kinds == {"gcn"} else "mlp"
    model = TrainedModel(encoders, TrainConfig(encoder_kind=kind))
    _write_embedding_set(embed(model, g), out)
    return 0


def _eval(cfg, out: Path, command: str, fn, filename: str) -> int:
    z = read_features(_require(cfg, "embeddings", command))
    y = read_labels(_require(cfg, "labels", command), z.shape[0])
    seeds = cfg["seeds"]
    per_seed = [fn(z, y, s) for s in seeds]
    if len(seeds) == 1:
        _emit(format_metrics(per_seed[0]), out / filename)
        return 0
    names = list(per_seed[0])
    rows = [{"seed": s, **m} for s, m in zip(seeds, per_seed)]
    stacked = np.array([[m[k] for k in names] for m in per_seed])
    rows.append({"seed": "mean", **dict(zip(names, stacked.mean(axis=0).tolist()))})
    rows.append({"seed": "std", **dict(zip(names, stacked.std(axis=0).tolist()))})
    _emit(ex.format_table(rows, ["seed", *names]), out / filename)
    return 0


def cmd_eval_cluster(cfg, out: Path) -> int:
    def fn(z, y, s):
        return ex.evaluate_clustering(z, y, s, normalize=cfg["normalize"])
    return _eval(cfg, out, "eval-cluster", fn, "metrics_cluster.tsv")


def cmd_eval_classify(cfg, out: Path) -> int:
    def fn(z, y, s):
        return ex.evaluate_classification(z, y, s, cfg["train_fraction"], normalize=cfg["normalize"])
    return _eval(cfg, out, "eval-classify", fn, "metrics_classify.tsv")


def cmd_noise_sweep(cfg, out: Path) -> int:
    rows = ex.noise_sweep(sbm_config(cfg), train_config(cfg), cfg["etas"], cfg["seeds"],
                          cfg["variants"], cfg["train_fraction"])
    _emit(ex.format_table(rows, ex.NOISE_COLUMNS), out / "noise.tsv")
    return 0


def cmd_oos(cfg, out: Path) -> int:
    if cfg["features"] is not None:
        raise ConfigError("oos runs on synthetic graphs generated per seed; unset features")
    rows = ex.oos_experiment(sbm_config(cfg), train_config(cfg), cfg["oos_ratios"], cfg["seeds"],
                             cfg["train_fraction"])
    _emit(ex.format_table(rows, ex.OOS_COLUMNS), out / "oos.tsv")
    return 0


def cmd_depth_sweep(cfg, out: Path) -> int:
    rows = ex.depth_sweep(sbm_config(cfg), train_config(cfg), cfg["depths"], cfg["seeds"],
                          cfg["depth_width"], cfg["depth_kinds"], cfg["train_fraction"])
    _emit(ex.format_table(rows, ex.DEPTH_COLUMNS), out / "depth.tsv")
    return 0


def cmd_gradcheck(cfg, out: Path, fault: str | None = None) -> int:
    results = run_gradcheck(seed=cfg["seed"], fault=fault)
    _emit(format_report(results), out / "gradcheck.tsv")
    failed = [(comp, block) for comp, _, block, ok in summarize(results) if not ok]
    for comp, block in failed:
        print(f"gradient check failed: {comp} (worst block {block})", file=sys.stderr)
    return 1 if failed else 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "embed": cmd_embed,
    "eval-classify": cmd_eval_classify,
    "eval-cluster": cmd_eval_cluster,
    "noise-sweep": cmd_noise_sweep,
    "oos": cmd_oos,
    "depth-sweep": cmd_depth_sweep,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cocomg", description="Multiplex graph representation learning.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key=value config file")
        p.add_argument("--seed", type=int, help="overrides seed (and seeds) from the config")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
        p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")
        if name == "gradcheck":
            p.add_argument("--inject-fault", choices=COMPONENTS,
                           help="flip the sign of one analytic gradient to test the harness")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args.config, args.overrides, args.seed, args.command)
        args.out.mkdir(parents=True, exist_ok=True)
        write_resolved(cfg, args.out, args.command)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.out, args.inject_fault)
        return COMMANDS[args.command](cfg, args.out)
    except OSError as exc:
        where = f": {exc.filename}" if exc.filename else ""
        print(f"cocomg {args.command}: error: {exc.strerror or exc}{where}", file=sys.stderr)
    except (ValueError, TypeError, FloatingPointError) as exc:
        print(f"cocomg {args.command}: error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
