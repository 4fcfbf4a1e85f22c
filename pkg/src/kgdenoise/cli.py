"""Command line interface: file plumbing around the library pipeline.

Exit codes: 0 success, 1 usage problems, 2 runtime failures. Results go
to stdout or files under --out-dir; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import diffcore as dc
from . import figures as fg
from . import harness as hn
from . import kgstore as ks
from . import pretrain as pt
from . import subgraph as sg
from .synthetic import SyntheticConfig, write_benchmark


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# dotted config key -> (TrainConfig field, value parser)
CONFIG_KEYS = {
    "task.mode": ("task_mode", str),
    "subgraph.hops": ("k_hops", int),
    "subgraph.max_nodes": ("v_max", int),
    "subgraph.metapath_len": ("metapath_len", int),
    "hidden_dim": ("hidden_dim", int),
    "gcn.layers": ("gcn_layers", int),
    "rgnn.layers": ("rgnn_layers", int),
    "rgnn.self_term": ("rgnn_self_term", _parse_bool),
    "estimator.kind": ("estimator", str),
    "srl.temperature": ("srl_temperature", float),
    "mi.tau": ("tau", float),
    "mi.lambda": ("mi_weight", float),
    "ablate.srl": ("ablate_srl", _parse_bool),
    "ablate.ssp": ("ablate_ssp", _parse_bool),
    "ablate.mi": ("ablate_mi", _parse_bool),
    "pretrain.dim": ("pretrain_dim", int),
    "pretrain.epochs": ("pretrain_epochs", int),
    "pretrain.lr": ("pretrain_lr", float),
    "train.epochs": ("epochs", int),
    "train.batch": ("batch_size", int),
    "train.lr": ("lr", float),
    "train.patience": ("patience", int),
    "train.folds": ("folds", int),
    "train.fold_limit": ("fold_limit", int),
    "train.stop_ce": ("stop_train_ce", float),
    "seed": ("seed", int),
    "precision": ("precision", str),
}
_FIELD_TO_KEY = {field: key for key, (field, _) in CONFIG_KEYS.items()}


def read_config_file(path) -> dict:
    values = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _parse_set_flags(pairs) -> dict:
    values = {}
    for item in pairs:
        if "=" not in item:
            raise UsageError(f"--set needs KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build_config(args) -> hn.TrainConfig:
    """Merge defaults < config file < --set flags < --seed."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    values.update(_parse_set_flags(getattr(args, "set", None) or []))
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    kwargs = {}
    for key, raw in values.items():
        if key not in CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        field, conv = CONFIG_KEYS[key]
        try:
            kwargs[field] = conv(raw)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {exc}")
    try:
        return hn.TrainConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc))


def config_text(cfg: hn.TrainConfig) -> str:
    """Flat key = value echo of the effective config; feedable to --config."""
    lines = []
    for key in sorted(CONFIG_KEYS):
        field, conv = CONFIG_KEYS[key]
        value = getattr(cfg, field)
        if conv is _parse_bool:
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _load_lines(path, what: str):
    try:
        with open(path) as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise RuntimeError(f"cannot read {what}: {exc}")


def _load_graph(args) -> ks.KnowledgeGraph:
    types_lines = None
    if getattr(args, "types", None):
        types_lines = _load_lines(args.types, "types file")
    return ks.parse_triples(_load_lines(args.triples, "triples file"), types_lines)


def _load_smoothing(args):
    if getattr(args, "smoothing", None):
        return ks.parse_smoothing(_load_lines(args.smoothing, "smoothing file"))
    return None


def _load_metapaths(args, kg):
    if getattr(args, "metapaths", None):
        return sg.parse_metapaths(_load_lines(args.metapaths, "metapath file"), kg)
    return None


def _ensure_out_dir(args) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


def _write(path, text: str) -> str:
    with open(path, "w") as fh:
        fh.write(text)
    return str(path)


# ---------------------------------------------------------------------------
# commands


def cmd_pretrain(args) -> int:
    cfg = build_config(args)
    kg = _load_graph(args)
    smoothing = _load_smoothing(args)
    if smoothing is not None:
        kg = ks.smooth_relations(kg, smoothing)
    out = _ensure_out_dir(args)
    pcfg = pt.PretrainConfig(dim=cfg.pretrain_dim, epochs=cfg.pretrain_epochs,
                             lr=cfg.pretrain_lr, seed=hn._sub_seed(cfg.seed, 11),
                             precision=cfg.precision)
    _say(f"pretraining dim={pcfg.dim} for {pcfg.epochs} epochs "
         f"on {len(kg.triples)} triples")
    table, history = pt.pretrain(kg, pcfg)
    ckpt = os.path.join(out, "pretrain.ckpt")
    table.save(ckpt)
    hn.write_jsonl(os.path.join(out, "pretrain_history.jsonl"),
                   [{"epoch": i, "loss": float(v)} for i, v in enumerate(history)])
    _write(os.path.join(out, "config.txt"), config_text(cfg))
    _emit({"checkpoint": ckpt, "entities": table.n_entities,
           "relations": table.n_relations,
           "final_loss": float(history[-1]) if len(history) else None})
    return 0


def _prepare_from_args(args, cfg, kg, dataset):
    smoothing = _load_smoothing(args)
    smoothed = ks.smooth_relations(kg, smoothing) if smoothing is not None else kg
    metapaths = _load_metapaths(args, smoothed)
    table = None
    if getattr(args, "pretrained", None):
        table = pt.EmbeddingTable.load(args.pretrained)
    prepared = hn.prepare(kg, dataset, cfg, smoothing, metapaths=metapaths,
                          table=table)
    return prepared, smoothing, metapaths


def cmd_train(args) -> int:
    cfg = build_config(args)
    kg = _load_graph(args)
    dataset = ks.parse_links(_load_lines(args.links, "links file"), kg,
                             cfg.task_mode)
    prepared, smoothing, _ = _prepare_from_args(args, cfg, kg, dataset)
    out = _ensure_out_dir(args)
    _say(f"training on {len(dataset.examples)} links "
         f"({cfg.folds} folds, jobs={args.jobs})")
    result = hn.train(kg, dataset, cfg, smoothing=smoothing, prepared=prepared,
                      jobs=args.jobs)
    files = {
        "summary_csv": os.path.join(out, "train_summary.csv"),
        "folds_jsonl": os.path.join(out, "train_folds.jsonl"),
        "curves_png": os.path.join(out, "training_curves.png"),
        "pretrain_ckpt": os.path.join(out, "pretrain.ckpt"),
        "config": os.path.join(out, "config.txt"),
    }
    hn.write_summary_csv(files["summary_csv"], hn.train_summary_rows(result))
    hn.write_jsonl(files["folds_jsonl"], hn.train_jsonl_records(result))
    fg.training_figure(result.report.curves, files["curves_png"])
    prepared.table.save(files["pretrain_ckpt"])
    _write(files["config"], config_text(cfg))
    for record, arrays in zip(result.report.fold_records, result.checkpoints):
        path = os.path.join(out, f"fold_{record['fold']}.ckpt")
        dc.save_checkpoint(path, arrays)
        files[f"fold_{record['fold']}_ckpt"] = path
        _say(f"fold {record['fold']}: test auc_roc={record['auc_roc']:.4f} "
             f"best_epoch={record['best_epoch']}")
    _emit({"mean": result.report.mean, "std": result.report.std,
           "folds": len(result.report.fold_records), "files": files})
    return 0


def cmd_eval(args) -> int:
    cfg = build_config(args)
    kg = _load_graph(args)
    dataset = ks.parse_links(_load_lines(args.links, "links file"), kg,
                             cfg.task_mode)
    prepared, _, _ = _prepare_from_args(args, cfg, kg, dataset)
    model = hn.build_model(cfg, prepared, dataset, fold=0)
    model.load_params(args.checkpoint)
    metrics = hn.evaluate_model(model, prepared, dataset.examples, cfg,
                                hn._n_classes(dataset))
    _emit({"metrics": metrics, "examples": len(dataset.examples),
           "checkpoint": args.checkpoint})
    return 0


def cmd_noise_eval(args) -> int:
    cfg = build_config(args)
    kg = _load_graph(args)
    dataset = ks.parse_links(_load_lines(args.links, "links file"), kg,
                             cfg.task_mode)
    smoothing = _load_smoothing(args)
    smoothed = ks.smooth_relations(kg, smoothing) if smoothing is not None else kg
    metapaths = _load_metapaths(args, smoothed)
    try:
        ratios = [float(tok) for tok in args.ratios.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"bad --ratios list: {args.ratios!r}")
    variants = [tok.strip() for tok in args.variants.split(",") if tok.strip()]
    out = _ensure_out_dir(args)
    _say(f"noise sweep kind={args.kind} ratios={ratios} variants={variants} "
         f"reps={args.reps} jobs={args.jobs}")
    result = hn.noise_sweep(kg, dataset, cfg, ratios, args.kind,
                            variants=variants, reps=args.reps,
                            smoothing=smoothing, metapaths=metapaths,
                            jobs=args.jobs)
    files = {
        "summary_csv": os.path.join(out, f"sweep_{args.kind}_summary.csv"),
        "cells_jsonl": os.path.join(out, f"sweep_{args.kind}_cells.jsonl"),
        "figure_png": os.path.join(out, f"noise_{args.kind}.png"),
        "config": os.path.join(out, "config.txt"),
    }
    hn.write_summary_csv(files["summary_csv"], result.rows)
    hn.write_jsonl(files["cells_jsonl"], result.records)
    fg.noise_figure(result.rows, files["figure_png"])
    _write(files["config"], config_text(cfg))
    _emit({"rows": len(result.rows), "files": files})
    return 0


def cmd_extract(args) -> int:
    kg = _load_graph(args)
    smoothing = _load_smoothing(args)
    if smoothing is not None:
        kg = ks.smooth_relations(kg, smoothing)
    try:
        u = kg.entity_ids[args.head]
        v = kg.entity_ids[args.tail]
    except KeyError as exc:
        raise RuntimeError(f"unknown entity {exc}")
    local = sg.extract_local(kg, u, v, args.hops, args.max_nodes, args.seed or 0)
    metapaths = _load_metapaths(args, kg)
    if metapaths is None:
        metapaths = sg.default_metapaths(kg, kg.entity_types[u],
                                         kg.entity_types[v], args.metapath_len)
    semantic = sg.extract_semantic(kg, u, v, metapaths)
    name = kg.entity_names
    _emit({
        "local": {
            "nodes": [name[n] for n in local.nodes],
            "edges": [[name[local.nodes[i]], name[local.nodes[j]]]
                      for i, j in local.observed_edges],
        },
        "semantic": {
            "nodes": [name[n] for n in semantic.nodes],
            "edges": [[name[semantic.nodes[s]], kg.relation_names[r],
                       name[semantic.nodes[d]]]
                      for s, r, d in semantic.edges],
        },
        "metapaths": len(metapaths),
    })
    return 0


def cmd_gradcheck(args) -> int:
    report = hn.gradcheck_run(seed=args.seed or 0)
    print(f"max relative error {report.max_rel_error:.6e} "
          f"worst parameter {report.worst_param} "
          f"({report.n_checked} parameters checked)")
    return 0 if report.max_rel_error < 1e-4 else 2


def cmd_gen_synthetic(args) -> int:
    cfg = SyntheticConfig(n_drugs=args.n_drugs, n_genes=args.n_genes,
                          n_diseases=args.n_diseases, n_links=args.n_links,
                          n_communities=args.n_communities, seed=args.seed or 0)
    paths = write_benchmark(_ensure_out_dir(args), cfg)
    _emit({"files": paths, "entities": cfg.n_drugs + cfg.n_genes + cfg.n_diseases,
           "links": cfg.n_links})
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_config_flags(p) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="shortcut for --set seed=N")


def _add_graph_flags(p, links: bool) -> None:
    p.add_argument("--triples", required=True, help="graph triples TSV")
    p.add_argument("--types", help="entity type TSV (name<TAB>type)")
    p.add_argument("--smoothing", help="relation smoothing TSV")
    if links:
        p.add_argument("--links", required=True, help="task links TSV")
        p.add_argument("--metapaths", help="metapath TSV override")


def build_parser() -> _Parser:
    parser = _Parser(prog="kgdenoise",
                     description="denoising subgraph link prediction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="rotation-embedding pretraining")
    _add_graph_flags(p, links=False)
    _add_config_flags(p)
    p.add_argument("--out-dir", default="kgd_run")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="k-fold training run")
    _add_graph_flags(p, links=True)
    _add_config_flags(p)
    p.add_argument("--pretrained", help="reuse an embedding checkpoint")
    p.add_argument("--out-dir", default="kgd_run")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a link set")
    _add_graph_flags(p, links=True)
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--pretrained", help="embedding checkpoint to reuse")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("noise-eval", help="noise robustness sweep")
    _add_graph_flags(p, links=True)
    _add_config_flags(p)
    p.add_argument("--ratios", default="0,0.25,0.5,0.75",
                   help="comma-separated contamination ratios")
    p.add_argument("--kind", choices=list(hn.NOISE_KINDS), default="structural")
    p.add_argument("--variants", default="full",
                   help="comma-separated subset of " + ",".join(hn.VARIANTS))
    p.add_argument("--reps", type=int, default=1,
                   help="folds trained per (ratio, variant) cell")
    p.add_argument("--out-dir", default="kgd_run")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_noise_eval)

    p = sub.add_parser("extract", help="print both subgraph views for a pair")
    p.add_argument("--triples", required=True)
    p.add_argument("--types")
    p.add_argument("--smoothing")
    p.add_argument("--metapaths")
    p.add_argument("--head", required=True)
    p.add_argument("--tail", required=True)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--max-nodes", type=int, default=16)
    p.add_argument("--metapath-len", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-synthetic", help="write the planted benchmark")
    p.add_argument("--out-dir", default="kgd_run")
    p.add_argument("--n-drugs", type=int, default=36)
    p.add_argument("--n-genes", type=int, default=72)
    p.add_argument("--n-diseases", type=int, default=24)
    p.add_argument("--n-links", type=int, default=160)
    p.add_argument("--n-communities", type=int, default=2)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_synthetic)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(parser.format_usage().strip(), file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
