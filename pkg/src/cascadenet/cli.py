"""Command-line entry point: ``cascadenet <command> [options]``.

Stage commands read and write artifacts in ``--workdir`` so they can be
chained (build-graph -> partition -> build-hypergraph -> featurize -> train
-> evaluate); ``pipeline`` runs everything with repeated trials.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import build_run_config, build_synthetic_spec, read_kv_file
from .features import FeatureMatrix
from .hypergraph import CascadeHypergraph, hypergraph_stats
from .ingest import SocialGraph, UserIndex, build_social_graph, parse_interactions, social_graph_stats
from .model import evaluate, load_checkpoint, save_checkpoint, train
from .partition import Partition
from .synthetic import generate_synthetic

log = logging.getLogger("cascadenet")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat key=value file overriding defaults")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="single override (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workdir")
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--interactions")
    p.add_argument("--cascades")
    p.add_argument("--users")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="cascadenet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic planted-partition dataset") \
        .add_argument("--out", help="output directory (default: <workdir>/data)")
    sub.add_parser("build-graph", parents=[common], help="interactions -> social graph")
    p = sub.add_parser("partition", parents=[common], help="social graph -> user clusters")
    p.add_argument("--k", type=int)
    p.add_argument("--partitioner", choices=("multilevel", "louvain"))
    sub.add_parser("build-hypergraph", parents=[common], help="clusters + cascades -> hypergraph")
    sub.add_parser("featurize", parents=[common], help="cascades -> PCA feature matrix")
    p = sub.add_parser("train", parents=[common], help="train one model on a random split")
    p.add_argument("--trial", type=int, default=0)
    sub.add_parser("evaluate", parents=[common], help="score the trained model on its test split")
    sub.add_parser("pipeline", parents=[common], help="all stages plus repeated trials")
    p = sub.add_parser("ablation", parents=[common], help="sweep layers, train fraction or k")
    p.add_argument("--axis", choices=pl.AXES, required=True)
    p.add_argument("--values", help="comma-separated values (default: the sweep list from the config)")
    return parser


def _overrides(args) -> dict[str, str]:
    out = read_kv_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for key in ("seed", "workdir", "interactions", "cascades", "users"):
        val = getattr(args, key)
        if val is not None:
            out[key] = str(val)
    if getattr(args, "k", None) is not None:
        out["k_clusters"] = str(args.k)
    if getattr(args, "partitioner", None):
        out["partitioner"] = args.partitioner
    return out


def _emit(obj, fmt: str, table: str | None = None) -> None:
    if fmt == "table" and table is not None:
        sys.stdout.write(table)
    elif fmt == "table":
        for k, v in _flatten(obj):
            sys.stdout.write(f"{k:<40} {v}\n")
    else:
        sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}{k}.")
    else:
        yield prefix.rstrip("."), obj


def _need(cfg, *names):
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        raise ValueError(f"missing input path(s): {', '.join('--' + n for n in missing)}")


def cmd_synth(args, overrides):
    spec = build_synthetic_spec(overrides)
    out = Path(args.out) if args.out else Path(overrides.get("workdir", "work")) / "data"
    paths = generate_synthetic(spec).write(out)
    return {"spec": dataclasses.asdict(spec), **{k: str(v) for k, v in paths.items()}}, None


def cmd_build_graph(args, cfg, wd: Path):
    with pl.stage("ingest"):
        _need(cfg, "interactions")
        users = UserIndex()
        records = parse_interactions(cfg.interactions, users)
        g = build_social_graph(records, len(users))
        users.save(wd / "users.json")
        g.dump(wd / "graph.txt")
    stats = social_graph_stats(g)
    stats["malformed_lines"] = records.malformed_count
    stats["unknown_kinds"] = records.unknown_kind_count
    return stats, None


def cmd_partition(args, cfg, wd: Path):
    with pl.stage("partition"):
        g = SocialGraph.load(wd / "graph.txt")
    part = pl.make_partition(g, cfg)
    part.dump(wd / "partition.txt", wd / "partition.json")
    return part.summary(), None


def cmd_build_hypergraph(args, cfg, wd: Path):
    with pl.stage("build-hypergraph"):
        _need(cfg, "interactions", "cascades")
        part = Partition.load(wd / "partition.txt", wd / "partition.json")
    prep = pl.prepare(cfg, with_features=False)
    h = pl.make_hypergraph(prep, part, cfg)
    h.dump(wd / "hypergraph.txt", wd / "labels.txt")
    return {**hypergraph_stats(h), "skipped_users": h.info.get("skipped_users", 0)}, None


def cmd_featurize(args, cfg, wd: Path):
    with pl.stage("featurize"):
        _need(cfg, "interactions", "cascades")
    prep = pl.prepare(cfg, with_features=True)
    prep.features.save(wd / "features.npz")
    return {"M": prep.features.shape[0], "D_pca": prep.features.shape[1],
            "explained_variance": float(prep.features.explained_variance_ratio.sum())}, None


def _load_structures(wd: Path):
    h = CascadeHypergraph.load(wd / "hypergraph.txt", wd / "labels.txt")
    fm = FeatureMatrix.load(wd / "features.npz")
    if fm.shape[0] != h.n_nodes:
        raise ValueError(f"features have {fm.shape[0]} rows but the hypergraph has {h.n_nodes} nodes")
    return h, fm


def cmd_train(args, cfg, wd: Path):
    with pl.stage("train"):
        h, fm = _load_structures(wd)
        seed = pl.trial_seed(cfg.seed, args.trial)
        tr, te = pl.split_indices(h.labels, cfg.split_fraction, np.random.default_rng(seed), cfg.stratified)
        tcfg = dataclasses.replace(cfg.train, seed=seed)
        res = train(h, fm, tr, tcfg, te)
        save_checkpoint(wd / "model.npz", res.params, tcfg, {"train_idx": tr.tolist(), "test_idx": te.tolist()})
        np.savetxt(wd / "losses.txt", np.array(res.losses))
    return {"epochs": tcfg.epochs, "final_loss": res.losses[-1] if res.losses else None,
            "train_time_sec": res.train_time_sec, "seed": seed, "n_train": int(tr.size), "n_test": int(te.size)}, None


def cmd_evaluate(args, cfg, wd: Path):
    with pl.stage("evaluate"):
        h, fm = _load_structures(wd)
        params, tcfg, extra = load_checkpoint(wd / "model.npz")
        m = evaluate(params, h, fm, np.array(extra["test_idx"], dtype=np.int64))
        row = {**m, "train_time_sec": None, "seed": tcfg.seed}
        pl.write_metrics(wd / "metrics.json", row)
    return pl.metrics_record(row), None


def cmd_pipeline(args, cfg, wd: Path):
    _need(cfg, "interactions", "cascades")
    report = pl.run_pipeline(cfg)
    return report, pl.format_table([pl.report_row(report, "pipeline", None)])


def cmd_ablation(args, cfg, wd: Path):
    _need(cfg, "interactions", "cascades")
    values = None
    if args.values:
        conv = float if args.axis == "train_fraction" else int
        values = [conv(v) for v in args.values.split(",") if v.strip()]
    rows = pl.ablation(cfg, args.axis, values)
    (wd / f"ablation_{args.axis}.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    table = pl.format_table(rows)
    (wd / f"ablation_{args.axis}.txt").write_text(table)
    return rows, table


COMMANDS = {"build-graph": cmd_build_graph, "partition": cmd_partition, "build-hypergraph": cmd_build_hypergraph,
            "featurize": cmd_featurize, "train": cmd_train, "evaluate": cmd_evaluate, "pipeline": cmd_pipeline,
            "ablation": cmd_ablation}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        overrides = _overrides(args)
        if args.command == "synth":
            result, table = cmd_synth(args, overrides)
        else:
            cfg = build_run_config(overrides)
            wd = Path(cfg.workdir)
            wd.mkdir(parents=True, exist_ok=True)
            result, table = COMMANDS[args.command](args, cfg, wd)
    except pl.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 2
    _emit(result, args.format, table)
    return 0


if __name__ == "__main__":
    sys.exit(main())
