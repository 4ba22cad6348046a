"""End-to-end runs: ingest, partition, hypergraph, features, repeated trials, sweeps."""

from __future__ import annotations

import contextlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .features import FeatureConfig, FeatureMatrix, UserProfile, featurize, read_user_profiles
from .hypergraph import CascadeHypergraph, add_hashtag_hyperedges, build_hypergraph, hypergraph_stats
from .ingest import (Cascade, SocialGraph, UserIndex, build_social_graph, extract_cascades, filter_cascades,
                     parse_interactions, social_graph_stats, user_to_cascades)
from .model import TrainConfig, classification_metrics, evaluate, save_checkpoint, train
from .partition import Partition, partition_louvain, partition_multilevel

log = logging.getLogger(__name__)

TIMING_KEYS = ("train_time_sec", "inference_time_sec")
INFERENCE_NOTE = "inference time covers one forward pass over all cascades plus scoring; featurization excluded"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is re-raised tagged with its stage
        raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    interactions: str = ""
    cascades: str = ""
    users: str = ""
    workdir: str = "work"
    k_clusters: int = 100
    partitioner: str = "multilevel"
    eps: float = 0.03
    resolution: float = 1.0
    min_participants: int = 0
    drop_singletons: bool = False
    hashtag_hyperedges: bool = False
    trials: int = 5
    split_fraction: float = 0.8
    stratified: bool = True
    seed: int = 0
    sweep_k: tuple[int, ...] = (20, 50, 100)
    sweep_layers: tuple[int, ...] = (1, 2, 3, 4, 5)
    sweep_train_fraction: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.partitioner not in ("multilevel", "louvain"):
            raise ValueError(f"unknown partitioner {self.partitioner!r}")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


@dataclass
class Prepared:
    """Everything that does not depend on the partition."""

    users: UserIndex
    graph: SocialGraph
    cascades: list[Cascade]
    profiles: dict[int, UserProfile]
    features: FeatureMatrix | None = None
    diagnostics: dict = field(default_factory=dict)


def prepare(cfg: RunConfig, with_features: bool = True) -> Prepared:
    with stage("ingest"):
        users = UserIndex()
        records = parse_interactions(cfg.interactions, users)
        n_graph = len(users)
        graph = build_social_graph(records, n_graph)
        cascades = extract_cascades(records, cfg.cascades, users)
        diagnostics = {"malformed_lines": records.malformed_count, "unknown_kinds": records.unknown_kind_count,
                       "retweets_unknown_cascade": cascades.unknown_cascade_count,
                       "retweets_before_root": cascades.early_retweet_count,
                       "cascades_read": len(cascades)}
        cascades = filter_cascades(list(cascades), cfg.min_participants)
        profiles = read_user_profiles(cfg.users, users) if cfg.users else {}
        diagnostics["cascades_kept"] = len(cascades)
    prep = Prepared(users, graph, cascades, profiles, diagnostics=diagnostics)
    if with_features:
        with stage("featurize"):
            prep.features = featurize(cascades, graph, profiles, cfg.features, cfg.seed)
    return prep


def make_partition(graph: SocialGraph, cfg: RunConfig, k: int | None = None) -> Partition:
    with stage("partition"):
        if cfg.partitioner == "louvain":
            return partition_louvain(graph, cfg.resolution, cfg.seed)
        return partition_multilevel(graph, cfg.k_clusters if k is None else k, cfg.eps, cfg.seed)


def make_hypergraph(prep: Prepared, part: Partition, cfg: RunConfig) -> CascadeHypergraph:
    with stage("build-hypergraph"):
        h = build_hypergraph(part, user_to_cascades(prep.cascades), prep.cascades, cfg.drop_singletons)
        if cfg.hashtag_hyperedges:
            h = add_hashtag_hyperedges(h, prep.cascades)
        return h


def split_indices(labels: np.ndarray, fraction: float, rng: np.random.Generator,
                  stratified: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Random train/test split of the labelled nodes (unknown labels excluded)."""
    labelled = np.flatnonzero(labels >= 0)
    if stratified:
        train_parts, test_parts = [], []
        for c in (0, 1):
            members = rng.permutation(labelled[labels[labelled] == c])
            cut = int(round(fraction * members.size))
            train_parts.append(members[:cut])
            test_parts.append(members[cut:])
        tr, te = np.concatenate(train_parts), np.concatenate(test_parts)
    else:
        perm = rng.permutation(labelled)
        cut = int(round(fraction * perm.size))
        tr, te = perm[:cut], perm[cut:]
    return np.sort(tr), np.sort(te)


def majority_baseline(labels: np.ndarray, tr: np.ndarray, te: np.ndarray) -> dict:
    majority = int(np.bincount(labels[tr], minlength=2).argmax())
    return classification_metrics(labels[te], np.full(te.size, majority))


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def run_trials(h: CascadeHypergraph, features: FeatureMatrix, cfg: RunConfig,
               out_dir: Path | None = None) -> list[dict]:
    rows = []
    for t in range(cfg.trials):
        seed = trial_seed(cfg.seed, t)
        with stage("train"):
            tr, te = split_indices(h.labels, cfg.split_fraction, np.random.default_rng(seed), cfg.stratified)
            tcfg = replace(cfg.train, seed=seed)
            result = train(h, features, tr, tcfg, te)
        with stage("evaluate"):
            m = evaluate(result.params, h, features, te)
        row = {"trial": t, "seed": seed, "accuracy": m["accuracy"], "f1_weighted": m["f1_weighted"],
               "f1_per_class": m["f1_per_class"], "precision": m["precision"], "recall": m["recall"],
               "train_time_sec": result.train_time_sec, "inference_time_sec": m["inference_time_sec"],
               "final_train_loss": result.losses[-1] if result.losses else None,
               "baseline_f1_weighted": majority_baseline(h.labels, tr, te)["f1_weighted"],
               "n_train": int(tr.size), "n_test": int(te.size)}
        rows.append(row)
        if out_dir is not None:
            tdir = out_dir / f"trial_{t}"
            tdir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(tdir / "model.npz", result.params, tcfg, {"train_idx": tr.tolist(), "test_idx": te.tolist()})
            write_metrics(tdir / "metrics.json", row)
            np.savetxt(tdir / "losses.txt", np.array(result.losses))
    return rows


def metrics_record(row: dict) -> dict:
    return {"accuracy": row["accuracy"], "f1_weighted": row["f1_weighted"], "f1_per_class": row["f1_per_class"],
            "train_time_sec": row["train_time_sec"], "inference_time_sec": row["inference_time_sec"],
            "seed": row["seed"]}


def write_metrics(path: Path, row: dict) -> None:
    Path(path).write_text(json.dumps(metrics_record(row), indent=2, sort_keys=True))


def summarize(rows: Sequence[dict]) -> dict:
    """Mean and population std (0 for a single trial) over trials."""
    out = {"trials": len(rows)}
    for key in ("accuracy", "f1_weighted", "train_time_sec", "inference_time_sec", "baseline_f1_weighted"):
        vals = np.array([r[key] for r in rows], dtype=np.float64)
        out[f"{key}_mean"] = float(vals.mean())
        out[f"{key}_std"] = float(vals.std())
    return out


def run_pipeline(cfg: RunConfig, persist: bool = True, prep: Prepared | None = None) -> dict:
    """Run every stage once and the model for ``cfg.trials`` random splits."""
    start = time.perf_counter()
    workdir = Path(cfg.workdir)
    if persist:
        workdir.mkdir(parents=True, exist_ok=True)
    if prep is None:
        prep = prepare(cfg)
    part = make_partition(prep.graph, cfg)
    h = make_hypergraph(prep, part, cfg)
    if persist:
        with stage("persist"):
            prep.users.save(workdir / "users.json")
            prep.graph.dump(workdir / "graph.txt")
            part.dump(workdir / "partition.txt", workdir / "partition.json")
            h.dump(workdir / "hypergraph.txt", workdir / "labels.txt")
            prep.features.save(workdir / "features.npz")
    rows = run_trials(h, prep.features, cfg, workdir if persist else None)
    report = {
        "config": cfg.to_dict(),
        "dataset": {"social_graph": social_graph_stats(prep.graph), "hypergraph": hypergraph_stats(h),
                    "partition": part.summary(), "ingest": prep.diagnostics,
                    "feature_shape": list(prep.features.shape)},
        "trials": rows,
        "summary": summarize(rows),
        "notes": {"inference_time": INFERENCE_NOTE, "std": "population standard deviation over trials"},
        "wall_time_sec": time.perf_counter() - start,
    }
    if persist:
        (workdir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        (workdir / "report.txt").write_text(format_table([report_row(report, "pipeline", None)]))
    return report


def report_row(report: dict, axis: str, value: Any) -> dict:
    s = report["summary"]
    return {"axis": axis, "value": value, "k": report["dataset"]["partition"]["k"],
            "accuracy_mean": s["accuracy_mean"], "accuracy_std": s["accuracy_std"],
            "f1_weighted_mean": s["f1_weighted_mean"], "f1_weighted_std": s["f1_weighted_std"],
            "train_time_sec_mean": s["train_time_sec_mean"], "inference_time_sec_mean": s["inference_time_sec_mean"],
            "trials": s["trials"], "config": report["config"]}


AXES = ("layers", "train_fraction", "k")


def ablation(cfg: RunConfig, axis: str, values: Sequence | None = None, persist: bool = False) -> list[dict]:
    """One report row per value of ``axis``; ingestion and features are computed once."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    if values is None:
        values = {"layers": cfg.sweep_layers, "train_fraction": cfg.sweep_train_fraction, "k": cfg.sweep_k}[axis]
    values = list(values)
    if not values:
        raise ValueError("ablation needs at least one value")
    prep = prepare(cfg)
    rows = []
    for v in values:
        if axis == "layers":
            sub = replace(cfg, train=replace(cfg.train, num_conv_layers=int(v)))
        elif axis == "train_fraction":
            sub = replace(cfg, split_fraction=float(v))
        else:
            sub = replace(cfg, k_clusters=int(v))
        sub = replace(sub, workdir=str(Path(cfg.workdir) / f"{axis}_{v}"))
        rows.append(report_row(run_pipeline(sub, persist=persist, prep=prep), axis, v))
    return rows


def format_table(rows: Sequence[dict]) -> str:
    """Plain-text table: partitioning, accuracy, weighted F1, train and inference time."""
    header = ["axis", "value", "k", "Accuracy (%)", "F1 weighted (%)", "Train Time (sec)", "Inference Time (sec)"]
    body = []
    for r in rows:
        body.append([str(r["axis"]), "-" if r["value"] is None else str(r["value"]), str(r["k"]),
                     f"{100 * r['accuracy_mean']:.2f}±{100 * r['accuracy_std']:.2f}",
                     f"{100 * r['f1_weighted_mean']:.2f}±{100 * r['f1_weighted_std']:.2f}",
                     f"{r['train_time_sec_mean']:.3f}", f"{r['inference_time_sec_mean']:.4f}"])
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"


def strip_timings(obj):
    """Copy of a metrics structure without wall-clock fields."""
    if isinstance(obj, dict):
        return {k: strip_timings(v) for k, v in obj.items()
                if k not in TIMING_KEYS and not k.startswith(TIMING_KEYS) and k != "wall_time_sec"}
    if isinstance(obj, list):
        return [strip_timings(v) for v in obj]
    return obj
