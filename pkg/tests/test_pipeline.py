import json
from dataclasses import replace

import numpy as np
import pytest

from cascadenet import pipeline as pl
from cascadenet.config import build_run_config, build_synthetic_spec, read_kv_file, split_overrides
from cascadenet.ingest import build_social_graph, parse_interactions, social_graph_stats
from cascadenet.synthetic import SyntheticSpec, generate_synthetic

from helpers import small_run_config


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(p_intra=0.01, p_inter=0.02)
    with pytest.raises(ValueError):
        SyntheticSpec(label_fidelity=0.5)
    with pytest.raises(ValueError):
        SyntheticSpec(p_intra=1.5)


def test_fidelity_one_labels_follow_blocks():
    data = generate_synthetic(SyntheticSpec(n_users=200, n_cascades=50, n_blocks=2, label_fidelity=1.0))
    labels = np.array([c.label.target for c in data.cascades])
    assert np.array_equal(labels, data.home_blocks % 2)


def test_no_inter_edges_leaves_blocks_disconnected():
    data = generate_synthetic(SyntheticSpec(n_users=200, n_cascades=20, n_blocks=4, p_inter=0.0, p_intra=0.1))
    social = [r for r in data.records if r.cascade_id is None]
    g = build_social_graph(social, 200)
    assert social_graph_stats(g)["components"] >= 4
    assert all(data.blocks[r.source] == data.blocks[r.target] for r in social)


def test_synthetic_timestamps_consistent(tmp_path):
    data = generate_synthetic(SyntheticSpec(n_users=200, n_cascades=30))
    roots = {c.cascade_id: c.root_timestamp for c in data.cascades}
    assert all(r.timestamp > roots[r.cascade_id] for r in data.records if r.cascade_id)
    paths = data.write(tmp_path)
    assert len(parse_interactions(paths["interactions"])) == len(data.records)


def test_split_is_stratified_and_excludes_unknown():
    labels = np.array([0] * 40 + [1] * 60 + [-1] * 5)
    tr, te = pl.split_indices(labels, 0.8, np.random.default_rng(0))
    assert np.intersect1d(tr, te).size == 0 and np.union1d(tr, te).size == 100
    assert np.sum(labels[tr] == 1) == 48 and np.sum(labels[tr] == 0) == 32
    assert not np.any(labels[np.concatenate([tr, te])] == -1)


def test_pipeline_report_shape(tmp_path):
    cfg = small_run_config(tmp_path, trials=5)
    report = pl.run_pipeline(cfg)
    assert len(report["trials"]) == 5
    s = report["summary"]
    for key in ("accuracy", "f1_weighted", "train_time_sec", "inference_time_sec"):
        assert f"{key}_mean" in s and f"{key}_std" in s
    work = tmp_path / "work"
    for name in ("users.json", "graph.txt", "partition.txt", "partition.json", "hypergraph.txt", "labels.txt",
                 "features.npz", "report.json", "report.txt"):
        assert (work / name).exists(), name
    metrics = json.loads((work / "trial_0" / "metrics.json").read_text())
    assert set(metrics) == {"accuracy", "f1_weighted", "f1_per_class", "train_time_sec", "inference_time_sec",
                            "seed"}
    assert report["config"] == cfg.to_dict()
    text = (work / "report.txt").read_text()
    assert "±" in text and "F1 weighted (%)" in text


def test_single_trial_std_zero(tmp_path):
    report = pl.run_pipeline(small_run_config(tmp_path, trials=1), persist=False)
    assert report["summary"]["f1_weighted_std"] == 0.0 and report["summary"]["accuracy_std"] == 0.0


def test_sweep_over_k(tmp_path):
    cfg = small_run_config(tmp_path, trials=1)
    rows = pl.ablation(cfg, "k")
    assert [r["value"] for r in rows] == [2, 3, 4] and [r["k"] for r in rows] == [2, 3, 4]
    assert all(r["config"]["k_clusters"] == r["k"] for r in rows)


def test_single_value_axis_equals_plain_run(tmp_path):
    cfg = small_run_config(tmp_path, trials=2)
    (row,) = pl.ablation(cfg, "layers", [1])
    plain = pl.report_row(pl.run_pipeline(cfg, persist=False), "layers", 1)
    assert pl.strip_timings(row) == pl.strip_timings({**plain, "config": row["config"]})
    assert row["config"]["train"]["num_conv_layers"] == 1


def test_ablation_rejects_empty_and_unknown(tmp_path):
    cfg = small_run_config(tmp_path, trials=1)
    with pytest.raises(ValueError):
        pl.ablation(cfg, "layers", [])
    with pytest.raises(ValueError):
        pl.ablation(cfg, "dropout")


def test_determinism(tmp_path):
    cfg = small_run_config(tmp_path, trials=2)
    a = pl.run_pipeline(replace(cfg, workdir=str(tmp_path / "a")))
    b = pl.run_pipeline(replace(cfg, workdir=str(tmp_path / "b")))
    assert json.dumps(pl.strip_timings(a["trials"]), sort_keys=True) == \
        json.dumps(pl.strip_timings(b["trials"]), sort_keys=True)
    ma = json.loads((tmp_path / "a" / "trial_1" / "metrics.json").read_text())
    mb = json.loads((tmp_path / "b" / "trial_1" / "metrics.json").read_text())
    assert pl.strip_timings(ma) == pl.strip_timings(mb)


def test_stage_errors_are_tagged(tmp_path):
    cfg = replace(small_run_config(tmp_path), interactions=str(tmp_path / "missing.jsonl"))
    with pytest.raises(pl.PipelineError, match=r"^\[ingest\]"):
        pl.run_pipeline(cfg)


def test_run_config_validation():
    with pytest.raises(ValueError):
        pl.RunConfig(split_fraction=1.0)
    with pytest.raises(ValueError):
        pl.RunConfig(trials=0)


def test_config_file_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nk_clusters = 20\ncap=7\nepochs=5\ntrain.seed=3\nstratified=false\n"
                    "sweep_layers=1,2\nmlp_dims=8,4\n")
    cfg = build_run_config(read_kv_file(path))
    assert cfg.k_clusters == 20 and cfg.features.cap == 7 and cfg.train.epochs == 5
    assert cfg.train.seed == 3 and cfg.stratified is False
    assert cfg.sweep_layers == (1, 2) and cfg.train.mlp_dims == (8, 4)
    # "seed" routes to the run config first
    assert split_overrides({"seed": "4"})["run"] == {"seed": "4"}
    assert build_synthetic_spec({"seed": "4", "n_users": "50"}) == SyntheticSpec(n_users=50, seed=4)


def test_config_presets_and_errors(tmp_path):
    cfg = build_run_config({"preset": "us_election", "pca_dim": "30"})
    assert cfg.features.cap == 250 and cfg.features.pca_dim == 30
    with pytest.raises(KeyError):
        build_run_config({"nonsense": "1"})
    with pytest.raises(ValueError):
        build_run_config({"stratified": "maybe"})
    bad = tmp_path / "bad.cfg"
    bad.write_text("no equals sign\n")
    with pytest.raises(ValueError):
        read_kv_file(bad)
