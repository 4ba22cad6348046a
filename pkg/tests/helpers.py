"""Random instance generators and independent oracles shared by the test modules."""

from __future__ import annotations

import itertools

import numpy as np

from cascadenet.hypergraph import CascadeHypergraph
from cascadenet.ingest import Cascade, InteractionRecord, Kind, Label, build_social_graph
from cascadenet.partition import Partition


BRIDGE_EDGES = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]


def random_hypergraph(rng: np.random.Generator, n: int, e: int, isolated_ok: bool = True,
                      weights: bool = False) -> CascadeHypergraph:
    edges = []
    for _ in range(e):
        size = int(rng.integers(1, n + 1))
        edges.append(np.sort(rng.choice(n, size=size, replace=False)))
    if not isolated_ok:
        covered = set(np.concatenate(edges).tolist()) if edges else set()
        missing = sorted(set(range(n)) - covered)
        if missing:
            edges.append(np.array(missing))
    labels = rng.integers(0, 2, size=n)
    w = rng.uniform(0.5, 2.0, size=len(edges)) if weights else None
    return CascadeHypergraph(n, edges, labels, w)


def dense_operator(h: CascadeHypergraph) -> np.ndarray:
    """Dense D_v^-1/2 H W D_e^-1 H^T D_v^-1/2 with zero rows for isolated nodes, built from loops."""
    n, e = h.n_nodes, len(h.hyperedges)
    H = np.zeros((n, e))
    for j, members in enumerate(h.hyperedges):
        for i in members:
            H[i, j] = 1.0
    w = np.ones(e) if h.weights is None else np.asarray(h.weights, dtype=float)
    dv = H.sum(axis=1)
    de = H.sum(axis=0)
    dv_is = np.array([d ** -0.5 if d > 0 else 0.0 for d in dv])
    de_inv = np.array([1.0 / d if d > 0 else 0.0 for d in de])
    return np.diag(dv_is) @ H @ np.diag(w) @ np.diag(de_inv) @ H.T @ np.diag(dv_is)


def dense_forward(params: dict, X: np.ndarray, h: CascadeHypergraph) -> np.ndarray:
    """Inference-mode logits re-implemented with dense matrices."""
    A = dense_operator(h)
    a = X
    i = 0
    while f"conv{i}.weight" in params:
        a = np.maximum(A @ a @ params[f"conv{i}.weight"] + params[f"conv{i}.bias"], 0.0)
        i += 1
    for j, name in enumerate(("lin1", "lin2", "lin3")):
        a = a @ params[f"{name}.weight"] + params[f"{name}.bias"]
        if j < 2:
            a = np.maximum(a, 0.0)
    return a


def confusion_f1(y_true, y_pred) -> tuple[float, float]:
    """(accuracy, weighted F1) from explicit confusion counts."""
    y_true = list(y_true)
    y_pred = list(y_pred)
    n = len(y_true)
    tp = sum(1 for t, p in zip(y_true, y_pred) if t == 1 and p == 1)
    tn = sum(1 for t, p in zip(y_true, y_pred) if t == 0 and p == 0)
    fp = sum(1 for t, p in zip(y_true, y_pred) if t == 0 and p == 1)
    fn = sum(1 for t, p in zip(y_true, y_pred) if t == 1 and p == 0)

    def f1(tp_, fp_, fn_):
        denom = 2 * tp_ + fp_ + fn_
        return 2 * tp_ / denom if denom else 0.0

    f_pos = f1(tp, fp, fn)
    f_neg = f1(tn, fn, fp)
    weighted = (tp + fn) / n * f_pos + (tn + fp) / n * f_neg
    return (tp + tn) / n, weighted


def random_social_records(rng: np.random.Generator, n_users: int, n_records: int,
                          t_max: int = 100) -> list[InteractionRecord]:
    kinds = (Kind.REPLY, Kind.MENTION, Kind.RETWEET)
    out = []
    for _ in range(n_records):
        s, d = rng.integers(n_users, size=2)
        out.append(InteractionRecord(kinds[int(rng.integers(3))], int(s), int(d), int(rng.integers(t_max))))
    return out


def random_cascade(rng: np.random.Generator, n_users: int, cid: str = "c", max_rt: int | None = None,
                   t_max: int = 100) -> Cascade:
    max_rt = n_users - 1 if max_rt is None else max_rt
    k = int(rng.integers(0, max_rt + 1))
    people = rng.choice(n_users, size=k + 1, replace=False).tolist()
    root = people[0]
    root_ts = int(rng.integers(0, t_max // 2))
    times = sorted(int(x) for x in rng.integers(root_ts, t_max + 1, size=k))
    return Cascade(cid, root, f"t{cid}", root_ts, list(zip(people[1:], times)),
                   Label.FAKE if rng.random() < 0.5 else Label.NONFAKE)


def brute_augment(c: Cascade, records_or_graph) -> set[tuple[int, int]]:
    """Per-retweeter scan over every graph edge; pairs of user ids, smaller first."""
    g = records_or_graph
    participants = set(c.participants)
    edges = {tuple(sorted((c.root_user, u))) for u, _ in c.retweeters}
    for u, t in c.retweeters:
        for s, d, ts in g.edges():
            if s == u and ts < t and d in participants and d != u:
                edges.add(tuple(sorted((u, d))))
    return edges


def graph_from_pairs(n: int, pairs) -> object:
    recs = [InteractionRecord(Kind.REPLY, a, b, 0) for a, b in pairs]
    return build_social_graph(recs, n)


def naive_hyperedges(assignment, k: int, u2c: dict, cascade_ids: list[str]) -> list[list[int]]:
    """Set union per cluster, empty clusters dropped, cascade ids mapped to indices."""
    index = {cid: i for i, cid in enumerate(cascade_ids)}
    out = []
    for cl in range(k):
        acc = set()
        for u, cids in u2c.items():
            if u < len(assignment) and assignment[u] == cl:
                acc |= {index[c] for c in cids if c in index}
        if acc:
            out.append(sorted(acc))
    return out


def exhaustive_min_cut(n: int, pairs, sizes: tuple[int, int]) -> int:
    best = None
    for side in itertools.combinations(range(n), sizes[0]):
        s = set(side)
        cut = sum(1 for a, b in pairs if (a in s) != (b in s))
        best = cut if best is None else min(best, cut)
    return best


def make_partition(assignment, k: int) -> Partition:
    a = np.asarray(assignment, dtype=np.int64)
    return Partition(a, k, 0, 0.0)


def barbell_similarity(seed: int, clique: int = 5) -> tuple[float, float]:
    """(mean intra-clique, mean inter-clique) cosine similarity of DeepWalk rows on a barbell graph."""
    import networkx as nx

    from cascadenet.features import AugmentedCascadeGraph, deepwalk_embed

    g = nx.barbell_graph(clique, 0)
    edges = np.array(sorted(tuple(sorted(e)) for e in g.edges()), dtype=np.int64)
    ag = AugmentedCascadeGraph(np.arange(2 * clique), edges)
    emb = deepwalk_embed(ag, seed=seed)
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    sim = unit @ unit.T
    side = np.arange(2 * clique) < clique
    intra = [sim[i, j] for i in range(2 * clique) for j in range(i + 1, 2 * clique) if side[i] == side[j]]
    inter = [sim[i, j] for i in range(2 * clique) for j in range(2 * clique) if side[i] and not side[j]]
    return float(np.mean(intra)), float(np.mean(inter))


def gradient_check(seed: int, delta: float = 1e-4) -> dict[str, float]:
    """Relative error between analytic and central-difference gradients per parameter tensor.

    Error is max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-12);
    dropout masks are drawn once and held fixed so the loss is deterministic.
    """
    from cascadenet.model import loss_and_grads

    rng = np.random.default_rng(seed)
    while True:
        inst = _gradcheck_instance(rng, seed)
        if inst is not None:
            break
    params, X, h, mask, masks = inst
    _, grads = loss_and_grads(params, X, h, h.labels, mask, train=True, dropout=0.3, masks=masks)
    errors = {}
    for name, p in params.items():
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + delta
            up, _ = loss_and_grads(params, X, h, h.labels, mask, train=True, dropout=0.3, masks=masks)
            p[idx] = old - delta
            down, _ = loss_and_grads(params, X, h, h.labels, mask, train=True, dropout=0.3, masks=masks)
            p[idx] = old
            num[idx] = (up - down) / (2 * delta)
        scale = max(np.abs(grads[name]).max(), np.abs(num).max(), 1e-12)
        errors[name] = float(np.abs(grads[name] - num).max() / scale)
    return errors


def _gradcheck_instance(rng, seed, margin: float = 1e-2):
    """Random small instance, or None when a ReLU input lies within ``margin`` of its kink.

    Central differences are only valid where the loss is smooth over the
    perturbation, so near-kink draws are rejected.
    """
    from cascadenet.model import TrainConfig, dropout_masks, forward, init_params

    n = int(rng.integers(4, 11))
    e = int(rng.integers(1, 6))
    d_in, hidden = int(rng.integers(2, 9)), int(rng.integers(2, 9))
    mlp = (int(rng.integers(2, 9)), int(rng.integers(2, 9)))
    h = random_hypergraph(rng, n, e, weights=True)
    h.labels[:2] = [0, 1]
    cfg = TrainConfig(hidden_dim=hidden, mlp_dims=mlp, num_conv_layers=int(rng.integers(1, 3)), seed=seed)
    params = init_params(d_in, cfg, rng)
    for k in params:
        if k.endswith("bias"):
            params[k] = rng.normal(scale=0.3, size=params[k].shape)
    X = rng.normal(size=(n, d_in))
    mask = np.sort(rng.choice(n, size=int(rng.integers(2, n + 1)), replace=False))
    if not {0, 1} <= set(mask.tolist()):
        mask = np.union1d(mask, [0, 1])
    masks = dropout_masks([(n, mlp[0]), (n, mlp[1])], 0.3, rng)
    _, cache = forward(params, X, h, train=True, dropout=0.3, masks=masks)
    if min(np.abs(z).min() for z in cache["pre"]) < margin:
        return None
    return params, X, h, mask, masks


def small_run_config(tmp_path, trials: int = 2, seed: int = 0, **synth):
    """Write a small synthetic dataset and return a fast RunConfig pointing at it."""
    from dataclasses import replace

    from cascadenet.features import FeatureConfig
    from cascadenet.model import TrainConfig
    from cascadenet.pipeline import RunConfig
    from cascadenet.synthetic import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec(**{"n_users": 300, "n_cascades": 60, "seed": seed, **synth})
    paths = generate_synthetic(spec).write(tmp_path / "data")
    feats = FeatureConfig(cap=10, pca_dim=12, walks_per_node=2, walk_length=12, embed_dim=16)
    return RunConfig(interactions=str(paths["interactions"]), cascades=str(paths["cascades"]),
                     users=str(paths["users"]), workdir=str(tmp_path / "work"), k_clusters=4, trials=trials,
                     seed=seed, features=feats, train=replace(TrainConfig(), epochs=30),
                     sweep_k=(2, 3, 4))
