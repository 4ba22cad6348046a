import math

import networkx as nx
import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from cascadenet.ingest import InteractionRecord, Kind, build_social_graph
from cascadenet.partition import (Partition, as_adjacency, contract, edge_cut, heavy_edge_matching, imbalance,
                                  modularity, partition_louvain, partition_multilevel)

from helpers import exhaustive_min_cut, graph_from_pairs

from helpers import BRIDGE_EDGES as BRIDGE


def nx_adj(g) -> sp.csr_matrix:
    return sp.csr_matrix(nx.to_scipy_sparse_array(g, nodelist=sorted(g.nodes()), dtype=float))


def er_instance(n, p, seed):
    return nx_adj(nx.gnp_random_graph(n, p, seed=seed))


def planted_instance(n, blocks, p_in, p_out, seed):
    return nx_adj(nx.planted_partition_graph(blocks, n // blocks, p_in, p_out, seed=seed))


def check_valid(p: Partition, n: int, k: int):
    assert p.assignment.shape == (n,)
    assert p.assignment.min() >= 0 and p.assignment.max() < k
    assert np.all(np.bincount(p.assignment, minlength=k) > 0)


def test_single_cluster():
    g = graph_from_pairs(6, BRIDGE)
    p = partition_multilevel(g, 1)
    assert np.all(p.assignment == 0) and p.edge_cut == 0 and edge_cut(g, p) == 0


def test_bridge_instance():
    assert exhaustive_min_cut(6, BRIDGE, (3, 3)) == 1
    p = partition_multilevel(graph_from_pairs(6, BRIDGE), 2, eps=0.05, seed=0)
    assert p.edge_cut == 1 and sorted(p.sizes().tolist()) == [3, 3]
    assert set(p.assignment[:3]) != set(p.assignment[3:])


def test_edge_cut_examples():
    tri = graph_from_pairs(3, [(0, 1), (1, 2), (0, 2)])
    assert edge_cut(tri, np.array([0, 1, 1])) == 2
    path = graph_from_pairs(3, [(0, 1), (1, 2)])
    assert edge_cut(path, np.array([0, 0, 1])) == 1
    assert edge_cut(path, np.zeros(3, dtype=int)) == 0


def test_edge_cut_uses_undirected_view():
    # a->b and b->a count as one undirected edge
    g = build_social_graph([InteractionRecord(Kind.REPLY, 0, 1, 1), InteractionRecord(Kind.REPLY, 1, 0, 2)])
    assert edge_cut(g, np.array([0, 1])) == 1


def test_too_many_clusters():
    with pytest.raises(ValueError, match="more clusters than nodes"):
        partition_multilevel(graph_from_pairs(3, [(0, 1)]), 4)


def test_disconnected_graph_is_balanced():
    adj = sp.block_diag([er_instance(50, 0.2, s) for s in range(7)]).tocsr()
    p = partition_multilevel(adj, 4, seed=3)
    check_valid(p, 350, 4)
    assert p.imbalance <= 0.03


@pytest.mark.parametrize("k", [2, 4, 8, 16])
@pytest.mark.parametrize("kind", ["er", "planted"])
def test_imbalance_within_tolerance(kind, k):
    for seed in range(3):
        adj = er_instance(700, 0.01, seed) if kind == "er" else planted_instance(704, 8, 0.05, 0.002, seed)
        p = partition_multilevel(adj, k, eps=0.03, seed=seed)
        check_valid(p, adj.shape[0], k)
        assert p.imbalance <= 0.03
        assert p.imbalance == imbalance(p.assignment, k)
        assert p.edge_cut == edge_cut(adj, p)


small_graphs = st.tuples(st.integers(2, 60), st.floats(0.0, 0.4), st.integers(0, 10_000), st.integers(2, 8))


@given(small_graphs)
@settings(max_examples=60, deadline=None)
def test_small_graph_invariants(args):
    n, prob, seed, k = args
    if k > n:
        k = n
    adj = er_instance(n, prob, seed)
    p = partition_multilevel(adj, k, eps=0.03, seed=seed)
    check_valid(p, n, k)
    # when eps leaves no integer slack the cap falls back to ceil(n/k)
    assert np.bincount(p.assignment).max() <= max(math.floor(1.03 * n / k), math.ceil(n / k))
    if math.floor(1.03 * n / k) >= math.ceil(n / k):
        assert p.imbalance <= 0.03
    for _, before, after in p.info["fm_passes"]:
        assert after <= before
    for coarse_cut, projected in p.info["projections"]:
        assert coarse_cut == projected


def test_beats_random_balanced_assignment():
    wins = 0
    for seed in range(20):
        adj = er_instance(300, 0.03, seed)
        k = 4
        p = partition_multilevel(adj, k, seed=seed)
        n, m = adj.shape[0], adj.nnz // 2
        sizes = np.full(k, n // k)
        # probability that a uniformly random edge stays inside one part
        same = float(np.sum(sizes * (sizes - 1)) / (n * (n - 1)))
        expected = m * (1 - same)
        assert p.edge_cut <= expected
        wins += p.edge_cut < expected
    assert wins == 20


def test_fm_never_increases_cut_and_projection_sound():
    adj = planted_instance(2000, 4, 0.02, 0.0005, 0)
    p = partition_multilevel(adj, 4, seed=0)
    assert len(p.info["levels"]) > 1
    assert p.info["fm_passes"]
    for _, before, after in p.info["fm_passes"]:
        assert after <= before
    assert len(p.info["projections"]) == len(p.info["levels"]) - 1
    for coarse_cut, projected in p.info["projections"]:
        assert coarse_cut == projected


def test_recovers_planted_blocks():
    adj = planted_instance(2000, 4, 0.02, 0.0005, 1)
    p = partition_multilevel(adj, 4, seed=1)
    truth = np.arange(2000) // 500
    from sklearn.metrics import adjusted_rand_score
    assert adjusted_rand_score(truth, p.assignment) > 0.95


def test_deterministic_for_seed():
    adj = er_instance(400, 0.02, 5)
    a = partition_multilevel(adj, 8, seed=11)
    b = partition_multilevel(adj, 8, seed=11)
    assert np.array_equal(a.assignment, b.assignment)


def test_coarsening_preserves_weight_and_projection():
    adj = er_instance(200, 0.05, 2)
    vw = np.ones(200, dtype=np.int64)
    cmap, nc = heavy_edge_matching(adj, vw, np.random.default_rng(0), 2.0)
    assert nc < 200 and set(np.bincount(cmap, minlength=nc).tolist()) <= {1, 2}
    cadj, cvw = contract(adj, vw, cmap, nc)
    assert cvw.sum() == 200
    coarse_part = np.random.default_rng(1).integers(0, 3, nc)
    fine_part = coarse_part[cmap]
    assert edge_cut(adj, fine_part) == round(sp.triu(cadj).multiply(
        coarse_part[:, None] != coarse_part[None, :]).sum())


def test_dump_round_trip(tmp_path):
    p = partition_multilevel(graph_from_pairs(6, BRIDGE), 2, eps=0.05)
    p.dump(tmp_path / "p.txt", tmp_path / "p.json")
    lines = (tmp_path / "p.txt").read_text().splitlines()
    assert lines[0].split() == ["0", str(p.assignment[0])]
    q = Partition.load(tmp_path / "p.txt", tmp_path / "p.json")
    assert np.array_equal(q.assignment, p.assignment) and q.summary() == p.summary()


def test_louvain_no_edges():
    g = build_social_graph([], 5)
    p = partition_louvain(g)
    assert p.k == 5 and sorted(p.assignment.tolist()) == list(range(5))


def test_louvain_two_cliques():
    g = nx.barbell_graph(5, 0)
    p = partition_louvain(nx_adj(g), seed=0)
    assert p.k == 2
    assert len(set(p.assignment[:5])) == 1 and len(set(p.assignment[5:])) == 1
    # enumeration: the clique split has the highest modularity of all 2^9 bipartitions
    adj = nx_adj(g)
    best = max(modularity(adj, np.array([0] + [(mask >> i) & 1 for i in range(9)]))
               for mask in range(2 ** 9))
    assert modularity(adj, p.assignment) == pytest.approx(best)


@pytest.mark.parametrize("seed", range(5))
def test_louvain_modularity_matches_networkx(seed):
    g = nx.planted_partition_graph(5, 30, 0.3, 0.02, seed=seed)
    adj = nx_adj(g)
    p = partition_louvain(adj, seed=seed)
    comms = [set(np.flatnonzero(p.assignment == c).tolist()) for c in range(p.k)]
    ours = modularity(adj, p.assignment)
    assert ours == pytest.approx(nx.community.modularity(g, comms), abs=1e-12)
    ref = nx.community.modularity(g, nx.community.louvain_communities(g, seed=seed))
    assert ours >= ref - 0.02


@given(st.integers(5, 60), st.floats(0.05, 0.5), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_louvain_phases_never_lose_modularity(n, prob, seed):
    adj = er_instance(n, prob, seed)
    if adj.nnz == 0:
        return
    p = partition_louvain(adj, seed=seed)
    for before, after in p.info["phases"]:
        assert after >= before - 1e-12
    assert modularity(adj, p.assignment) >= modularity(adj, np.arange(n)) - 1e-12
    assert sorted(set(p.assignment.tolist())) == list(range(p.k))


def test_social_graph_is_symmetrized():
    g = build_social_graph([InteractionRecord(Kind.REPLY, 0, 1, 1), InteractionRecord(Kind.REPLY, 2, 1, 1)])
    adj = as_adjacency(g).toarray()
    assert np.array_equal(adj, adj.T) and adj.sum() == 4
