"""Balanced k-way partitioning of the user graph, plus a Louvain baseline.

The multilevel partitioner follows the usual three phases: heavy-edge
matching coarsens the graph, greedy region growing splits the coarsest
graph, and boundary Fiduccia-Mattheyses passes refine every level on the
way back up. Everything here runs on the undirected view of the social
graph.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .ingest import SocialGraph

DEFAULT_EPS = 0.03


@dataclass
class Partition:
    assignment: np.ndarray
    k: int
    edge_cut: int
    imbalance: float
    seed: int | None = None
    info: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return int(self.assignment.size)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def clusters(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.concatenate([[0], np.cumsum(self.sizes())])
        return [order[bounds[c]:bounds[c + 1]] for c in range(self.k)]

    def summary(self) -> dict:
        return {"k": self.k, "edge_cut": int(self.edge_cut), "imbalance": float(self.imbalance),
                "seed": self.seed}

    def dump(self, path: str | Path, summary_path: str | Path | None = None) -> None:
        with Path(path).open("w") as fh:
            for i, c in enumerate(self.assignment.tolist()):
                fh.write(f"{i} {c}\n")
        if summary_path is not None:
            Path(summary_path).write_text(json.dumps(self.summary(), indent=2))

    @classmethod
    def load(cls, path: str | Path, summary_path: str | Path | None = None) -> "Partition":
        data = np.loadtxt(path, dtype=np.int64, ndmin=2)
        assignment = np.empty(data.shape[0], dtype=np.int64)
        assignment[data[:, 0]] = data[:, 1]
        summary = json.loads(Path(summary_path).read_text()) if summary_path else {}
        k = int(summary.get("k", assignment.max() + 1 if assignment.size else 0))
        return cls(assignment, k, int(summary.get("edge_cut", -1)),
                   float(summary.get("imbalance", imbalance(assignment, k))), summary.get("seed"))


def as_adjacency(g) -> sp.csr_matrix:
    """Undirected weighted adjacency for a SocialGraph or a sparse matrix."""
    if isinstance(g, SocialGraph):
        return g.undirected()
    a = sp.csr_matrix(g, dtype=np.float64)
    a = a.maximum(a.T).tocsr()
    a.setdiag(0)
    a.eliminate_zeros()
    return a


def edge_cut(g, p) -> int:
    """Weight of undirected edges whose endpoints lie in different clusters."""
    assignment = p.assignment if isinstance(p, Partition) else np.asarray(p)
    a = as_adjacency(g).tocoo()
    crossing = assignment[a.row] != assignment[a.col]
    return int(round(a.data[crossing].sum() / 2))


def imbalance(assignment: np.ndarray, k: int, vwgt: np.ndarray | None = None) -> float:
    if assignment.size == 0:
        return 0.0
    w = np.bincount(assignment, weights=vwgt, minlength=k)
    total = w.sum()
    # (max*k - n)/n is exact for integer sizes, unlike max*k/n - 1
    return float((w.max() * k - total) / total)


# ---------------------------------------------------------------------------
# multilevel k-way


@dataclass
class _Level:
    adj: sp.csr_matrix
    vwgt: np.ndarray
    cmap: np.ndarray | None = None  # fine node -> coarse node of the next level


def _cut(adj: sp.csr_matrix, part: np.ndarray) -> float:
    a = adj.tocoo()
    return float(a.data[part[a.row] != part[a.col]].sum() / 2)


def heavy_edge_matching(adj: sp.csr_matrix, vwgt: np.ndarray, rng: np.random.Generator,
                        max_vwgt: float) -> tuple[np.ndarray, int]:
    """Match each node to its heaviest unmatched neighbour.

    Nodes are visited in a random order; ties between equally heavy edges go
    to the lowest neighbour index. Returns the fine->coarse map and the
    coarse node count.
    """
    n = adj.shape[0]
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    match = np.full(n, -1, dtype=np.int64)
    vw = vwgt.tolist()
    for v in rng.permutation(n).tolist():
        if match[v] >= 0:
            continue
        best, best_w = -1, 0.0
        for idx in range(indptr[v], indptr[v + 1]):
            u = indices[idx]
            if match[u] >= 0 or u == v or vw[u] + vw[v] > max_vwgt:
                continue
            w = data[idx]
            if w > best_w or (w == best_w and u < best):
                best, best_w = u, w
        if best < 0:
            match[v] = v
        else:
            match[v], match[best] = best, v
    cmap = np.full(n, -1, dtype=np.int64)
    nc = 0
    for v in range(n):
        if cmap[v] < 0:
            cmap[v] = nc
            cmap[match[v]] = nc
            nc += 1
    return cmap, nc


def contract(adj: sp.csr_matrix, vwgt: np.ndarray, cmap: np.ndarray, nc: int) -> tuple[sp.csr_matrix, np.ndarray]:
    n = adj.shape[0]
    proj = sp.csr_matrix((np.ones(n), (np.arange(n), cmap)), shape=(n, nc))
    coarse = (proj.T @ adj @ proj).tocsr()
    coarse.setdiag(0)
    coarse.eliminate_zeros()
    coarse.sort_indices()
    return coarse, np.bincount(cmap, weights=vwgt, minlength=nc).astype(np.int64)


class _State:
    """Assignment plus per-node connectivity to every part."""

    def __init__(self, adj: sp.csr_matrix, vwgt: np.ndarray, part: np.ndarray, k: int):
        self.adj = adj
        self.vwgt = vwgt
        self.part = part.copy()
        self.k = k
        onehot = sp.csr_matrix((np.ones(part.size), (np.arange(part.size), part)), shape=(part.size, k))
        self.conn = np.asarray((adj @ onehot).todense(), dtype=np.float64)
        self.pw = np.bincount(part, weights=vwgt, minlength=k).astype(np.float64)
        self.count = np.bincount(part, minlength=k)
        self.cut = float((self.conn.sum() - self.conn[np.arange(part.size), part].sum()) / 2)

    def move(self, v: int, q: int) -> None:
        p = self.part[v]
        gain = self.conn[v, q] - self.conn[v, p]
        lo, hi = self.adj.indptr[v], self.adj.indptr[v + 1]
        nbrs, w = self.adj.indices[lo:hi], self.adj.data[lo:hi]
        self.conn[nbrs, p] -= w
        self.conn[nbrs, q] += w
        self.part[v] = q
        self.pw[p] -= self.vwgt[v]
        self.pw[q] += self.vwgt[v]
        self.count[p] -= 1
        self.count[q] += 1
        self.cut -= gain

    def neighbors(self, v: int) -> np.ndarray:
        return self.adj.indices[self.adj.indptr[v]:self.adj.indptr[v + 1]]

    def best_move(self, v: int, cap: float) -> tuple[float, int] | None:
        """Best feasible move of ``v`` into a part it is adjacent to."""
        p = self.part[v]
        if self.count[p] <= 1:
            return None
        row = self.conn[v]
        room = (self.pw + self.vwgt[v] <= cap) & (row > 0)
        room[p] = False
        if not room.any():
            return None
        cand = np.flatnonzero(room)
        q = int(cand[np.argmax(row[cand])])
        return float(row[q] - row[p]), q


def fm_pass(state: _State, cap: float, max_stall: int | None = None) -> tuple[float, float]:
    """One boundary FM pass: greedy max-gain single-node moves with locking.

    Moves may temporarily worsen the cut; the pass rolls back to the best
    prefix it saw, so the returned (before, after) cut never increases.
    Candidates sit in a max-gain priority queue (lowest node index first on
    ties) whose stale entries are re-scored when popped.
    """
    n = state.part.size
    if max_stall is None:
        max_stall = max(25, n // 50)
    before = state.cut
    locked = np.zeros(n, dtype=bool)
    heap: list[tuple[float, int, int]] = []
    boundary = np.flatnonzero((state.conn.sum(axis=1) - state.conn[np.arange(n), state.part]) > 0)
    for v in boundary.tolist():
        bm = state.best_move(v, cap)
        if bm is not None:
            heapq.heappush(heap, (-bm[0], v, bm[1]))
    moves: list[tuple[int, int]] = []
    best_cut, best_len = state.cut, 0
    while heap:
        neg_gain, v, q = heapq.heappop(heap)
        if locked[v]:
            continue
        bm = state.best_move(v, cap)
        if bm is None:
            continue
        if bm != (-neg_gain, q):
            heapq.heappush(heap, (-bm[0], v, bm[1]))
            continue
        p = int(state.part[v])
        state.move(v, q)
        locked[v] = True
        moves.append((v, p))
        if state.cut < best_cut:
            best_cut, best_len = state.cut, len(moves)
        elif len(moves) - best_len > max_stall:
            break
        for u in state.neighbors(v).tolist():
            if not locked[u]:
                bm = state.best_move(u, cap)
                if bm is not None:
                    heapq.heappush(heap, (-bm[0], u, bm[1]))
    for v, p in reversed(moves[best_len:]):
        state.move(v, p)
    return float(before), float(state.cut)


def _fill_empty(state: _State) -> None:
    for q in range(state.k):
        if state.count[q] > 0:
            continue
        donors = np.flatnonzero(state.count[state.part] > 1)
        gains = state.conn[donors, q] - state.conn[donors, state.part[donors]]
        # lightest vertices first keeps balance, then best gain, then lowest index
        order = np.lexsort((donors, -gains, state.vwgt[donors]))
        state.move(int(donors[order[0]]), q)


def rebalance(state: _State, cap: float) -> None:
    """Move nodes out of overweight parts, best cut gain first."""
    while True:
        over = np.flatnonzero(state.pw > cap)
        if over.size == 0:
            return
        p = int(over[np.argmax(state.pw[over])])
        nodes = np.flatnonzero(state.part == p)
        fits = state.pw[None, :] + state.vwgt[nodes, None] <= cap
        fits[:, p] = False
        if nodes.size < 2 or not fits.any():
            return
        gains = np.where(fits, state.conn[nodes] - state.conn[nodes, p][:, None], -np.inf)
        flat = int(np.argmax(gains))  # row-major argmax: lowest node, then lowest part on ties
        v, q = divmod(flat, state.k)
        state.move(int(nodes[v]), q)


def grow_regions(adj: sp.csr_matrix, vwgt: np.ndarray, k: int, cap: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Greedy region growing: grow parts 0..k-2 from random seeds, rest to k-1.

    Each region absorbs the frontier node most strongly connected to it until
    it reaches the average part weight. When a region's component runs dry a
    new random seed is taken, so disconnected graphs are handled.
    """
    n = adj.shape[0]
    target = vwgt.sum() / k
    part = np.full(n, -1, dtype=np.int64)
    for p in range(k - 1):
        weight = 0.0
        conn = {}
        heap: list[tuple[float, int]] = []
        rejected = np.zeros(n, dtype=bool)
        while weight < target:
            if not heap:
                free = np.flatnonzero((part < 0) & ~rejected)
                if free.size <= k - 1 - p:
                    break
                v = int(free[rng.integers(free.size)])
                heap.append((0.0, v))
                conn[v] = 0.0
            neg, v = heapq.heappop(heap)
            if part[v] >= 0 or -neg != conn.get(v, 0.0):
                continue
            if weight > 0 and weight + vwgt[v] > cap:
                rejected[v] = True
                continue
            part[v] = p
            weight += vwgt[v]
            for idx in range(adj.indptr[v], adj.indptr[v + 1]):
                u = adj.indices[idx]
                if part[u] < 0:
                    conn[u] = conn.get(u, 0.0) + adj.data[idx]
                    heapq.heappush(heap, (-conn[u], u))
    part[part < 0] = k - 1
    return part


def _strict_cap(total: float, k: int, eps: float) -> float:
    return max(math.floor((1 + eps) * total / k + 1e-9), math.ceil(total / k - 1e-9))


def partition_multilevel(g, k: int, eps: float = DEFAULT_EPS, seed: int = 0,
                         n_init: int = 4) -> Partition:
    """Balanced k-way partition minimizing edge cut.

    ``g`` is a SocialGraph (symmetrized here) or an undirected sparse
    adjacency. Part weights are capped at ``max(floor((1+eps) n/k),
    ceil(n/k))``; when ``eps`` leaves room for that, the returned imbalance
    is at most ``eps``. ``info`` records per-pass cuts and projection checks.
    """
    adj = as_adjacency(g)
    n = adj.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    if k == 1:
        return Partition(np.zeros(n, dtype=np.int64), 1, 0, 0.0, seed, {"fm_passes": [], "projections": []})
    if n == 0:
        raise ValueError("cannot partition an empty graph into more than one cluster")
    if k > n:
        raise ValueError(f"more clusters than nodes ({k} > {n})")
    rng = np.random.default_rng(seed)

    coarsen_to = max(20 * k, 200)
    max_vwgt = max(2.0, 1.5 * n / coarsen_to)
    levels = [_Level(adj, np.ones(n, dtype=np.int64))]
    while levels[-1].adj.shape[0] > coarsen_to:
        lvl = levels[-1]
        cmap, nc = heavy_edge_matching(lvl.adj, lvl.vwgt, rng, max_vwgt)
        if nc > 0.9 * lvl.adj.shape[0]:
            break
        lvl.cmap = cmap
        cadj, cvw = contract(lvl.adj, lvl.vwgt, cmap, nc)
        levels.append(_Level(cadj, cvw))

    info: dict = {"levels": [int(l.adj.shape[0]) for l in levels], "fm_passes": [], "projections": []}
    strict = _strict_cap(n, k, eps)

    def level_cap(lvl: _Level) -> float:
        return max(strict, n / k + lvl.vwgt.max())

    coarsest = levels[-1]
    cap = level_cap(coarsest) if len(levels) > 1 else strict
    best = None
    for _ in range(n_init):
        part = grow_regions(coarsest.adj, coarsest.vwgt, k, cap, rng)
        st = _State(coarsest.adj, coarsest.vwgt, part, k)
        _fill_empty(st)
        rebalance(st, cap)
        fm_pass(st, cap)
        key = (max(st.pw.max() - cap, 0.0), st.cut)
        if best is None or key < best[0]:
            best = (key, st.part.copy())
    part = best[1]

    for depth in range(len(levels) - 1, -1, -1):
        lvl = levels[depth]
        if depth < len(levels) - 1:
            coarse_cut = _cut(levels[depth + 1].adj, part)
            part = part[lvl.cmap]
            info["projections"].append((coarse_cut, _cut(lvl.adj, part)))
        cap = strict if depth == 0 else level_cap(lvl)
        st = _State(lvl.adj, lvl.vwgt, part, k)
        if depth == 0:
            _fill_empty(st)
        rebalance(st, cap)
        info["fm_passes"].append((depth, *fm_pass(st, cap)))
        if depth == 0:
            info["fm_passes"].append((depth, *fm_pass(st, cap)))
        part = st.part

    return Partition(part, k, int(round(_cut(adj, part))), imbalance(part, k), seed, info)


# ---------------------------------------------------------------------------
# Louvain


def modularity(adj: sp.csr_matrix, comm: np.ndarray, resolution: float = 1.0) -> float:
    """Newman modularity of ``comm`` on a symmetric weighted adjacency."""
    m2 = adj.sum()
    if m2 == 0:
        return 0.0
    a = adj.tocoo()
    inside = np.bincount(comm[a.row], weights=a.data * (comm[a.row] == comm[a.col]))
    tot = np.bincount(comm, weights=np.asarray(adj.sum(axis=1)).ravel())
    return float(inside.sum() / m2 - resolution * np.sum((tot / m2) ** 2))


def _local_moves(adj: sp.csr_matrix, resolution: float, rng: np.random.Generator) -> np.ndarray:
    n = adj.shape[0]
    m2 = adj.sum()
    strength = np.asarray(adj.sum(axis=1)).ravel()
    comm = np.arange(n)
    tot = strength.copy()
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    moved = True
    while moved:
        moved = False
        for v in rng.permutation(n).tolist():
            c_old = comm[v]
            links: dict[int, float] = {}
            for idx in range(indptr[v], indptr[v + 1]):
                u = indices[idx]
                if u != v:
                    links[comm[u]] = links.get(comm[u], 0.0) + data[idx]
            tot[c_old] -= strength[v]
            scale = resolution * strength[v] / m2
            best_c = c_old
            best_gain = links.get(c_old, 0.0) - tot[c_old] * scale
            for c in sorted(links):
                gain = links[c] - tot[c] * scale
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            tot[best_c] += strength[v]
            if best_c != c_old:
                comm[v] = best_c
                moved = True
    _, comm = np.unique(comm, return_inverse=True)
    return comm


def partition_louvain(g, resolution: float = 1.0, seed: int = 0, min_gain: float = 1e-7) -> Partition:
    """Two-phase Louvain modularity optimization.

    Local moves run to convergence, communities are aggregated, and the two
    steps repeat until a round improves modularity by no more than
    ``min_gain``. ``info["phases"]`` holds (modularity before, after) for every
    local-move phase.
    """
    adj = as_adjacency(g)
    n = adj.shape[0]
    if n == 0:
        raise ValueError("cannot run Louvain on an empty graph")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    rng = np.random.default_rng(seed)
    assign = np.arange(n)
    info: dict = {"phases": []}
    if adj.nnz == 0:
        return Partition(assign, n, 0, imbalance(assign, n), seed, info)
    cur = adj.copy()
    q = modularity(adj, assign, resolution)
    while True:
        comm = _local_moves(cur, resolution, rng)
        new_assign = comm[assign]
        q_new = modularity(adj, new_assign, resolution)
        info["phases"].append((q, q_new))
        if q_new - q <= min_gain or comm.max() + 1 == cur.shape[0]:
            if q_new > q:
                assign = new_assign
            break
        assign, q = new_assign, q_new
        nc = int(comm.max()) + 1
        proj = sp.csr_matrix((np.ones(comm.size), (np.arange(comm.size), comm)), shape=(comm.size, nc))
        cur = (proj.T @ cur @ proj).tocsr()
    # relabel by first appearance so cluster ids are independent of internal bookkeeping
    _, first = np.unique(assign, return_index=True)
    relabel = np.argsort(np.argsort(first))
    assign = relabel[assign].astype(np.int64)
    k = int(assign.max()) + 1
    return Partition(assign, k, int(round(_cut(adj, assign))), imbalance(assign, k), seed, info)
