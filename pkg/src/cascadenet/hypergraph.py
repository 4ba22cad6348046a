"""Cascade hypergraph: cascades are nodes, user clusters become hyperedges."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .ingest import Cascade, Label
from .partition import Partition

_LABEL_NAMES = {1: Label.FAKE.value, 0: Label.NONFAKE.value, -1: Label.UNKNOWN.value}
_LABEL_CODES = {v: k for k, v in _LABEL_NAMES.items()}


@dataclass(eq=False)
class CascadeHypergraph:
    """Hyperedges over ``n_nodes`` cascades, kept as sorted index arrays.

    ``labels`` holds 1 for fake, 0 for non-fake and -1 for unknown.
    """

    n_nodes: int
    hyperedges: list[np.ndarray]
    labels: np.ndarray
    weights: np.ndarray | None = None
    cascade_ids: list[str] | None = None
    info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.hyperedges = [np.unique(np.asarray(e, dtype=np.int64)) for e in self.hyperedges]
        if self.weights is None:
            self.weights = np.ones(len(self.hyperedges))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.n_nodes,):
            raise ValueError(f"expected {self.n_nodes} labels, got {self.labels.shape}")
        if self.weights.shape != (len(self.hyperedges),):
            raise ValueError("one weight per hyperedge required")
        for e in self.hyperedges:
            if e.size and (e[0] < 0 or e[-1] >= self.n_nodes):
                raise ValueError("hyperedge refers to a node outside the hypergraph")

    @property
    def n_edges(self) -> int:
        return len(self.hyperedges)

    @cached_property
    def incidence(self) -> tuple[np.ndarray, np.ndarray]:
        """(node_index, hyperedge_index) pairs, grouped by hyperedge."""
        if not self.hyperedges:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        nodes = np.concatenate(self.hyperedges)
        edges = np.repeat(np.arange(self.n_edges), [e.size for e in self.hyperedges])
        return nodes, edges

    @cached_property
    def incidence_matrix(self) -> sp.csr_matrix:
        nodes, edges = self.incidence
        return sp.csr_matrix((np.ones(nodes.size), (nodes, edges)), shape=(self.n_nodes, self.n_edges))

    @property
    def node_degree(self) -> np.ndarray:
        return np.bincount(self.incidence[0], minlength=self.n_nodes)

    @property
    def edge_degree(self) -> np.ndarray:
        return np.array([e.size for e in self.hyperedges], dtype=np.int64)

    def permuted(self, perm: np.ndarray) -> "CascadeHypergraph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        labels = np.empty_like(self.labels)
        labels[perm] = self.labels
        return CascadeHypergraph(self.n_nodes, [perm[e] for e in self.hyperedges], labels, self.weights.copy())

    def dump(self, path: str | Path, labels_path: str | Path) -> None:
        with Path(path).open("w") as fh:
            for j, e in enumerate(self.hyperedges):
                fh.write(" ".join(["h", str(j), *map(str, e.tolist())]) + "\n")
        with Path(labels_path).open("w") as fh:
            for i, lab in enumerate(self.labels.tolist()):
                fh.write(f"{i} {_LABEL_NAMES[lab]}\n")

    @classmethod
    def load(cls, path: str | Path, labels_path: str | Path) -> "CascadeHypergraph":
        labels = []
        for line in Path(labels_path).read_text().splitlines():
            if line.strip():
                idx, name = line.split()
                if int(idx) != len(labels):
                    raise ValueError(f"{labels_path}: labels out of order at {idx}")
                labels.append(_LABEL_CODES[name])
        edges = []
        for line in Path(path).read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] != "h" or int(parts[1]) != len(edges):
                raise ValueError(f"{path}: bad hyperedge line {line!r}")
            edges.append([int(x) for x in parts[2:]])
        return cls(len(labels), edges, np.array(labels, dtype=np.int64))


def _labels_of(cascades: Sequence[Cascade]) -> np.ndarray:
    return np.array([c.label.target for c in cascades], dtype=np.int64)


def build_hypergraph(p: Partition, u2c: Mapping[int, set[str]], cascades: Sequence[Cascade],
                     drop_singletons: bool = False) -> CascadeHypergraph:
    """Replace every user cluster by the cascades its users took part in.

    Hyperedge j is the deduplicated union of ``u2c[u]`` over users in cluster
    j, in cluster-id order; empty hyperedges are dropped. Users outside the
    partitioned graph are skipped and counted in ``info``.
    """
    index = {c.cascade_id: i for i, c in enumerate(cascades)}
    members: list[set[int]] = [set() for _ in range(p.k)]
    skipped = 0
    for user, cids in u2c.items():
        if user < 0 or user >= p.n:
            skipped += 1
            continue
        bucket = members[p.assignment[user]]
        for cid in cids:
            i = index.get(cid)
            if i is not None:
                bucket.add(i)
    edges = [sorted(m) for m in members if m and (len(m) > 1 or not drop_singletons)]
    h = CascadeHypergraph(len(cascades), edges, _labels_of(cascades),
                          cascade_ids=[c.cascade_id for c in cascades])
    h.info["skipped_users"] = skipped
    h.info["isolated_nodes"] = int((h.node_degree == 0).sum())
    return h


def add_hashtag_hyperedges(h: CascadeHypergraph, cascades: Sequence[Cascade]) -> CascadeHypergraph:
    """Append one hyperedge per hashtag shared by at least two root tweets.

    New hyperedges follow the order in which hashtags first appear.
    """
    groups: dict[str, list[int]] = {}
    for i, c in enumerate(cascades):
        for tag in dict.fromkeys(c.hashtags or ()):
            groups.setdefault(tag, []).append(i)
    extra = [g for g in groups.values() if len(g) >= 2]
    if not extra:
        return h
    out = CascadeHypergraph(h.n_nodes, h.hyperedges + extra, h.labels.copy(),
                            np.concatenate([h.weights, np.ones(len(extra))]), h.cascade_ids, dict(h.info))
    out.info["hashtag_hyperedges"] = len(extra)
    out.info["isolated_nodes"] = int((out.node_degree == 0).sum())
    return out


def hypergraph_stats(h: CascadeHypergraph) -> dict:
    de = h.edge_degree
    return {
        "nodes": h.n_nodes,
        "hyperedges": h.n_edges,
        "fake": int((h.labels == 1).sum()),
        "nonfake": int((h.labels == 0).sum()),
        "unknown": int((h.labels == -1).sum()),
        "min_edge_degree": int(de.min()) if de.size else 0,
        "mean_edge_degree": float(de.mean()) if de.size else 0.0,
        "max_edge_degree": int(de.max()) if de.size else 0,
        "isolated_nodes": int((h.node_degree == 0).sum()) if h.n_nodes else 0,
        "incidences": int(de.sum()),
    }
