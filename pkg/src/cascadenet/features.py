"""Per-cascade feature vectors.

Each cascade's star graph is augmented with earlier interactions among its
participants, embedded with DeepWalk, combined with per-user and text
features into a fixed-width vector, and the whole matrix is reduced by PCA.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numba
import numpy as np

from .ingest import Cascade, SocialGraph, UserIndex

log = logging.getLogger(__name__)

LAYOUT_VERSION = 1
SECONDS_PER_DAY = 86400.0
COUNTERS = ("followers", "friends", "statuses", "favorites", "listed",
            "impression", "reply", "quote", "like")


@dataclass(frozen=True)
class UserProfile:
    created_at: int | None = None
    verified: bool = False
    lang: str | None = None
    counters: Mapping[str, float] = field(default_factory=dict)


def read_user_profiles(path: str | Path, users: UserIndex) -> dict[int, UserProfile]:
    """Read ``users.jsonl``; users never seen elsewhere are interned too."""
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                counters = {k: float(obj[k]) for k in COUNTERS if obj.get(k) is not None}
                created = obj.get("created_at")
                out[users.intern(str(obj["user"]))] = UserProfile(
                    None if created is None else int(created), bool(obj.get("verified", False)),
                    obj.get("lang"), counters)
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("%s:%d: malformed user profile (%s)", path, lineno, exc)
    return out


def write_user_profiles(path: str | Path, profiles: Mapping[int, UserProfile], users: UserIndex) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for uid in sorted(profiles):
            p = profiles[uid]
            obj = {"user": users.names[uid], "created_at": p.created_at, "verified": p.verified, "lang": p.lang}
            obj.update({k: v for k, v in p.counters.items()})
            fh.write(json.dumps(obj) + "\n")


@dataclass(frozen=True)
class FeatureConfig:
    cap: int = 50
    pca_dim: int = 60
    deepwalk: bool = True
    walks_per_node: int = 10
    walk_length: int = 80
    embed_dim: int = 128
    window: int = 5
    neg_samples: int = 5
    sg_epochs: int = 1
    account_creation: bool = True
    verified: bool = True
    language: bool = True
    reaction_time: bool = True
    counters: tuple[str, ...] = COUNTERS
    sentiment: bool = True
    topics: bool = True
    topic_slots: int = 3

    def __post_init__(self):
        if self.cap < 1:
            raise ValueError("cap must be at least 1")
        unknown = set(self.counters) - set(COUNTERS)
        if unknown:
            raise ValueError(f"unknown counters: {sorted(unknown)}")

    @property
    def scalar_width(self) -> int:
        return (int(self.account_creation) + int(self.verified) + int(self.language)
                + int(self.reaction_time) + 2 * len(self.counters))

    @property
    def row_width(self) -> int:
        return (self.embed_dim if self.deepwalk else 0) + self.scalar_width

    @property
    def text_width(self) -> int:
        return 3 * int(self.sentiment) + self.topic_slots * int(self.topics) + 1

    @property
    def raw_width(self) -> int:
        return self.cap * self.row_width + self.text_width

    def replace(self, **changes) -> "FeatureConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return FeatureConfig(**values)


# Per-dataset settings: retweeter cap, PCA width and the available counters.
PRESETS = {
    "us_election": FeatureConfig(cap=250, pca_dim=90,
                                 counters=("followers", "friends", "statuses", "favorites")),
    "mm_covid": FeatureConfig(cap=50, pca_dim=60, topics=False,
                              counters=("followers", "friends", "listed", "impression", "reply", "quote", "like")),
    "fakehealth": FeatureConfig(cap=60, pca_dim=60, reaction_time=False,
                                counters=("followers", "friends", "statuses", "favorites")),
}


# ---------------------------------------------------------------------------
# cascade subgraph


@dataclass(frozen=True, eq=False)
class AugmentedCascadeGraph:
    """Undirected simple graph over a cascade's participants.

    ``users[0]`` is the root user and the rest follow retweet order;
    ``edges`` holds local index pairs (i < j), sorted.
    """

    users: np.ndarray
    edges: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.users.size)

    def edge_set(self) -> set[tuple[int, int]]:
        """Edges as pairs of user ids, smaller id first."""
        u = self.users
        return {(min(u[a], u[b]), max(u[a], u[b])) for a, b in self.edges.tolist()}

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_nodes
        both = np.concatenate([self.edges, self.edges[:, ::-1]]) if self.edges.size else np.zeros((0, 2), np.int64)
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        indptr = np.concatenate([[0], np.cumsum(np.bincount(both[:, 0], minlength=n))]).astype(np.int64)
        return indptr, both[:, 1].astype(np.int64)

    def is_connected(self) -> bool:
        indptr, indices = self.csr()
        seen = np.zeros(self.n_nodes, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for u in indices[indptr[v]:indptr[v + 1]]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(int(u))
        return bool(seen.all())


def augment_cascade(c: Cascade, g: SocialGraph) -> AugmentedCascadeGraph:
    """Star graph of the cascade plus each retweeter's earlier out-edges.

    For a retweeter i who retweeted at time t, every graph edge i->j with
    earliest timestamp < t and j a participant becomes an undirected edge.
    """
    users = np.array(c.participants, dtype=np.int64)
    local = {u: i for i, u in enumerate(users.tolist())}
    edges = {(0, i) for i in range(1, users.size)}
    for i, (u, t) in enumerate(c.retweeters, start=1):
        if u >= g.n_nodes:
            continue
        targets, stamps = g.out_neighbors(u)
        for j, ts in zip(targets.tolist(), stamps.tolist()):
            if ts < t:
                jl = local.get(j)
                if jl is not None and jl != i:
                    edges.add((min(i, jl), max(i, jl)))
    arr = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    return AugmentedCascadeGraph(users, arr)


# ---------------------------------------------------------------------------
# DeepWalk


def derive_seed(global_seed: int, key: str) -> int:
    digest = hashlib.blake2b(f"{global_seed}:{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def random_walks(indptr: np.ndarray, indices: np.ndarray, walks_per_node: int, walk_length: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Uniform random walks, ``walks_per_node`` rounds over all start nodes.

    Returns an array of shape (n * walks_per_node, walk_length). A node with
    no neighbours repeats itself.
    """
    n = indptr.size - 1
    starts = np.tile(np.arange(n, dtype=np.int64), walks_per_node)
    walks = np.empty((starts.size, walk_length), dtype=np.int64)
    walks[:, 0] = starts
    deg = np.diff(indptr)
    for step in range(1, walk_length):
        cur = walks[:, step - 1]
        d = deg[cur]
        pick = np.floor(rng.random(cur.size) * d).astype(np.int64)
        nxt = cur.copy()
        moving = d > 0
        nxt[moving] = indices[indptr[cur[moving]] + pick[moving]]
        walks[:, step] = nxt
    return walks


@numba.njit(cache=True)
def _splitmix(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = z ^ (z >> np.uint64(31))
    return state, z


@numba.njit(cache=True, fastmath=True)
def _sgns(walks, syn0, syn1, cum_table, window, negative, epochs, lr0, min_lr, seed):
    """Skip-gram with negative sampling over the walk corpus (word2vec style).

    Each centre word predicts the words within a randomly shrunk window;
    negatives come from the unigram^0.75 table and skip the true target.
    """
    n_walks, length = walks.shape
    dim = syn0.shape[1]
    total = epochs * n_walks * length
    table_total = cum_table[-1]
    state = np.uint64(seed)
    neu1e = np.zeros(dim)
    done = 0
    for _ in range(epochs):
        for w in range(n_walks):
            for pos in range(length):
                lr = lr0 - (lr0 - min_lr) * done / total
                done += 1
                state, r = _splitmix(state)
                b = np.int64(r % np.uint64(window))
                lo = max(0, pos - window + b)
                hi = min(length, pos + window + 1 - b)
                word = walks[w, pos]
                for pos2 in range(lo, hi):
                    if pos2 == pos:
                        continue
                    ctx = walks[w, pos2]
                    neu1e[:] = 0.0
                    for d in range(negative + 1):
                        if d == 0:
                            target = ctx
                            label = 1.0
                        else:
                            state, r = _splitmix(state)
                            x = np.int64(r % np.uint64(table_total))
                            target = np.searchsorted(cum_table, x, side="right")
                            if target == ctx:
                                continue
                            label = 0.0
                        f = 0.0
                        for k in range(dim):
                            f += syn0[word, k] * syn1[target, k]
                        if f > 6.0:
                            sig = 1.0 / (1.0 + math.exp(-6.0))
                        elif f < -6.0:
                            sig = 1.0 / (1.0 + math.exp(6.0))
                        else:
                            sig = 1.0 / (1.0 + math.exp(-f))
                        g = (label - sig) * lr
                        for k in range(dim):
                            neu1e[k] += g * syn1[target, k]
                            syn1[target, k] += g * syn0[word, k]
                    for k in range(dim):
                        syn0[word, k] += neu1e[k]


def deepwalk_embed(ag: AugmentedCascadeGraph, walks_per_node: int = 10, walk_length: int = 80,
                   dim: int = 128, window: int = 5, neg_samples: int = 5, epochs: int = 1,
                   seed: int = 0, lr: float = 0.025, min_lr: float = 1e-4) -> np.ndarray:
    """DeepWalk node embeddings, one row per node of ``ag`` in node order."""
    n = ag.n_nodes
    if n == 0:
        raise ValueError("cannot embed an empty graph")
    rng = np.random.default_rng(seed)
    indptr, indices = ag.csr()
    walks = random_walks(indptr, indices, walks_per_node, walk_length, rng)
    counts = np.bincount(walks.ravel(), minlength=n).astype(np.float64)
    # integer cumulative table keeps sampling exact and platform independent
    weights = np.floor(counts ** 0.75 * 1e6 / max(counts.max() ** 0.75, 1.0)).astype(np.int64) + 1
    cum_table = np.cumsum(weights).astype(np.int64)
    syn0 = (rng.random((n, dim)) - 0.5) / dim
    syn1 = np.zeros((n, dim))
    _sgns(walks, syn0, syn1, cum_table, window, neg_samples, epochs, lr, min_lr,
          int(rng.integers(1, 2**62)))
    return syn0


# ---------------------------------------------------------------------------
# assembly


def _language_codes(profiles: Mapping[int, UserProfile]) -> dict[str, int]:
    """Languages ranked by frequency (1 = most common, ties alphabetical); 0 means unknown."""
    freq = Counter(p.lang for p in profiles.values() if p.lang)
    ranked = sorted(freq, key=lambda lang: (-freq[lang], lang))
    return {lang: i + 1 for i, lang in enumerate(ranked)}


def user_scalar_rows(c: Cascade, profiles: Mapping[int, UserProfile], cfg: FeatureConfig,
                     lang_codes: Mapping[str, int]) -> np.ndarray:
    """Raw scalar features for the first ``cap`` participants, shape (rows, scalar_width)."""
    times = [(c.root_user, c.root_timestamp)] + list(c.retweeters)
    rows = np.zeros((min(len(times), cfg.cap), cfg.scalar_width))
    empty = UserProfile()
    for r, (u, t) in enumerate(times[:cfg.cap]):
        p = profiles.get(u, empty)
        vals: list[float] = []
        if cfg.account_creation:
            vals.append(0.0 if p.created_at is None else p.created_at / SECONDS_PER_DAY)
        if cfg.verified:
            vals.append(float(p.verified))
        if cfg.language:
            vals.append(float(lang_codes.get(p.lang, 0)) if p.lang else 0.0)
        if cfg.reaction_time:
            vals.append(max(0.0, float(t - c.root_timestamp)))
        for name in cfg.counters:
            v = p.counters.get(name)
            vals.extend((0.0, 0.0) if v is None else (math.log1p(max(v, 0.0)), 1.0))
        rows[r] = vals
    return rows


def text_block(c: Cascade, cfg: FeatureConfig) -> np.ndarray:
    out: list[float] = []
    if cfg.sentiment:
        if c.sentiment is None:
            out.extend((0.0, 0.0, 0.0))
        else:
            out.extend((float(c.sentiment[0]), float(c.sentiment[1]), 1.0))
    if cfg.topics:
        topics = (c.topics or [])[:cfg.topic_slots]
        slots = [float(t + 1) for t in topics] + [0.0] * (cfg.topic_slots - len(topics))
        out.extend(slots)
    out.append(float(c.size))
    return np.array(out)


def assemble_cascade_vector(c: Cascade, embedding: np.ndarray | None, scalars: np.ndarray,
                            cfg: FeatureConfig) -> np.ndarray:
    """Flatten one cascade into a vector of length ``cfg.raw_width``.

    Layout: ``cap`` user blocks in participant order (root first), each
    ``[deepwalk row | scalar features]``, zero-padded past the last
    participant, then the text block ``[sentiment label, score, present |
    topic slots | cascade size]``.
    """
    rows = min(c.size, cfg.cap)
    users = np.zeros((cfg.cap, cfg.row_width))
    off = 0
    if cfg.deepwalk:
        users[:rows, :cfg.embed_dim] = embedding[:rows]
        off = cfg.embed_dim
    users[:rows, off:] = scalars[:rows]
    return np.concatenate([users.ravel(), text_block(c, cfg)])


# ---------------------------------------------------------------------------
# PCA


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    basis: np.ndarray
    mean: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape

    def transform(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw) - self.mean) @ self.basis

    def save(self, path: str | Path) -> None:
        header = {"M": int(self.rows.shape[0]), "D_pca": int(self.rows.shape[1]),
                  "D_raw": int(self.basis.shape[0]), "layout_version": LAYOUT_VERSION}
        np.savez(path, header=json.dumps(header), rows=self.rows, basis=self.basis, mean=self.mean,
                 explained_variance_ratio=self.explained_variance_ratio)

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMatrix":
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            if header.get("layout_version") != LAYOUT_VERSION:
                raise ValueError(f"{path}: unsupported feature layout {header.get('layout_version')}")
            fm = cls(z["rows"], z["basis"], z["mean"], z["explained_variance_ratio"])
        if fm.rows.shape != (header["M"], header["D_pca"]):
            raise ValueError(f"{path}: matrix shape disagrees with header")
        return fm


def pca_fit_transform(raw: np.ndarray, target_dim: int) -> FeatureMatrix:
    """Project mean-centred rows onto the top right singular vectors.

    Component signs are fixed so the largest-magnitude loading is positive.
    """
    raw = np.asarray(raw, dtype=np.float64)
    m, d = raw.shape
    if not 1 <= target_dim <= min(m, d):
        raise ValueError(f"target_dim={target_dim} must lie in [1, min(M, D_raw)={min(m, d)}]")
    mean = raw.mean(axis=0)
    centred = raw - mean
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    basis = vt[:target_dim].T.copy()
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(target_dim)])
    flip[flip == 0] = 1.0
    basis *= flip
    var = s ** 2
    total = var.sum()
    evr = var[:target_dim] / total if total > 0 else np.zeros(target_dim)
    return FeatureMatrix(centred @ basis, basis, mean, evr)


# ---------------------------------------------------------------------------
# driver


def featurize_raw(cascades: Sequence[Cascade], g: SocialGraph, profiles: Mapping[int, UserProfile],
                  cfg: FeatureConfig, seed: int = 0) -> np.ndarray:
    """Raw (pre-PCA) feature matrix, one row per cascade.

    Scalar user features are z-normalized per column using every real
    participant row, so zero padding stays zero.
    """
    lang_codes = _language_codes(profiles)
    embeddings, scalars = [], []
    for c in cascades:
        if cfg.deepwalk:
            ag = augment_cascade(c, g)
            embeddings.append(deepwalk_embed(ag, cfg.walks_per_node, cfg.walk_length, cfg.embed_dim,
                                             cfg.window, cfg.neg_samples, cfg.sg_epochs,
                                             seed=derive_seed(seed, c.cascade_id)))
        else:
            embeddings.append(None)
        scalars.append(user_scalar_rows(c, profiles, cfg, lang_codes))
    if scalars and cfg.scalar_width:
        stacked = np.concatenate(scalars)
        mu = stacked.mean(axis=0)
        sd = stacked.std(axis=0)
        sd[sd == 0] = 1.0
        scalars = [(s - mu) / sd for s in scalars]
    raw = np.zeros((len(cascades), cfg.raw_width))
    for i, c in enumerate(cascades):
        raw[i] = assemble_cascade_vector(c, embeddings[i], scalars[i], cfg)
    return raw


def featurize(cascades: Sequence[Cascade], g: SocialGraph, profiles: Mapping[int, UserProfile],
              cfg: FeatureConfig, seed: int = 0) -> FeatureMatrix:
    raw = featurize_raw(cascades, g, profiles, cfg, seed)
    dim = min(cfg.pca_dim, *raw.shape)
    if dim < cfg.pca_dim:
        log.warning("pca_dim %d exceeds matrix shape %s; using %d", cfg.pca_dim, raw.shape, dim)
    return pca_fit_transform(raw, dim)
