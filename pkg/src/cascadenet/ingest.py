"""Interaction parsing, the user-user social graph and retweet cascades.

User-id strings are interned to dense integers by a shared :class:`UserIndex`
as soon as they are read; everything downstream works on those integers.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

log = logging.getLogger(__name__)


class Kind(str, Enum):
    RETWEET = "retweet"
    REPLY = "reply"
    MENTION = "mention"


class Label(str, Enum):
    FAKE = "fake"
    NONFAKE = "nonfake"
    UNKNOWN = "unknown"

    @property
    def target(self) -> int:
        """Class index used by the classifier (fake=1, nonfake=0, unknown=-1)."""
        return {Label.FAKE: 1, Label.NONFAKE: 0, Label.UNKNOWN: -1}[self]


class UserIndex:
    """Bidirectional map between user-id strings and dense integers."""

    def __init__(self, names: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self.names: list[str] = []
        for name in names:
            self.intern(name)

    def intern(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self.names)
            self._ids[name] = idx
            self.names.append(name)
        return idx

    def get(self, name: str) -> int | None:
        return self._ids.get(name)

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.names))

    @classmethod
    def load(cls, path: str | Path) -> "UserIndex":
        return cls(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class InteractionRecord:
    kind: Kind
    source: int
    target: int
    timestamp: int
    tweet_id: str = ""
    cascade_id: str | None = None


class InteractionLog(list):
    """A list of :class:`InteractionRecord` plus parse diagnostics."""

    def __init__(self, records=(), users: UserIndex | None = None):
        super().__init__(records)
        self.users = users if users is not None else UserIndex()
        self.malformed_count = 0
        self.unknown_kind_count = 0


def _iter_json_lines(path: Path) -> Iterator[tuple[int, str]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                yield lineno, line


def parse_interactions(path: str | Path, users: UserIndex | None = None) -> InteractionLog:
    """Read ``interactions.jsonl``.

    Malformed lines and unknown interaction kinds are skipped and counted on
    the returned log; an unreadable file raises ``OSError``.
    """
    path = Path(path)
    out = InteractionLog(users=users)
    for lineno, line in _iter_json_lines(path):
        try:
            obj = json.loads(line)
            kind_raw = obj["kind"]
            src, dst = str(obj["src"]), str(obj["dst"])
            ts = obj["ts"]
            if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
                raise ValueError(f"bad timestamp {ts!r}")
            tweet = str(obj.get("tweet", ""))
            cascade = obj.get("cascade")
        except (ValueError, KeyError, TypeError) as exc:
            out.malformed_count += 1
            log.warning("%s:%d: malformed interaction (%s)", path, lineno, exc)
            continue
        try:
            kind = Kind(str(kind_raw).lower())
        except ValueError:
            out.unknown_kind_count += 1
            log.warning("%s:%d: unknown interaction kind %r", path, lineno, kind_raw)
            continue
        if kind is not Kind.RETWEET or cascade is None:
            cascade = None
        out.append(InteractionRecord(kind, out.users.intern(src), out.users.intern(dst), ts,
                                     tweet, None if cascade is None else str(cascade)))
    return out


def write_interactions(path: str | Path, records: Iterable[InteractionRecord], users: UserIndex) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({"kind": r.kind.value, "src": users.names[r.source],
                                 "dst": users.names[r.target], "ts": int(r.timestamp),
                                 "tweet": r.tweet_id, "cascade": r.cascade_id}) + "\n")


@dataclass(frozen=True, eq=False)
class SocialGraph:
    """Directed simple graph; each edge keeps its earliest interaction time.

    Edges are stored sorted by (source, target) so ``out_ptr`` is a CSR row
    pointer over ``dst``/``ts``. ``in_ptr``/``in_edges`` index the same edges
    grouped by target.
    """

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    ts: np.ndarray
    duplicates_collapsed: int = 0
    self_loops_dropped: int = 0
    out_ptr: np.ndarray = field(init=False, repr=False)
    in_ptr: np.ndarray = field(init=False, repr=False)
    in_edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        out_counts = np.bincount(self.src, minlength=self.n_nodes)
        in_counts = np.bincount(self.dst, minlength=self.n_nodes)
        object.__setattr__(self, "out_ptr", np.concatenate([[0], np.cumsum(out_counts)]).astype(np.int64))
        object.__setattr__(self, "in_ptr", np.concatenate([[0], np.cumsum(in_counts)]).astype(np.int64))
        object.__setattr__(self, "in_edges", np.argsort(self.dst, kind="stable").astype(np.int64))

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def out_neighbors(self, node: int) -> tuple[np.ndarray, np.ndarray]:
        """Targets of ``node``'s out-edges and their earliest timestamps."""
        a, b = self.out_ptr[node], self.out_ptr[node + 1]
        return self.dst[a:b], self.ts[a:b]

    def in_neighbors(self, node: int) -> tuple[np.ndarray, np.ndarray]:
        e = self.in_edges[self.in_ptr[node]:self.in_ptr[node + 1]]
        return self.src[e], self.ts[e]

    def edge_timestamp(self, i: int, j: int) -> int | None:
        targets, stamps = self.out_neighbors(i)
        pos = np.searchsorted(targets, j)
        if pos < targets.size and targets[pos] == j:
            return int(stamps[pos])
        return None

    def edges(self) -> Iterator[tuple[int, int, int]]:
        for s, d, t in zip(self.src.tolist(), self.dst.tolist(), self.ts.tolist()):
            yield s, d, t

    def undirected(self) -> sp.csr_matrix:
        """Symmetrized unit-weight adjacency (edge if either direction exists)."""
        n = self.n_nodes
        a = sp.coo_matrix((np.ones(self.n_edges), (self.src, self.dst)), shape=(n, n)).tocsr()
        a = a + a.T
        a.data[:] = 1.0
        a.eliminate_zeros()
        return a.tocsr()

    def as_records(self) -> list[InteractionRecord]:
        return [InteractionRecord(Kind.REPLY, s, d, t) for s, d, t in self.edges()]

    def dump(self, path: str | Path) -> None:
        with Path(path).open("w") as fh:
            fh.write(f"nodes {self.n_nodes} edges {self.n_edges}\n")
            for s, d, t in self.edges():
                fh.write(f"{s} {d} {t}\n")

    @classmethod
    def load(cls, path: str | Path) -> "SocialGraph":
        with Path(path).open() as fh:
            header = fh.readline().split()
            if len(header) != 4 or header[0] != "nodes" or header[2] != "edges":
                raise ValueError(f"{path}: bad graph header {' '.join(header)!r}")
            n, m = int(header[1]), int(header[3])
            data = np.loadtxt(fh, dtype=np.int64, ndmin=2) if m else np.zeros((0, 3), np.int64)
        if data.shape[0] != m:
            raise ValueError(f"{path}: header says {m} edges, found {data.shape[0]}")
        return _from_unique_edges(n, data[:, 0], data[:, 1], data[:, 2])


def _from_unique_edges(n, src, dst, ts, dups=0, loops=0) -> SocialGraph:
    order = np.lexsort((dst, src))
    return SocialGraph(n, np.asarray(src, np.int64)[order], np.asarray(dst, np.int64)[order],
                       np.asarray(ts, np.int64)[order], dups, loops)


def build_social_graph(records: Iterable[InteractionRecord], n_nodes: int | None = None) -> SocialGraph:
    """Collapse interactions into a directed simple graph.

    Edge (i, j) exists iff some interaction i->j exists and carries the
    earliest such timestamp. Self-interactions are dropped. ``n_nodes``
    defaults to one past the largest user id seen.
    """
    src, dst, ts = [], [], []
    loops = 0
    hi = -1
    for r in records:
        hi = max(hi, r.source, r.target)
        if r.source == r.target:
            loops += 1
            continue
        src.append(r.source)
        dst.append(r.target)
        ts.append(r.timestamp)
    n = hi + 1 if n_nodes is None else n_nodes
    if hi >= n:
        raise ValueError(f"user id {hi} outside graph of {n} nodes")
    if not src:
        return _from_unique_edges(n, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64), 0, loops)
    src_a, dst_a, ts_a = (np.asarray(x, dtype=np.int64) for x in (src, dst, ts))
    order = np.lexsort((ts_a, dst_a, src_a))
    src_a, dst_a, ts_a = src_a[order], dst_a[order], ts_a[order]
    first = np.ones(src_a.size, dtype=bool)
    first[1:] = (src_a[1:] != src_a[:-1]) | (dst_a[1:] != dst_a[:-1])
    dups = int(src_a.size - first.sum())
    return SocialGraph(n, src_a[first], dst_a[first], ts_a[first], dups, loops)


def social_graph_stats(g: SocialGraph) -> dict:
    """Node/edge counts and weak connectivity, as tabulated per dataset."""
    if g.n_nodes == 0:
        return {"nodes": 0, "edges": 0, "components": 0, "giant_component_fraction": 0.0,
                "duplicates_collapsed": g.duplicates_collapsed}
    ncomp, comp = connected_components(g.undirected(), directed=False)
    giant = np.bincount(comp).max()
    return {"nodes": g.n_nodes, "edges": g.n_edges, "components": int(ncomp),
            "giant_component_fraction": float(giant / g.n_nodes),
            "duplicates_collapsed": g.duplicates_collapsed}


@dataclass
class Cascade:
    cascade_id: str
    root_user: int
    root_tweet_id: str
    root_timestamp: int
    retweeters: list[tuple[int, int]] = field(default_factory=list)
    label: Label = Label.UNKNOWN
    sentiment: tuple[int, float] | None = None
    topics: list[int] | None = None
    hashtags: list[str] | None = None

    @property
    def participants(self) -> list[int]:
        """Root user first, then retweeters in timestamp order."""
        return [self.root_user] + [u for u, _ in self.retweeters]

    @property
    def size(self) -> int:
        return 1 + len(self.retweeters)


class CascadeList(list):
    """Cascades plus counts of retweets that could not be attached."""

    def __init__(self, cascades=()):
        super().__init__(cascades)
        self.unknown_cascade_count = 0
        self.early_retweet_count = 0


def read_cascade_meta(path: str | Path, users: UserIndex) -> list[Cascade]:
    """Read ``cascades.jsonl`` into cascades with no retweeters yet."""
    path = Path(path)
    out = []
    for lineno, line in _iter_json_lines(path):
        try:
            obj = json.loads(line)
            sentiment = obj.get("sentiment")
            if sentiment is not None:
                lab, score = sentiment
                if int(lab) not in (1, 2) or not 0.0 <= float(score) <= 1.0:
                    raise ValueError(f"bad sentiment {sentiment!r}")
                sentiment = (int(lab), float(score))
            topics = obj.get("topics")
            hashtags = obj.get("hashtags")
            out.append(Cascade(
                cascade_id=str(obj["cascade"]),
                root_user=users.intern(str(obj["root_user"])),
                root_tweet_id=str(obj.get("root_tweet", "")),
                root_timestamp=int(obj["root_ts"]),
                label=Label(str(obj.get("label", "unknown")).lower()),
                sentiment=sentiment,
                topics=None if topics is None else [int(t) for t in topics],
                hashtags=None if hashtags is None else [str(h) for h in hashtags],
            ))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed cascade record ({exc})") from exc
    return out


def write_cascade_meta(path: str | Path, cascades: Iterable[Cascade], users: UserIndex) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for c in cascades:
            obj = {"cascade": c.cascade_id, "root_user": users.names[c.root_user],
                   "root_tweet": c.root_tweet_id, "root_ts": int(c.root_timestamp),
                   "label": c.label.value,
                   "sentiment": None if c.sentiment is None else [c.sentiment[0], c.sentiment[1]],
                   "topics": c.topics}
            if c.hashtags is not None:
                obj["hashtags"] = c.hashtags
            fh.write(json.dumps(obj) + "\n")


def extract_cascades(records: Iterable[InteractionRecord], cascade_meta,
                     users: UserIndex | None = None) -> CascadeList:
    """Attach retweeters to every cascade listed in ``cascade_meta``.

    ``cascade_meta`` is either a path to ``cascades.jsonl`` (then ``users`` is
    required) or a list of :class:`Cascade`. Each user keeps their earliest
    retweet; retweets of unknown cascades, by the root user, or dated before
    the root tweet are ignored.
    """
    if isinstance(cascade_meta, (str, Path)):
        if users is None:
            raise ValueError("a UserIndex is needed to read cascade metadata from a file")
        cascade_meta = read_cascade_meta(cascade_meta, users)
    by_id = {}
    for c in cascade_meta:
        by_id[c.cascade_id] = Cascade(c.cascade_id, c.root_user, c.root_tweet_id, c.root_timestamp,
                                      [], c.label, c.sentiment, c.topics, c.hashtags)
    earliest: dict[str, dict[int, int]] = defaultdict(dict)
    out = CascadeList()
    for r in records:
        if r.kind is not Kind.RETWEET or r.cascade_id is None:
            continue
        c = by_id.get(r.cascade_id)
        if c is None:
            out.unknown_cascade_count += 1
            continue
        if r.source == c.root_user:
            continue
        if r.timestamp < c.root_timestamp:
            out.early_retweet_count += 1
            continue
        seen = earliest[r.cascade_id]
        if r.source not in seen or r.timestamp < seen[r.source]:
            seen[r.source] = r.timestamp
    for cid, c in by_id.items():
        c.retweeters = sorted(earliest.get(cid, {}).items(), key=lambda ut: (ut[1], ut[0]))
        out.append(c)
    return out


def filter_cascades(cascades: list[Cascade], min_participants: int) -> list[Cascade]:
    return [c for c in cascades if c.size >= min_participants]


def user_to_cascades(cascades: Iterable[Cascade]) -> dict[int, set[str]]:
    """Map each participating user to the ids of the cascades they joined."""
    out: dict[int, set[str]] = defaultdict(set)
    for c in cascades:
        for u in c.participants:
            out[u].add(c.cascade_id)
    return dict(out)
