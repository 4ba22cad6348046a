"""Planted-partition interaction data with cascades whose labels follow their home block."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import COUNTERS, UserProfile, write_user_profiles
from .ingest import Cascade, InteractionRecord, Kind, Label, UserIndex, write_cascade_meta, write_interactions

EPOCH0 = 1_577_836_800  # 2020-01-01
DAY = 86_400
LANGS = ("en", "es", "fr", "de", "pt", "it")


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 2000
    n_cascades: int = 400
    n_blocks: int = 4
    p_intra: float = 0.02
    p_inter: float = 0.0005
    label_fidelity: float = 0.95
    participants_per_cascade: int = 12
    home_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_intra", "p_inter", "home_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.p_intra > self.p_inter:
            raise ValueError("p_intra must exceed p_inter")
        if not 0.5 < self.label_fidelity <= 1.0:
            raise ValueError("label_fidelity must lie in (0.5, 1]")
        if self.n_blocks < 1 or self.n_users < self.n_blocks:
            raise ValueError("need at least one user per block")
        if self.participants_per_cascade < 1:
            raise ValueError("participants_per_cascade must be positive")


@dataclass
class SyntheticData:
    users: UserIndex
    records: list[InteractionRecord]
    cascades: list[Cascade]
    profiles: dict[int, UserProfile]
    blocks: np.ndarray  # user -> block
    home_blocks: np.ndarray  # cascade -> block

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"interactions": out / "interactions.jsonl", "cascades": out / "cascades.jsonl",
                 "users": out / "users.jsonl"}
        write_interactions(paths["interactions"], self.records, self.users)
        write_cascade_meta(paths["cascades"], self.cascades, self.users)
        write_user_profiles(paths["users"], self.profiles, self.users)
        return paths


def _sample_pairs(rng, rows: np.ndarray, cols: np.ndarray, p: float, same: bool):
    """Directed pairs (r, c), r != c, each kept independently with probability ``p``."""
    total = rows.size * cols.size
    count = rng.binomial(total, p) if p > 0 else 0
    if count == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    flat = rng.choice(total, size=count, replace=False)
    r, c = rows[flat // cols.size], cols[flat % cols.size]
    keep = r != c if same else np.ones(r.size, dtype=bool)
    return r[keep], c[keep]


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Planted-partition social graph plus block-local retweet cascades.

    Users split into ``n_blocks`` equal blocks. Each cascade has a home
    block; its root and most retweeters come from that block, the rest from
    users socially tied to it. The label is fake for odd home blocks, flipped
    with probability ``1 - label_fidelity``. User profiles drift with block
    parity (account age, verification, follower counts) so per-user features
    carry a weak, noisy signal.
    """
    rng = np.random.default_rng(spec.seed)
    users = UserIndex(f"u{i}" for i in range(spec.n_users))
    blocks = np.arange(spec.n_users) * spec.n_blocks // spec.n_users
    members = [np.flatnonzero(blocks == b) for b in range(spec.n_blocks)]

    src_parts, dst_parts = [], []
    for a in range(spec.n_blocks):
        for b in range(spec.n_blocks):
            p = spec.p_intra if a == b else spec.p_inter
            s, d = _sample_pairs(rng, members[a], members[b], p, a == b)
            src_parts.append(s)
            dst_parts.append(d)
    src = np.concatenate(src_parts)
    dst = np.concatenate(dst_parts)
    records: list[InteractionRecord] = []
    horizon = 90 * DAY
    for s, d in zip(src.tolist(), dst.tolist()):
        for _ in range(1 + rng.poisson(0.5)):
            kind = Kind.REPLY if rng.random() < 0.5 else Kind.MENTION
            ts = EPOCH0 + int(rng.integers(horizon))
            records.append(InteractionRecord(kind, s, d, ts, f"t{len(records)}"))

    neighbours = [set() for _ in range(spec.n_users)]
    for s, d in zip(src.tolist(), dst.tolist()):
        neighbours[s].add(d)
        neighbours[d].add(s)
    outsiders = []
    for b in range(spec.n_blocks):
        tied = {u for v in members[b].tolist() for u in neighbours[v] if blocks[u] != b}
        outsiders.append(np.array(sorted(tied), dtype=np.int64))

    cascades: list[Cascade] = []
    home_blocks = np.arange(spec.n_cascades) % spec.n_blocks
    rng.shuffle(home_blocks)
    for ci, hb in enumerate(home_blocks.tolist()):
        block = members[hb]
        root = int(block[rng.integers(block.size)])
        root_ts = EPOCH0 + int(rng.integers(30 * DAY, horizon))
        cid = f"c{ci}"
        tweet = f"r{ci}"
        lo = max(0, spec.participants_per_cascade // 2)
        n_rt = int(rng.integers(lo, spec.participants_per_cascade + lo)) if spec.participants_per_cascade > 1 else 0
        chosen = [root]
        taken = {root}
        t = root_ts
        attempts = 0
        while len(chosen) - 1 < n_rt and attempts < 50 * (n_rt + 1):
            attempts += 1
            if rng.random() >= spec.home_fraction and outsiders[hb].size:
                u = int(outsiders[hb][rng.integers(outsiders[hb].size)])
            elif rng.random() < 0.5:
                anchor = chosen[rng.integers(len(chosen))]
                near = [v for v in sorted(neighbours[anchor]) if blocks[v] == hb]
                if not near:
                    continue
                u = near[rng.integers(len(near))]
            else:
                u = int(block[rng.integers(block.size)])
            if u in taken:
                continue
            taken.add(u)
            chosen.append(u)
            t += int(rng.exponential(3600.0)) + 1
            records.append(InteractionRecord(Kind.RETWEET, u, root, t, tweet, cid))
            if rng.random() < 0.05:
                records.append(InteractionRecord(Kind.RETWEET, u, root, t + int(rng.integers(1, DAY)), tweet, cid))
        fake = hb % 2 == 1
        if rng.random() >= spec.label_fidelity:
            fake = not fake
        cascades.append(Cascade(
            cid, root, tweet, root_ts, [], Label.FAKE if fake else Label.NONFAKE,
            sentiment=(int(rng.integers(1, 3)), float(rng.uniform(0.5, 1.0))),
            topics=[int(x) for x in rng.integers(0, 20, size=3)],
            hashtags=[f"#h{x}" for x in rng.choice(30, size=int(rng.integers(0, 3)), replace=False)],
        ))

    profiles = {}
    for u in range(spec.n_users):
        odd = blocks[u] % 2 == 1
        age_days = rng.uniform(60, 2000) if odd else rng.uniform(200, 4000)
        lang = LANGS[blocks[u] % len(LANGS)] if rng.random() < 0.4 else LANGS[rng.integers(len(LANGS))]
        counters = {}
        for name in COUNTERS:
            if rng.random() < 0.05:
                continue
            shift = -0.5 if (odd and name == "followers") else 0.0
            counters[name] = float(np.floor(rng.lognormal(4.0 + shift, 1.5)))
        profiles[u] = UserProfile(int(EPOCH0 - age_days * DAY), bool(rng.random() < (0.03 if odd else 0.1)),
                                  lang, counters)
    records.sort(key=lambda r: r.timestamp)
    return SyntheticData(users, records, cascades, profiles, blocks, home_blocks)
