"""Duplicate detection and merging.

Match tiers, strongest first: equal DOI, equal normalized title plus equal
year, then fuzzy title (normalized Levenshtein similarity at or above a
threshold, default 0.92) plus equal year. Matches close transitively into
clusters which merge into one surviving record each.

The fuzzy tier only compares records sharing a block key (year plus the
initials of the first four normalized title tokens), which keeps the pass
near-linear on large corpora. Fixtures and callers should not expect fuzzy
matches across block keys.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from ..records import (
    PubType,
    Record,
    build_record,
    normalize_title,
    source_sort_key,
)

DEFAULT_THRESHOLD = 0.92

BASIS_DOI = "doi_exact"
BASIS_TITLE = "title_exact"
BASIS_FUZZY = "title_fuzzy"

_TIER_BASIS = {1: BASIS_DOI, 2: BASIS_TITLE, 3: BASIS_FUZZY}


def _capped_distance(a: str, b: str, cap: int) -> int:
    """Levenshtein distance if it is <= cap, else any value > cap.

    Banded row DP: cells farther than cap from the diagonal cannot be on a
    path of cost <= cap, so they stay at the sentinel.
    """
    la, lb = len(a), len(b)
    if abs(la - lb) > cap:
        return cap + 1
    if la == 0:
        return lb
    if lb == 0:
        return la
    big = cap + 1
    prev = [j if j <= cap else big for j in range(lb + 1)]
    for i in range(1, la + 1):
        lo = max(1, i - cap)
        hi = min(lb, i + cap)
        cur = [big] * (lb + 1)
        if i <= cap:
            cur[0] = i
        ca = a[i - 1]
        for j in range(lo, hi + 1):
            cost = 0 if ca == b[j - 1] else 1
            best = prev[j - 1] + cost
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best if best < big else big
        if all(v >= big for v in cur[lo : hi + 1]) and cur[0] >= big:
            return big
        prev = cur
    return prev[lb] if prev[lb] <= cap else big


def _distance(a: str, b: str) -> int:
    return _capped_distance(a, b, max(len(a), len(b)))


def _similarity_normalized(na: str, nb: str) -> float:
    longest = max(len(na), len(nb))
    if longest == 0:
        return 1.0
    return 1.0 - _distance(na, nb) / longest


def title_similarity(a: str, b: str) -> float:
    """Similarity of two titles in [0, 1] after title normalization:
    1 - levenshtein / max(len)."""
    return _similarity_normalized(normalize_title(a), normalize_title(b))


def _fuzzy_match(na: str, nb: str, threshold: float) -> Optional[float]:
    """Similarity if the pair clears the threshold, else None. Uses a capped
    distance first so clear non-matches abort early."""
    longest = max(len(na), len(nb))
    if longest == 0:
        return 1.0
    cap = int((1.0 - threshold) * longest) + 2
    dist = _capped_distance(na, nb, cap)
    if dist > cap:
        return None
    sim = 1.0 - dist / longest
    return sim if sim >= threshold else None


def _block_key(normalized_title: str, year: int) -> tuple:
    tokens = normalized_title.split()
    return (year, "".join(t[0] for t in tokens[:4]))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, i: int, j: int) -> bool:
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        if self.size[ri] < self.size[rj]:
            ri, rj = rj, ri
        self.parent[rj] = ri
        self.size[ri] += self.size[rj]
        return True


@dataclass(frozen=True)
class MemberRef:
    """Identity of one input record inside a cluster."""

    index: int
    record_id: str
    sources: tuple

    def to_dict(self) -> dict:
        return {"index": self.index, "id": self.record_id, "sources": list(self.sources)}

    @classmethod
    def from_dict(cls, data: dict) -> "MemberRef":
        return cls(index=data["index"], record_id=data["id"], sources=tuple(data["sources"]))


@dataclass(frozen=True)
class DedupCluster:
    """One merge: the surviving record id, the member whose fields anchored
    the merge, and the members folded into it.

    basis is the strongest tier that linked any pair in the cluster;
    similarity is set only for title_fuzzy and holds the weakest qualifying
    pair score.
    """

    survivor_id: str
    basis: str
    similarity: Optional[float]
    primary: MemberRef
    merged: tuple

    def __post_init__(self):
        if self.basis not in (BASIS_DOI, BASIS_TITLE, BASIS_FUZZY):
            raise ValueError(f"unknown match basis: {self.basis!r}")
        if (self.similarity is not None) != (self.basis == BASIS_FUZZY):
            raise ValueError("similarity is recorded exactly for title_fuzzy clusters")
        if not self.merged:
            raise ValueError("a cluster records at least one merged-away member")

    def member_indices(self) -> frozenset:
        return frozenset([self.primary.index] + [m.index for m in self.merged])

    def to_dict(self) -> dict:
        data = {
            "survivor": self.survivor_id,
            "basis": self.basis,
            "primary": self.primary.to_dict(),
            "merged": [m.to_dict() for m in self.merged],
        }
        if self.similarity is not None:
            data["similarity"] = self.similarity
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "DedupCluster":
        return cls(
            survivor_id=data["survivor"],
            basis=data["basis"],
            similarity=data.get("similarity"),
            primary=MemberRef.from_dict(data["primary"]),
            merged=tuple(MemberRef.from_dict(m) for m in data["merged"]),
        )


@dataclass(frozen=True)
class DedupLog:
    """All clusters that merged anything, one JSON line each when persisted.
    Singleton records do not appear; every listed identity is in exactly one
    cluster."""

    clusters: tuple

    def merged_away_count(self) -> int:
        return sum(len(c.merged) for c in self.clusters)

    def merges_by_source(self) -> dict:
        """Merged-away members attributed to their first source in canonical
        source order."""
        counts: dict = {}
        for cluster in self.clusters:
            for member in cluster.merged:
                owner = min(member.sources, key=source_sort_key)
                counts[owner] = counts.get(owner, 0) + 1
        return counts

    def to_jsonl(self) -> str:
        return "".join(json.dumps(c.to_dict(), sort_keys=True) + "\n" for c in self.clusters)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "DedupLog":
        clusters = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    clusters.append(DedupCluster.from_dict(json.loads(line)))
        return cls(clusters=tuple(clusters))


_MERGE_FIELDS = ("abstract", "doi", "authors", "venue", "pub_type", "url")


def _populated_count(record: Record) -> int:
    count = 0
    for name in _MERGE_FIELDS:
        value = getattr(record, name)
        if name == "pub_type":
            count += value != PubType.UNKNOWN
        elif name == "authors":
            count += bool(value)
        else:
            count += value is not None and value != ""
    return count


def _content_key(record: Record) -> tuple:
    return (
        record.title,
        record.year,
        record.abstract or "",
        record.doi or "",
        record.authors,
        record.venue or "",
        record.pub_type.value,
        record.url or "",
        tuple(sorted(record.sources, key=source_sort_key)),
    )


def _member_order_key(record: Record) -> tuple:
    anchor = min(record.sources, key=source_sort_key)
    return (-_populated_count(record), source_sort_key(anchor), record.id, _content_key(record))


def _merge_cluster(members: list) -> Record:
    """Fold cluster members into one record.

    Sources union; longest abstract wins (with its provenance); any member's
    DOI is kept, primary's first; every other field comes from the primary,
    the member with the most populated fields.
    """
    ordered = sorted(members, key=_member_order_key)
    primary = ordered[0]
    abstract_owner = None
    for member in ordered:
        if member.abstract and (
            abstract_owner is None or len(member.abstract) > len(abstract_owner.abstract)
        ):
            abstract_owner = member
    doi = next((m.doi for m in ordered if m.doi), None)
    sources: set = set()
    for member in ordered:
        sources.update(member.sources)
    return build_record(
        title=primary.title,
        year=primary.year,
        abstract=abstract_owner.abstract if abstract_owner else None,
        abstract_provenance=abstract_owner.abstract_provenance if abstract_owner else None,
        doi=doi,
        authors=primary.authors,
        venue=primary.venue,
        pub_type=primary.pub_type,
        url=primary.url,
        sources=tuple(sources),
    )


def deduplicate(records: list, threshold: float = DEFAULT_THRESHOLD) -> tuple:
    """Cluster duplicates and merge each cluster; returns (survivors, DedupLog).

    Survivors come back sorted by id. len(records) always equals
    len(survivors) + log.merged_away_count().
    """
    n = len(records)
    uf = _UnionFind(n)
    # (tier, index_a, index_b, similarity) for every qualifying pair the
    # tiers examine, unioned or not, so cluster annotations do not depend on
    # input order
    events = []

    by_doi: dict = {}
    for i, record in enumerate(records):
        if record.doi:
            by_doi.setdefault(record.doi, []).append(i)
    for group in by_doi.values():
        for j in group[1:]:
            uf.union(group[0], j)
            events.append((1, group[0], j, None))

    normalized = [normalize_title(r.title) for r in records]

    by_title: dict = {}
    for i, record in enumerate(records):
        by_title.setdefault((normalized[i], record.year), []).append(i)
    for group in by_title.values():
        for j in group[1:]:
            uf.union(group[0], j)
            events.append((2, group[0], j, None))

    blocks: dict = {}
    for i, record in enumerate(records):
        blocks.setdefault(_block_key(normalized[i], record.year), []).append(i)
    for block in blocks.values():
        for a in range(len(block)):
            for b in range(a + 1, len(block)):
                i, j = block[a], block[b]
                if normalized[i] == normalized[j]:
                    continue  # already a tier-2 pair
                sim = _fuzzy_match(normalized[i], normalized[j], threshold)
                if sim is not None:
                    uf.union(i, j)
                    events.append((3, i, j, sim))

    strongest: dict = {}
    fuzzy_min: dict = {}
    for tier, i, _, sim in events:
        root = uf.find(i)
        strongest[root] = min(strongest.get(root, tier), tier)
        if tier == 3:
            fuzzy_min[root] = min(fuzzy_min.get(root, sim), sim)

    groups: dict = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)

    survivors = []
    clusters = []
    for root, indices in groups.items():
        if len(indices) == 1:
            survivors.append(records[indices[0]])
            continue
        members = [records[i] for i in indices]
        merged = _merge_cluster(members)
        survivors.append(merged)
        ordered = sorted(indices, key=lambda i: (_member_order_key(records[i]), i))
        refs = [
            MemberRef(
                index=i,
                record_id=records[i].id,
                sources=tuple(sorted(records[i].sources, key=source_sort_key)),
            )
            for i in ordered
        ]
        basis = _TIER_BASIS[strongest[root]]
        clusters.append(
            DedupCluster(
                survivor_id=merged.id,
                basis=basis,
                similarity=fuzzy_min[root] if basis == BASIS_FUZZY else None,
                primary=refs[0],
                merged=tuple(refs[1:]),
            )
        )

    survivors.sort(key=lambda r: r.id)
    seen: set = set()
    for record in survivors:
        if record.id in seen:
            raise AssertionError(f"post-merge id collision: {record.id}")
        seen.add(record.id)
    clusters.sort(key=lambda c: c.survivor_id)
    return survivors, DedupLog(clusters=tuple(clusters))
