"""The empirical mention-entity map and span enumeration.

Surfaces normalize by trimming and collapsing internal whitespace; case is
preserved since capitalization carries signal for names. Priors come from
count files (``surface<TAB>entity_id<TAB>count``), are normalized per
surface before truncation to the top ``s`` candidates, and are deliberately
not renormalized afterwards so a truncated list keeps the untruncated
empirical probabilities.

Binary index cache: magic ``E2EA``, little-endian u32 s and max span
length, u32 surface count, then per surface a u16-length-prefixed UTF-8
surface, u32 entry count, and per entry a u16-length-prefixed entity id
plus an f64 prior.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import Document

INDEX_MAGIC = b"E2EA"


@dataclass(frozen=True)
class CandidateEntry:
    entity_id: str
    prior: float


@dataclass
class MentionSpan:
    """A token interval [start, end] with its candidate entities."""

    doc_id: str
    start: int
    end: int
    surface: str
    candidates: list[CandidateEntry] = field(default_factory=list)

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "MentionSpan") -> bool:
        return self.doc_id == other.doc_id and \
            self.start <= other.end and other.start <= self.end


def normalize_surface(surface: str) -> str:
    return " ".join(surface.split())


class AliasIndex:
    """Normalized surface -> candidates sorted by prior (ties by entity id)."""

    def __init__(self, entries: dict[str, list[CandidateEntry]],
                 s: int = 30, max_span_length: int = 6):
        self.entries = entries
        self.s = s
        self.max_span_length = max_span_length

    def lookup(self, surface: str) -> list[CandidateEntry]:
        return self.entries.get(normalize_surface(surface), [])

    def __len__(self) -> int:
        return len(self.entries)


def build_index(count_files: Sequence[str], s: int = 30,
                max_span_length: int = 6) -> AliasIndex:
    """Sum counts across files per (surface, entity) and derive priors."""
    counts: dict[str, dict[str, int]] = {}
    for path in count_files:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                cols = line.rstrip("\n").split("\t")
                if len(cols) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
                surface = normalize_surface(cols[0])
                if not surface:
                    raise ValueError(f"{path}:{lineno}: empty surface")
                try:
                    count = int(cols[2])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: count {cols[2]!r} is not an integer") \
                        from None
                if count <= 0:
                    raise ValueError(f"{path}:{lineno}: count must be positive, got {count}")
                counts.setdefault(surface, {})
                counts[surface][cols[1]] = counts[surface].get(cols[1], 0) + count
    entries: dict[str, list[CandidateEntry]] = {}
    for surface, by_entity in counts.items():
        total = float(sum(by_entity.values()))
        ranked = sorted(
            (CandidateEntry(eid, c / total) for eid, c in by_entity.items()),
            key=lambda e: (-e.prior, e.entity_id))
        entries[surface] = ranked[:s]
    return AliasIndex(entries, s=s, max_span_length=max_span_length)


def load_prior_index(path: str, s: int = 30, max_span_length: int = 6) -> AliasIndex:
    """Load a prebuilt ``surface<TAB>entity_id<TAB>prior`` file."""
    raw: dict[str, dict[str, float]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            surface = normalize_surface(cols[0])
            try:
                prior = float(cols[2])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: prior {cols[2]!r} is not a number") from None
            if not 0.0 < prior <= 1.0 + 1e-6:
                raise ValueError(f"{path}:{lineno}: prior {prior} outside (0, 1]")
            raw.setdefault(surface, {})
            if cols[1] in raw[surface]:
                raise ValueError(f"{path}:{lineno}: duplicate entry for "
                                 f"({surface!r}, {cols[1]!r})")
            raw[surface][cols[1]] = prior
    entries = {
        surface: sorted((CandidateEntry(e, p) for e, p in by_entity.items()),
                        key=lambda c: (-c.prior, c.entity_id))[:s]
        for surface, by_entity in raw.items()
    }
    return AliasIndex(entries, s=s, max_span_length=max_span_length)


def save_index(index: AliasIndex, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<III", index.s, index.max_span_length, len(index.entries)))
        for surface in sorted(index.entries):
            sb = surface.encode("utf-8")
            entries = index.entries[surface]
            fh.write(struct.pack("<H", len(sb)))
            fh.write(sb)
            fh.write(struct.pack("<I", len(entries)))
            for e in entries:
                eb = e.entity_id.encode("utf-8")
                fh.write(struct.pack("<H", len(eb)))
                fh.write(eb)
                fh.write(struct.pack("<d", e.prior))


def load_index(path: str) -> AliasIndex:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != INDEX_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {INDEX_MAGIC!r}")
        s, max_len, n_surfaces = struct.unpack("<III", fh.read(12))
        entries: dict[str, list[CandidateEntry]] = {}
        for _ in range(n_surfaces):
            (slen,) = struct.unpack("<H", fh.read(2))
            surface = fh.read(slen).decode("utf-8")
            (n,) = struct.unpack("<I", fh.read(4))
            lst = []
            for _ in range(n):
                (elen,) = struct.unpack("<H", fh.read(2))
                eid = fh.read(elen).decode("utf-8")
                (prior,) = struct.unpack("<d", fh.read(8))
                lst.append(CandidateEntry(eid, prior))
            entries[surface] = lst
    return AliasIndex(entries, s=s, max_span_length=max_len)


def load_any_index(path: str) -> AliasIndex:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == INDEX_MAGIC:
        return load_index(path)
    return load_prior_index(path)


def enumerate_spans(doc: Document, index: AliasIndex) -> list[MentionSpan]:
    """All token intervals of length <= max_span_length with candidates.

    Overlapping spans are retained; the output is sorted by (start, end).
    """
    spans: list[MentionSpan] = []
    n = len(doc.tokens)
    for start in range(n):
        for end in range(start, min(start + index.max_span_length, n)):
            surface = doc.surface(start, end)
            cands = index.lookup(surface)
            if cands:
                spans.append(MentionSpan(doc_id=doc.doc_id, start=start, end=end,
                                         surface=surface, candidates=cands))
    return spans


def spans_for_gold(doc: Document, index: AliasIndex) -> list[MentionSpan]:
    """One span per gold annotation; candidate lists may be empty."""
    spans = []
    for start, end, _ in doc.gold:
        surface = doc.surface(start, end)
        spans.append(MentionSpan(doc_id=doc.doc_id, start=start, end=end,
                                 surface=surface, candidates=index.lookup(surface)))
    return spans


def _is_strict_contiguous_subsequence(short: Sequence[str], long: Sequence[str]) -> bool:
    if len(short) >= len(long):
        return False
    return any(list(long[i:i + len(short)]) == list(short)
               for i in range(len(long) - len(short) + 1))


def apply_coreference_heuristic(spans: Sequence[MentionSpan], doc: Document) -> list[MentionSpan]:
    """Let short mentions inherit candidates from longer containing mentions.

    A span whose token sequence is a strict contiguous subsequence of a
    longer (>= 2 token) span's sequence takes over that span's candidate
    list, inheriting from the earliest such span; chains resolve to their
    root so the operation is idempotent.
    """
    tokens = [tuple(doc.tokens[s.start:s.end + 1]) for s in spans]
    link: list[int | None] = [None] * len(spans)
    for i, short in enumerate(tokens):
        best: int | None = None
        for j, long in enumerate(tokens):
            if j == i or len(long) < 2:
                continue
            if _is_strict_contiguous_subsequence(short, long):
                if best is None or (spans[j].start, spans[j].end) < \
                        (spans[best].start, spans[best].end):
                    best = j
        link[i] = best

    def root(i: int) -> int:
        while link[i] is not None:
            i = link[i]
        return i

    out = []
    for i, span in enumerate(spans):
        r = root(i)
        if r == i:
            out.append(span)
        else:
            out.append(MentionSpan(doc_id=span.doc_id, start=span.start, end=span.end,
                                   surface=span.surface,
                                   candidates=list(spans[r].candidates)))
    return out


def candidate_recall(docs: Iterable[Document], index: AliasIndex,
                     ks: Sequence[int] = (30, 10)) -> dict[int, float]:
    """Fraction of gold mentions whose entity is among the first k candidates."""
    total = 0
    hits = {k: 0 for k in ks}
    for doc in docs:
        for start, end, entity in doc.gold:
            total += 1
            cands = index.lookup(doc.surface(start, end))
            for k in ks:
                if any(c.entity_id == entity for c in cands[:k]):
                    hits[k] += 1
    if total == 0:
        return {k: 0.0 for k in ks}
    return {k: hits[k] / total for k in ks}
