"""Byte-pair encoding: learn merges on word frequencies, segment with ``@@`` joiners.

Merges are word-internal.  Word ends are not marked with a symbol of their
own; the ``@@`` suffix on every non-final piece already carries the boundary.
"""

from __future__ import annotations

import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

JOINER = "@@"
HEADER = "#version: 0.2"


class BPEError(ValueError):
    pass


@dataclass(frozen=True)
class MergeTable:
    merges: tuple[tuple[str, str], ...]
    requested: int = 0

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise BPEError("duplicate merge in table")

    def __len__(self) -> int:
        return len(self.merges)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(HEADER + "\n")
            for a, b in self.merges:
                f.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path) -> "MergeTable":
        merges = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if lineno == 1 and line.startswith("#version"):
                    continue
                parts = line.split(" ")
                if len(parts) != 2:
                    raise BPEError(f"{path}:{lineno}: expected 'left right'")
                merges.append((parts[0], parts[1]))
        return cls(tuple(merges), len(merges))


def _symbols(word: str) -> tuple[str, ...]:
    return tuple(word)


def learn_bpe(sentences: Iterable[Sequence[str]], merges: int) -> MergeTable:
    """Greedy most-frequent-pair merging.

    Ties go to the lexicographically smallest pair.  Stops early once no pair
    occurs at least twice.
    """
    freqs = Counter()
    n = 0
    for sent in sentences:
        freqs.update(sent)
        n += 1
    if n == 0:
        raise BPEError("cannot learn BPE from an empty corpus")
    if merges < 0:
        raise BPEError("merge count must be >= 0")

    words = [list(_symbols(w)) for w in sorted(freqs)]
    counts = [freqs[w] for w in sorted(freqs)]
    stats = Counter()
    where = defaultdict(set)
    for k, syms in enumerate(words):
        for pair in zip(syms, syms[1:]):
            stats[pair] += counts[k]
            where[pair].add(k)
    heap = [(-c, p) for p, c in stats.items()]
    heapq.heapify(heap)

    table = []
    while len(table) < merges and heap:
        neg, pair = heapq.heappop(heap)
        if stats.get(pair, 0) != -neg:
            continue  # stale entry
        if -neg < 2:
            break
        table.append(pair)
        a, b = pair
        merged = a + b
        touched = set()
        for k in sorted(where.pop(pair, ())):
            syms = words[k]
            c = counts[k]
            for p in zip(syms, syms[1:]):
                stats[p] -= c
                touched.add(p)
            out, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[k] = out
            for p in zip(out, out[1:]):
                stats[p] += c
                where[p].add(k)
                touched.add(p)
        stats.pop(pair, None)
        for p in touched:
            if p == pair:
                continue
            c = stats.get(p, 0)
            if c <= 0:
                stats.pop(p, None)
            else:
                heapq.heappush(heap, (-c, p))
    return MergeTable(tuple(table), merges)


class BPE:
    """Applies a merge table; segmentations are cached per word."""

    def __init__(self, table: MergeTable):
        self.table = table
        self.ranks = {p: r for r, p in enumerate(table.merges)}
        self._cache: dict[str, tuple[str, ...]] = {}

    def segment_word(self, word: str) -> tuple[str, ...]:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        syms = list(_symbols(word))
        while len(syms) > 1:
            ranked = [(self.ranks.get(p, len(self.ranks)), k) for k, p in enumerate(zip(syms, syms[1:]))]
            best, _ = min(ranked)
            if best == len(self.ranks):
                break
            a, b = self.table.merges[best]
            out, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                    out.append(a + b)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            syms = out
        pieces = tuple(s + JOINER for s in syms[:-1]) + (syms[-1],)
        self._cache[word] = pieces
        return pieces

    def __call__(self, sentence: Sequence[str]) -> list[str]:
        out = []
        for w in sentence:
            out.extend(self.segment_word(w))
        return out


def apply_bpe(sentence: Sequence[str], table: MergeTable) -> list[str]:
    """Segment a sentence.  Words that themselves end in ``@@`` do not survive
    :func:`undo_bpe`, as with any joiner-suffix convention."""
    return BPE(table)(sentence)


def undo_bpe(sentence: Sequence[str]) -> list[str]:
    out, buf = [], ""
    for tok in sentence:
        if tok.endswith(JOINER):
            buf += tok[: -len(JOINER)]
        else:
            out.append(buf + tok)
            buf = ""
    if buf or (sentence and sentence[-1].endswith(JOINER)):
        raise BPEError("dangling joiner at end of sentence")
    return out
