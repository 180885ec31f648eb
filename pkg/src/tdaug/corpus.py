"""Parallel and monolingual corpus loading, vocabularies and rare-word sets.

Corpora are pre-tokenized: one sentence per line, tokens separated by single
ASCII spaces.  Writers always terminate the last line with a newline, so a
load/write round trip is byte-identical except that a missing final newline
gets added.
"""

from __future__ import annotations

import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

UNK = "<unk>"
BOS = "<s>"
RESERVED = (UNK, BOS)

Tokens = tuple[str, ...]


class CorpusError(ValueError):
    """Malformed corpus input."""


class CorpusFormatError(CorpusError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class CorpusAlignmentError(CorpusError):
    pass


@dataclass(frozen=True)
class SentencePair:
    source: Tokens
    target: Tokens
    id: int = 0

    def __post_init__(self):
        if not self.source or not self.target:
            raise CorpusError(f"pair {self.id}: both sides must be non-empty")

    def swapped(self) -> "SentencePair":
        return SentencePair(self.target, self.source, self.id)


@dataclass(frozen=True)
class ParallelCorpus:
    pairs: tuple[SentencePair, ...] = ()

    def __post_init__(self):
        for expected, pair in enumerate(self.pairs):
            if pair.id != expected:
                raise CorpusError(f"pair ids must be consecutive from 0; got {pair.id} at {expected}")

    @classmethod
    def from_sentences(cls, sources: Iterable[Sequence[str]], targets: Iterable[Sequence[str]]) -> "ParallelCorpus":
        sources, targets = list(sources), list(targets)
        if len(sources) != len(targets):
            raise CorpusAlignmentError(f"{len(sources)} source vs {len(targets)} target sentences")
        return cls(tuple(SentencePair(tuple(s), tuple(t), k) for k, (s, t) in enumerate(zip(sources, targets))))

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[SentencePair]:
        return iter(self.pairs)

    def __getitem__(self, k: int) -> SentencePair:
        return self.pairs[k]

    def sources(self) -> list[Tokens]:
        return [p.source for p in self.pairs]

    def targets(self) -> list[Tokens]:
        return [p.target for p in self.pairs]

    def swapped(self) -> "ParallelCorpus":
        return ParallelCorpus(tuple(p.swapped() for p in self.pairs))


def _split_line(line: str, path, lineno: int) -> Tokens:
    if not line:
        raise CorpusFormatError(path, lineno, "empty line")
    tokens = tuple(line.split(" "))
    for tok in tokens:
        if not tok:
            raise CorpusFormatError(path, lineno, "empty token (leading, trailing or repeated space)")
        if len(tok.split()) != 1 or tok.split()[0] != tok:
            raise CorpusFormatError(path, lineno, f"token {tok!r} contains whitespace")
    return tokens


def read_sentences(path: str | os.PathLike, lowercase: bool = False) -> list[Tokens]:
    """Read one tokenized sentence per line.  Empty lines are format errors."""
    with open(path, encoding="utf-8", newline="\n") as f:
        text = f.read()
    if text.endswith("\n"):
        text = text[:-1]
    if not text:
        return []
    if lowercase:
        text = text.lower()
    return [_split_line(line, path, k) for k, line in enumerate(text.split("\n"), start=1)]


def write_sentences(path: str | os.PathLike, sentences: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sent in sentences:
            f.write(" ".join(sent))
            f.write("\n")


def load_parallel(source_path, target_path, lowercase: bool = False) -> ParallelCorpus:
    sources = read_sentences(source_path, lowercase)
    targets = read_sentences(target_path, lowercase)
    if len(sources) != len(targets):
        raise CorpusAlignmentError(
            f"line-count mismatch: {source_path} has {len(sources)} lines, {target_path} has {len(targets)}"
        )
    return ParallelCorpus.from_sentences(sources, targets)


def write_parallel(corpus: ParallelCorpus | Iterable[SentencePair], source_path, target_path) -> None:
    pairs = list(corpus)
    write_sentences(source_path, (p.source for p in pairs))
    write_sentences(target_path, (p.target for p in pairs))


@dataclass(frozen=True)
class Vocabulary:
    """Frequency-ranked word list capped at ``cap`` entries.

    Id 0 is reserved for the unknown token; kept words get ids 1..len(self)
    in order of descending count, ties broken lexicographically.
    """

    words: tuple[str, ...]
    counts: tuple[int, ...]
    cap: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.words) != len(self.counts):
            raise ValueError("words and counts differ in length")
        if len(self.words) > self.cap:
            raise ValueError(f"{len(self.words)} words exceed cap {self.cap}")
        if any(c <= 0 for c in self.counts):
            raise ValueError("vocabulary counts must be positive")
        for w in RESERVED:
            if w in self.words:
                raise ValueError(f"{w} is reserved")
        object.__setattr__(self, "_index", {w: k + 1 for k, w in enumerate(self.words)})

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word) -> bool:
        return word in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self.words)

    def id(self, word: str) -> int:
        return self._index.get(word, 0)

    def word(self, wid: int) -> str:
        return UNK if wid == 0 else self.words[wid - 1]

    def count(self, word: str) -> int:
        k = self._index.get(word)
        return 0 if k is None else self.counts[k - 1]

    def lookup(self, word: str) -> str:
        """The word itself if kept, otherwise the unknown token."""
        return word if word in self._index else UNK

    def items(self) -> Iterator[tuple[str, int]]:
        return zip(self.words, self.counts)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for w, c in self.items():
                f.write(f"{w}\t{c}\n")

    @classmethod
    def load(cls, path, cap: int | None = None) -> "Vocabulary":
        counts = Counter()
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    word, count = line.split("\t")
                    counts[word] = int(count)
                except ValueError:
                    raise CorpusFormatError(path, lineno, "expected word<TAB>count") from None
        return _vocab_from_counts(counts, cap if cap is not None else max(len(counts), 1))


def _vocab_from_counts(counts: Counter, cap: int) -> Vocabulary:
    ranked = sorted(((w, c) for w, c in counts.items() if c > 0 and w not in RESERVED), key=lambda wc: (-wc[1], wc[0]))
    ranked = ranked[:cap]
    return Vocabulary(tuple(w for w, _ in ranked), tuple(c for _, c in ranked), cap)


def count_tokens(sentences: Iterable[Sequence[str]]) -> Counter:
    counts = Counter()
    for sent in sentences:
        counts.update(sent)
    return counts


def build_vocabulary(sentences: Iterable[Sequence[str] | str], cap: int) -> Vocabulary:
    """Keep the ``cap`` most frequent words.  Strings are split on spaces."""
    if cap < 1:
        raise ValueError("vocabulary cap must be >= 1")
    counts = Counter()
    n = 0
    for sent in sentences:
        counts.update(sent.split(" ") if isinstance(sent, str) else sent)
        n += 1
    if n == 0 or not counts:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    return _vocab_from_counts(counts, cap)


@dataclass(frozen=True)
class RareWordSet:
    words: frozenset
    threshold: int

    def __contains__(self, word) -> bool:
        return word in self.words

    def __len__(self) -> int:
        return len(self.words)

    def __iter__(self):
        return iter(sorted(self.words))


def rare_words(vocab: Vocabulary, threshold: int) -> RareWordSet:
    """In-vocabulary words seen fewer than ``threshold`` times."""
    if threshold < 1:
        raise ValueError("rare-word threshold must be >= 1")
    return RareWordSet(frozenset(w for w, c in vocab.items() if c < threshold), threshold)
