"""Word alignment and lexical translation tables.

The built-in aligner is IBM Model 1 trained by EM in both directions, each
with a NULL word on the conditioning side.  Externally produced alignments in
Pharaoh format (``i-j`` pairs, 0-based) can be loaded instead.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .corpus import CorpusError, CorpusFormatError, ParallelCorpus

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-6
NULL = "<null>"

Links = frozenset  # of (i, j)


@dataclass(frozen=True)
class AlignmentLinks:
    """One set of ``(source index, target index)`` links per sentence pair."""

    links: tuple[Links, ...]

    def __len__(self) -> int:
        return len(self.links)

    def __getitem__(self, k: int) -> Links:
        return self.links[k]

    def __iter__(self):
        return iter(self.links)

    def targets_of(self, k: int, i: int) -> list[int]:
        return sorted(j for a, j in self.links[k] if a == i)

    def swapped(self) -> "AlignmentLinks":
        return AlignmentLinks(tuple(frozenset((j, i) for i, j in ls) for ls in self.links))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for ls in self.links:
                f.write(" ".join(f"{i}-{j}" for i, j in sorted(ls)))
                f.write("\n")


def load_alignments(path, corpus: ParallelCorpus) -> AlignmentLinks:
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) != len(corpus):
        raise CorpusError(f"{path}: {len(lines)} alignment lines for {len(corpus)} sentence pairs")
    out = []
    for lineno, (line, pair) in enumerate(zip(lines, corpus), start=1):
        links = set()
        for item in line.split():
            try:
                a, b = item.split("-")
                i, j = int(a), int(b)
            except ValueError:
                raise CorpusFormatError(path, lineno, f"bad link {item!r}") from None
            if not (0 <= i < len(pair.source) and 0 <= j < len(pair.target)):
                raise CorpusFormatError(
                    path, lineno, f"link {item} out of range for lengths {len(pair.source)}/{len(pair.target)}"
                )
            links.add((i, j))
        out.append(frozenset(links))
    return AlignmentLinks(tuple(out))


@dataclass
class TranslationLexicon:
    """Dual lexical tables.

    ``direct[s][t]`` is p(t|s) and ``inverse[t][s]`` is p(s|t).  The NULL
    rows from EM are kept apart in ``null_direct`` (p(t|NULL)) and
    ``null_inverse`` (p(s|NULL)) so they never show up as translations.
    """

    direct: dict[str, dict[str, float]] = field(default_factory=dict)
    inverse: dict[str, dict[str, float]] = field(default_factory=dict)
    null_direct: dict[str, float] = field(default_factory=dict)
    null_inverse: dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(row) for row in self.direct.values())

    def p_direct(self, s: str, t: str) -> float:
        return self.direct.get(s, {}).get(t, 0.0)

    def p_inverse(self, s: str, t: str) -> float:
        return self.inverse.get(t, {}).get(s, 0.0)

    def trans(self, word: str) -> list[tuple[str, float, float]]:
        """Candidate translations ``(t, p(t|word), p(word|t))``, best direct probability first."""
        row = self.direct.get(word, {})
        ranked = sorted(((t, p) for t, p in row.items() if p > 0), key=lambda tp: (-tp[1], tp[0]))
        return [(t, p, self.p_inverse(word, t)) for t, p in ranked]

    def swapped(self) -> "TranslationLexicon":
        return TranslationLexicon(self.inverse, self.direct, self.null_inverse, self.null_direct)

    def save(self, path) -> None:
        pairs = {(s, t) for s, row in self.direct.items() for t in row}
        pairs |= {(s, t) for t, row in self.inverse.items() for s in row}
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for s, t in sorted(pairs):
                f.write(f"{s}\t{t}\t{self.p_direct(s, t):.6f}\t{self.p_inverse(s, t):.6f}\n")

    @classmethod
    def load(cls, path) -> "TranslationLexicon":
        lex = cls()
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    s, t, pd, pi = line.split("\t")
                    pd, pi = float(pd), float(pi)
                except ValueError:
                    raise CorpusFormatError(path, lineno, "expected source<TAB>target<TAB>p(t|s)<TAB>p(s|t)") from None
                if pd > 0:
                    lex.direct.setdefault(s, {})[t] = pd
                if pi > 0:
                    lex.inverse.setdefault(t, {})[s] = pi
        return lex


def _prune(table: dict[str, dict[str, float]], floor: float) -> dict[str, dict[str, float]]:
    out = {}
    for key in sorted(table):
        row = {k: p for k, p in table[key].items() if p >= floor}
        if not row:
            continue
        z = math.fsum(row.values())
        out[key] = {k: p / z for k, p in sorted(row.items())}
    return out


@dataclass
class IBM1Result:
    table: dict[str, dict[str, float]]  # conditioning word -> generated word -> prob
    null_row: dict[str, float]
    log_likelihoods: list[float]


def ibm1_em(givens: list[tuple[str, ...]], generated: list[tuple[str, ...]], iterations: int) -> IBM1Result:
    """Model 1 EM for p(generated | given) with a NULL given word.

    ``log_likelihoods[k]`` is the corpus log-likelihood under the parameters
    after ``k`` updates (entry 0 is the uniform initialization).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not givens:
        raise CorpusError("cannot align an empty corpus")
    g_vocab = {NULL: 0}
    e_vocab: dict[str, int] = {}
    for sent in givens:
        for w in sent:
            g_vocab.setdefault(w, len(g_vocab))
    for sent in generated:
        for w in sent:
            e_vocab.setdefault(w, len(e_vocab))
    n_e = len(e_vocab)

    cell_key, cell_seg, seg_norm = [], [], []
    seg = 0
    for g_sent, e_sent in zip(givens, generated):
        g_ids = np.array([0] + [g_vocab[w] for w in g_sent], dtype=np.int64)
        e_ids = np.array([e_vocab[w] for w in e_sent], dtype=np.int64)
        cell_key.append((g_ids[None, :] * n_e + e_ids[:, None]).ravel())
        cell_seg.append(np.repeat(np.arange(seg, seg + len(e_ids)), len(g_ids)))
        seg_norm.append(np.full(len(e_ids), math.log(len(g_ids))))
        seg += len(e_ids)
    keys, cell_param = np.unique(np.concatenate(cell_key), return_inverse=True)
    cell_seg = np.concatenate(cell_seg)
    seg_norm = np.concatenate(seg_norm)
    param_given = keys // n_e
    n_given = len(g_vocab)

    # uniform over the words each given word co-occurs with
    fanout = np.bincount(param_given, minlength=n_given).astype(np.float64)
    theta = 1.0 / fanout[param_given]

    history = []
    for _ in range(iterations + 1):
        vals = theta[cell_param]
        denom = np.bincount(cell_seg, weights=vals, minlength=seg)
        history.append(float(np.sum(np.log(denom)) - np.sum(seg_norm)))
        if len(history) == iterations + 1:
            break
        post = vals / denom[cell_seg]
        counts = np.bincount(cell_param, weights=post, minlength=len(keys))
        totals = np.bincount(param_given, weights=counts, minlength=n_given)
        theta = counts / totals[param_given]

    g_words = list(g_vocab)
    e_words = list(e_vocab)
    table: dict[str, dict[str, float]] = defaultdict(dict)
    for key, p in zip(keys.tolist(), theta.tolist()):
        gi, ei = divmod(key, n_e)
        table[g_words[gi]][e_words[ei]] = p
    null_row = table.pop(NULL, {})
    return IBM1Result(dict(table), null_row, history)


def train_ibm1(corpus: ParallelCorpus, iterations: int = 5, floor: float = PROB_FLOOR,
               return_history: bool = False):
    """Lexicon from two independent Model 1 runs (source->target and target->source).

    With ``return_history`` also returns the two log-likelihood traces.
    """
    if len(corpus) == 0:
        raise CorpusError("cannot align an empty corpus")
    fwd = ibm1_em(corpus.sources(), corpus.targets(), iterations)
    bwd = ibm1_em(corpus.targets(), corpus.sources(), iterations)
    lex = TranslationLexicon(
        direct=_prune(fwd.table, floor),
        inverse=_prune(bwd.table, floor),
        null_direct={t: p for t, p in sorted(fwd.null_row.items()) if p >= floor},
        null_inverse={s: p for s, p in sorted(bwd.null_row.items()) if p >= floor},
    )
    logger.info("IBM1: %d direct entries; final log-likelihoods %.3f / %.3f",
                len(lex), fwd.log_likelihoods[-1], bwd.log_likelihoods[-1])
    if return_history:
        return lex, fwd.log_likelihoods, bwd.log_likelihoods
    return lex


def viterbi_alignments(corpus: ParallelCorpus, lexicon: TranslationLexicon, direction: str = "direct") -> AlignmentLinks:
    """Best link for each generated word under one Model 1 direction.

    ``direct`` links every target word to its best source word under p(t|s),
    ``inverse`` every source word to its best target word under p(s|t); a
    NULL winner leaves the word unaligned.  Ties go to the lowest index, and
    NULL only wins when strictly better than every real word.
    ``union`` and ``intersection`` combine the two.
    """
    if direction in ("union", "intersection"):
        d = viterbi_alignments(corpus, lexicon, "direct")
        r = viterbi_alignments(corpus, lexicon, "inverse")
        op = frozenset.union if direction == "union" else frozenset.intersection
        return AlignmentLinks(tuple(op(a, b) for a, b in zip(d, r)))
    if direction not in ("direct", "inverse"):
        raise ValueError(f"unknown alignment direction {direction!r}")
    out = []
    for pair in corpus:
        links = set()
        if direction == "direct":
            for j, t in enumerate(pair.target):
                scores = [lexicon.p_direct(s, t) for s in pair.source]
                best = max(range(len(scores)), key=lambda i: (scores[i], -i))
                if scores[best] > 0 and scores[best] >= lexicon.null_direct.get(t, 0.0):
                    links.add((best, j))
        else:
            for i, s in enumerate(pair.source):
                scores = [lexicon.p_inverse(s, t) for t in pair.target]
                best = max(range(len(scores)), key=lambda j: (scores[j], -j))
                if scores[best] > 0 and scores[best] >= lexicon.null_inverse.get(s, 0.0):
                    links.add((i, best))
        out.append(frozenset(links))
    return AlignmentLinks(tuple(out))


def lexical_tables_from_alignments(corpus: ParallelCorpus, links: AlignmentLinks) -> TranslationLexicon:
    """Relative-frequency lexical tables from link counts."""
    if len(links) != len(corpus):
        raise CorpusError(f"{len(links)} alignment entries for {len(corpus)} sentence pairs")
    joint = Counter()
    for pair, ls in zip(corpus, links):
        for i, j in ls:
            joint[pair.source[i], pair.target[j]] += 1
    src_total, tgt_total = Counter(), Counter()
    for (s, t), c in joint.items():
        src_total[s] += c
        tgt_total[t] += c
    lex = TranslationLexicon()
    for (s, t), c in sorted(joint.items()):
        lex.direct.setdefault(s, {})[t] = c / src_total[s]
        lex.inverse.setdefault(t, {})[s] = c / tgt_total[t]
    return lex


def trans(lexicon: TranslationLexicon, word: str) -> list[tuple[str, float, float]]:
    return lexicon.trans(word)
