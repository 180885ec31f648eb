"""Direction-tagged n-gram language models.

Estimator: interpolated absolute discounting (fixed discount 0.75) for orders
>= 2 over an add-one smoothed unigram.  The event space is the vocabulary
plus ``<unk>``; ``<s>`` markers pad every sentence on the left and only ever
appear as context.  Backward models are ordinary models trained on reversed
sentences.

Parameters are held in back-off form, the same numbers an ARPA file stores:
for every seen n-gram the full interpolated probability, and for every
context its back-off weight.  Level ``j`` nodes live in a sorted key array
with ``key = parent_node * radix + token`` where the parent is the level
``j - 1`` node of the first ``j - 1`` tokens, so the followers of a context
form one contiguous slice.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np

from .corpus import BOS, UNK, CorpusError, Vocabulary

logger = logging.getLogger(__name__)

DISCOUNT = 0.75
FORWARD = "forward"
BACKWARD = "backward"
_ARPA_ZERO = -99.0


class LanguageModel(Protocol):
    """What the augmentation engine needs from a language model."""

    order: int
    direction: str

    def prob(self, word: str, history: Sequence[str]) -> float: ...

    def topk_scored(self, history: Sequence[str], k: int, restrict=None) -> list[tuple[str, int, float]]: ...

    def history_at(self, tokens: Sequence[str], i: int) -> tuple[str, ...]: ...


@dataclass
class _Level:
    keys: np.ndarray  # int64, sorted; parent * radix + token
    probs: np.ndarray  # float64, nan for pure <s> nodes
    backoffs: np.ndarray  # float64, weight when this node is a context


class NGramLM:
    """Back-off n-gram model over a fixed vocabulary.

    Histories are passed in the model's own reading order with the nearest
    token last: for a backward model predicting position ``i`` of a sentence
    that is ``s[n-1], ..., s[i+1]``.  Use :meth:`history_at` to extract them.
    Histories shorter than ``order - 1`` are left-padded with ``<s>``.
    """

    def __init__(self, order: int, direction: str, vocab: Vocabulary, unigram: np.ndarray,
                 unigram_backoff: np.ndarray, levels: list[_Level]):
        if direction not in (FORWARD, BACKWARD):
            raise ValueError(f"direction must be {FORWARD!r} or {BACKWARD!r}")
        self.order = order
        self.direction = direction
        self.vocab = vocab
        self.radix = len(vocab) + 2
        self.bos = self.radix - 1
        self.unigram = unigram
        self.unigram_backoff = unigram_backoff
        self.levels = levels  # levels[j - 2] holds order j
        # word ids 1..V ranked by (-unigram prob, id)
        ids = np.arange(1, len(vocab) + 1)
        self._uni_order = ids[np.lexsort((ids, -unigram[1:len(vocab) + 1]))]
        self._uni_sorted = unigram[self._uni_order]

    # -- queries ---------------------------------------------------------

    def _ids(self, history: Sequence[str]) -> list[int]:
        width = self.order - 1
        if width == 0:
            return []
        ids = [self.bos if w == BOS else self.vocab.id(w) for w in history[-width:]]
        return [self.bos] * (width - len(ids)) + ids

    def _find(self, level: int, key: int) -> int:
        keys = self.levels[level - 2].keys
        k = int(np.searchsorted(keys, key))
        return k if k < len(keys) and keys[k] == key else -1

    def _contexts(self, ids: list[int]) -> list[int]:
        """Context node for each order n..2 (highest first); -1 if unseen."""
        out = []
        for j in range(self.order, 1, -1):
            node = ids[-(j - 1)]
            for lvl, tok in enumerate(ids[len(ids) - (j - 2):], start=2):
                node = self._find(lvl, node * self.radix + tok)
                if node < 0:
                    break
            out.append(node)
        return out

    def prob(self, word: str, history: Sequence[str] = ()) -> float:
        wid = self.vocab.id(word)
        b = 1.0
        for j, ctx in zip(range(self.order, 1, -1), self._contexts(self._ids(history))):
            if ctx < 0:
                continue
            node = self._find(j, ctx * self.radix + wid)
            if node >= 0:
                return b * float(self.levels[j - 2].probs[node])
            b *= float(self.levels[j - 3].backoffs[ctx]) if j > 2 else float(self.unigram_backoff[ctx])
        return b * float(self.unigram[wid])

    def logprob(self, word: str, history: Sequence[str] = ()) -> float:
        return math.log(self.prob(word, history))

    def distribution(self, history: Sequence[str] = ()) -> dict[str, float]:
        """Probability of every event (vocabulary words and ``<unk>``)."""
        return {w: self.prob(w, history) for w in (UNK, *self.vocab.words)}

    def topk_scored(self, history: Sequence[str], k: int, restrict=None) -> list[tuple[str, int, float]]:
        """Top ``k`` words as ``(word, rank, prob)`` with 1-based ranks.

        Ranking runs over all vocabulary words (``<unk>`` excluded), ties by
        vocabulary id; ``restrict`` filters the ranked list afterwards, so
        ranks always refer to the full vocabulary.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        radix = self.radix
        b = 1.0
        seen_ids, seen_vals = [], []
        for j, ctx in zip(range(self.order, 1, -1), self._contexts(self._ids(history))):
            if ctx < 0:
                continue
            level = self.levels[j - 2]
            lo, hi = np.searchsorted(level.keys, (ctx * radix, (ctx + 1) * radix))
            if hi > lo:
                seen_ids.append(level.keys[lo:hi] - ctx * radix)
                seen_vals.append(b * level.probs[lo:hi])
            b *= float(self.levels[j - 3].backoffs[ctx]) if j > 2 else float(self.unigram_backoff[ctx])

        if seen_ids:
            ids = np.concatenate(seen_ids)
            vals = np.concatenate(seen_vals)
            ids, first = np.unique(ids, return_index=True)  # highest order wins
            vals = vals[first]
            keep = (ids != 0) & (ids != self.bos)
            ids, vals = ids[keep], vals[keep]
        else:
            ids = np.empty(0, dtype=np.int64)
            vals = np.empty(0)

        # remaining words score b * unigram, monotone in the precomputed order
        n_words = len(self._uni_order)
        need = min(k, n_words - len(ids))
        rest_ids = np.empty(0, dtype=np.int64)
        if need > 0:
            span = min(n_words, k + len(ids))
            while True:
                cand = self._uni_order[:span]
                cand = cand[~np.isin(cand, ids, assume_unique=True)] if len(ids) else cand
                if len(cand) >= need or span == n_words:
                    break
                span = min(n_words, span * 2)
            rest_ids = cand[:need]
            # pull in words tying with the last one so id tie-breaks stay exact
            last = b * float(self.unigram[rest_ids[-1]])
            tail = cand[need:]
            rest_ids = np.concatenate([rest_ids, tail[b * self.unigram[tail] >= last]])
            while span < n_words and b * float(self._uni_sorted[span]) >= last:
                nxt = min(n_words, span + 64)
                extra = self._uni_order[span:nxt]
                extra = extra[b * self.unigram[extra] >= last]
                if len(ids):
                    extra = extra[~np.isin(extra, ids, assume_unique=True)]
                rest_ids = np.concatenate([rest_ids, extra])
                span = nxt
        all_ids = np.concatenate([ids, rest_ids])
        all_vals = np.concatenate([vals, b * self.unigram[rest_ids]])
        order = np.lexsort((all_ids, -all_vals))[:k]
        out = []
        for rank, pos in enumerate(order, start=1):
            word = self.vocab.word(int(all_ids[pos]))
            if restrict is None or word in restrict:
                out.append((word, rank, float(all_vals[pos])))
        return out

    def topk(self, history: Sequence[str], k: int, restrict=None) -> list[str]:
        return [w for w, _, _ in self.topk_scored(history, k, restrict)]

    def history_at(self, tokens: Sequence[str], i: int) -> tuple[str, ...]:
        """Conditioning context for position ``i`` of a sentence in natural order."""
        width = self.order - 1
        if width == 0:
            return ()
        if self.direction == FORWARD:
            return tuple(tokens[max(0, i - width):i])
        return tuple(reversed(tokens[i + 1:i + 1 + width]))

    # -- introspection ---------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"unigram": self.unigram, "unigram_backoff": self.unigram_backoff}
        for j, level in enumerate(self.levels, start=2):
            params[f"keys{j}"] = level.keys
            params[f"probs{j}"] = level.probs
            params[f"backoffs{j}"] = level.backoffs
        return params

    def num_ngrams(self) -> list[int]:
        return [self.radix] + [len(level.keys) for level in self.levels]

    # -- serialization ---------------------------------------------------

    def _token_table(self) -> list[str]:
        return [UNK, *self.vocab.words, BOS]

    def save_arpa(self, path) -> None:
        names = np.array(self._token_table(), dtype=object)
        seqs = [np.arange(self.radix)[:, None]]
        for level in self.levels:
            parent, tok = np.divmod(level.keys, self.radix)
            seqs.append(np.hstack([seqs[-1][parent], tok[:, None]]))
        probs = [self.unigram] + [lv.probs for lv in self.levels]
        backoffs = [self.unigram_backoff] + [lv.backoffs for lv in self.levels]

        def log10(p):
            return _ARPA_ZERO if not p > 0 else math.log10(p)

        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"# n-gram language model\n# direction: {self.direction}\n# discount: {DISCOUNT}\n\n")
            f.write("\\data\\\n")
            for j, seq in enumerate(seqs, start=1):
                f.write(f"ngram {j}={len(seq)}\n")
            for j, seq in enumerate(seqs, start=1):
                f.write(f"\n\\{j}-grams:\n")
                words = [" ".join(row) for row in names[seq]]
                for w, p, bo in zip(words, probs[j - 1], backoffs[j - 1]):
                    if j < self.order:
                        f.write(f"{log10(p):.7f}\t{w}\t{log10(bo):.7f}\n")
                    else:
                        f.write(f"{log10(p):.7f}\t{w}\n")
            f.write("\n\\end\\\n")

    @classmethod
    def load_arpa(cls, path, vocab: Vocabulary, direction: str | None = None) -> "NGramLM":
        """Read a model written by :meth:`save_arpa` (or any prefix-closed ARPA file)."""
        radix = len(vocab) + 2
        bos = radix - 1
        header_direction = FORWARD
        sections: dict[int, list[tuple[float, list[str], float]]] = {}
        current = None
        with open(path, encoding="utf-8") as f:
            for lineno, raw in enumerate(f, start=1):
                line = raw.strip()
                if current is None and line.startswith("# direction:"):
                    header_direction = line.split(":", 1)[1].strip()
                    continue
                if not line or line.startswith("ngram ") or line == "\\data\\" or line.startswith("#"):
                    continue
                if line == "\\end\\":
                    break
                if line.startswith("\\") and line.endswith("-grams:"):
                    current = int(line[1:line.index("-")])
                    sections[current] = []
                    continue
                if current is None:
                    continue
                fields = line.split()
                if len(fields) not in (current + 1, current + 2):
                    raise CorpusError(f"{path}:{lineno}: malformed {current}-gram line")
                bo = 10.0 ** float(fields[current + 1]) if len(fields) == current + 2 else 1.0
                sections[current].append((float(fields[0]), fields[1:current + 1], bo))
        order = max(sections) if sections else 0
        if order < 1 or sorted(sections) != list(range(1, order + 1)):
            raise CorpusError(f"{path}: missing n-gram sections")

        def tid(w):
            if w == BOS:
                return bos
            if w == UNK:
                return 0
            k = vocab.id(w)
            if k == 0:
                raise CorpusError(f"{path}: word {w!r} not in vocabulary")
            return k

        def p10(lp):
            return 0.0 if lp <= _ARPA_ZERO else 10.0 ** lp

        unigram = np.zeros(radix)
        unigram_bo = np.ones(radix)
        for lp, words, bo in sections[1]:
            t = tid(words[0])
            unigram[t] = p10(lp)
            unigram_bo[t] = bo
        levels: list[_Level] = []
        for j in range(2, order + 1):
            rows = sections[j]
            keys = np.empty(len(rows), dtype=np.int64)
            probs = np.empty(len(rows))
            bos_ = np.empty(len(rows))
            for r, (lp, words, bo) in enumerate(rows):
                node = tid(words[0])
                for lvl, w in enumerate(words[1:-1], start=2):
                    prev = levels[lvl - 2].keys
                    key = node * radix + tid(w)
                    node = int(np.searchsorted(prev, key))
                    if node >= len(prev) or prev[node] != key:
                        raise CorpusError(f"{path}: prefix of {' '.join(words)!r} missing")
                keys[r] = node * radix + tid(words[-1])
                probs[r] = np.nan if words[-1] == BOS else p10(lp)
                bos_[r] = bo
            srt = np.argsort(keys, kind="stable")
            levels.append(_Level(keys[srt], probs[srt], bos_[srt]))
        return cls(order, direction or header_direction, vocab, unigram, unigram_bo, levels)


def train_ngram_lm(sentences: Iterable[Sequence[str]], order: int, direction: str, vocab: Vocabulary,
                   discount: float = DISCOUNT) -> NGramLM:
    """Estimate an interpolated absolute-discounting model.

    Out-of-vocabulary tokens become ``<unk>`` before counting.  Each sentence
    gets ``order - 1`` leading ``<s>`` markers; backward models reverse the
    sentence first.
    """
    if not 1 <= order <= 5:
        raise ValueError("order must be in [1, 5]")
    if direction not in (FORWARD, BACKWARD):
        raise ValueError(f"direction must be {FORWARD!r} or {BACKWARD!r}")
    radix = len(vocab) + 2
    bos = radix - 1
    pad = order - 1

    chunks, lengths = [], []
    for sent in sentences:
        if not sent:
            continue
        ids = [vocab.id(w) for w in sent]
        if direction == BACKWARD:
            ids.reverse()
        chunks.append(ids)
        lengths.append(len(ids) + pad)
    if not chunks:
        raise CorpusError("cannot train a language model on an empty corpus")
    tok = np.full(sum(lengths), bos, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    for s, ids in zip(starts, chunks):
        tok[s + pad:s + pad + len(ids)] = ids
    offset = np.arange(len(tok)) - np.repeat(starts, lengths)
    predicted = tok != bos

    counts1 = np.bincount(tok[predicted], minlength=radix).astype(np.float64)
    n_events = radix - 1  # words + <unk>
    unigram = np.zeros(radix)
    unigram[:n_events] = (counts1[:n_events] + 1.0) / (counts1[:n_events].sum() + n_events)
    unigram_bo = np.ones(radix)

    levels: list[_Level] = []
    prev_nodes = tok  # level-1 node of each position is its token id
    prev_probs = unigram
    prev_bo = unigram_bo
    n_prev = radix
    for j in range(2, order + 1):
        valid = offset >= j - 1
        pos = np.nonzero(valid)[0]
        keys_all = prev_nodes[pos - 1] * radix + tok[pos]
        keys, inverse = np.unique(keys_all, return_inverse=True)
        nodes = np.full(len(tok), -1, dtype=np.int64)
        nodes[pos] = inverse
        counts = np.bincount(nodes[predicted], minlength=len(keys)).astype(np.float64)
        parent, last = np.divmod(keys, radix)
        suffix = np.empty(len(keys), dtype=np.int64)
        suffix[inverse] = prev_nodes[pos]

        ctx_total = np.bincount(parent, weights=counts, minlength=n_prev)
        ctx_types = np.bincount(parent[counts > 0], minlength=n_prev).astype(np.float64)
        seen = ctx_total > 0
        gamma = np.ones(n_prev)
        gamma[seen] = discount * ctx_types[seen] / ctx_total[seen]
        prev_bo[:] = gamma

        probs = np.full(len(keys), np.nan)
        event = last != bos
        pe = parent[event]
        probs[event] = (counts[event] - discount) / ctx_total[pe] + gamma[pe] * prev_probs[suffix[event]]
        level = _Level(keys, probs, np.ones(len(keys)))
        levels.append(level)
        prev_nodes, prev_probs, prev_bo, n_prev = nodes, probs, level.backoffs, len(keys)

    lm = NGramLM(order, direction, vocab, unigram, unigram_bo, levels)
    logger.info("trained %s %d-gram model: %s n-grams", direction, order, lm.num_ngrams())
    return lm
