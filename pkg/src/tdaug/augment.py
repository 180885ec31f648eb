"""Rare-word translation data augmentation.

For a sampled position ``i`` holding a common word, a rare word may replace
it when both the forward and the backward language model rank it among their
top ``K`` predictions.  The word aligned to position ``i`` on the other side is
then rewritten with the rare word's best translation, scored by
p(s'|t) * p(t|s') * P_lm(t | left context).  Sentence pairs are swept
repeatedly until a sweep adds nothing new.

Everything here works on the pair's ``source`` side as the substitution side;
callers flip the corpus, links and lexicon to substitute on the target side.
"""

from __future__ import annotations

import functools
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .align import AlignmentLinks, TranslationLexicon
from .corpus import ParallelCorpus, RareWordSet, SentencePair, Vocabulary, write_parallel
from .lm import LanguageModel

logger = logging.getLogger(__name__)

R1 = "r1"
R_GE1 = "r_ge1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    rare_threshold: int = 100  # R
    top_k: int = 1000  # K
    max_per_word: int = 500  # N
    lm_floor: float = 1e-4
    mode: str = R1
    min_distance: int = 5
    max_passes: int = 20
    seed: int = 1

    def validate(self) -> "AugmentConfig":
        for name in ("rare_threshold", "top_k", "max_per_word", "min_distance", "max_passes"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if not 0 < self.lm_floor < 1:
            raise ConfigError(f"lm_floor must lie in (0, 1), got {self.lm_floor!r}")
        if self.mode not in (R1, R_GE1):
            raise ConfigError(f"mode must be {R1!r} or {R_GE1!r}, got {self.mode!r}")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        return self


@dataclass(frozen=True)
class AugmentationRecord:
    pair_id: int
    source_position: int
    original_source: str
    substitute: str
    target_position: int
    original_target: str
    replacement: str
    forward_rank: int
    backward_rank: int
    translation_score: float
    pass_number: int = 0
    augmented_id: int = -1

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "AugmentationRecord":
        return cls(**json.loads(line))


@dataclass(frozen=True)
class Candidate:
    word: str
    forward_rank: int
    backward_rank: int
    logprob: float  # forward + backward


@dataclass(frozen=True)
class Translation:
    position: int
    word: str
    score: float
    lm_prob: float


@dataclass(frozen=True)
class Discard:
    reason: str


@dataclass
class AugmentationModels:
    """Everything the engine reads; all of it is treated as immutable."""

    forward: LanguageModel
    backward: LanguageModel
    target_lm: LanguageModel
    lexicon: TranslationLexicon
    links: AlignmentLinks
    vocab: Vocabulary
    rare: RareWordSet

    def swapped_for(self, forward, backward, target_lm, vocab, rare) -> "AugmentationModels":
        return AugmentationModels(forward, backward, target_lm, self.lexicon.swapped(), self.links.swapped(),
                                  vocab, rare)


@dataclass
class AugmentedCorpus:
    original: ParallelCorpus
    augmented: list[SentencePair] = field(default_factory=list)
    records: list[AugmentationRecord] = field(default_factory=list)
    discards: Counter = field(default_factory=Counter)
    accepted_per_pass: list[int] = field(default_factory=list)

    @property
    def pairs(self) -> list[SentencePair]:
        return [*self.original, *self.augmented]

    def __len__(self) -> int:
        return len(self.original) + len(self.augmented)

    def records_for(self, augmented_id: int) -> list[AugmentationRecord]:
        return [r for r in self.records if r.augmented_id == augmented_id]

    def write(self, source_path, target_path) -> None:
        write_parallel(self.pairs, source_path, target_path)

    def write_records(self, path) -> None:
        write_records(path, self.records)


def write_records(path, records: Sequence[AugmentationRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(r.to_json())
            f.write("\n")


def read_records(path) -> list[AugmentationRecord]:
    with open(path, encoding="utf-8") as f:
        return [AugmentationRecord.from_json(line) for line in f if line.strip()]


def candidate_substitutions(pair: SentencePair, i: int, fwd: LanguageModel, bwd: LanguageModel,
                            rare: RareWordSet, k: int, vocab: Vocabulary | None = None) -> dict[str, Candidate]:
    """Rare words in the top ``k`` of both directional models at position ``i``.

    Returned in preference order: highest combined log-probability first,
    ties by vocabulary id (lexicographic without a vocabulary).
    """
    src = pair.source
    if not 0 <= i < len(src):
        raise IndexError(f"position {i} outside sentence of length {len(src)}")
    if not rare:
        return {}
    ahead = fwd.topk_scored(fwd.history_at(src, i), k, rare)
    if not ahead:
        return {}
    behind = {w: (r, p) for w, r, p in bwd.topk_scored(bwd.history_at(src, i), k, rare)}
    cands = [
        Candidate(w, rf, behind[w][0], math.log(pf) + math.log(behind[w][1]))
        for w, rf, pf in ahead
        if w in behind and w != src[i]
    ]
    tie = vocab.id if vocab is not None else (lambda w: 0)
    cands.sort(key=lambda c: (-c.logprob, tie(c.word), c.word))
    return {c.word: c for c in cands}


def aligned_position(pair: SentencePair, i: int, links: AlignmentLinks, lexicon: TranslationLexicon) -> int | None:
    """Target index linked to source ``i``; the best p(t_j|s_i) wins, then the lowest j."""
    js = links.targets_of(pair.id, i)
    if not js:
        return None
    s = pair.source[i]
    return max(js, key=lambda j: (lexicon.p_direct(s, pair.target[j]), -j))


def select_translation(pair: SentencePair, i: int, substitute: str, links: AlignmentLinks,
                       lexicon: TranslationLexicon, tgt_lm: LanguageModel, lm_floor: float) -> Translation | Discard:
    j = aligned_position(pair, i, links, lexicon)
    if j is None:
        return Discard("unaligned")
    return _translate_at(pair, j, substitute, lexicon, tgt_lm, lm_floor)


def _translate_at(pair, j, substitute, lexicon, tgt_lm, lm_floor):
    known = getattr(tgt_lm, "vocab", None)
    history = tgt_lm.history_at(pair.target, j)
    best = None
    for t, p_ts, p_st in lexicon.trans(substitute):
        if known is not None and t not in known:
            continue  # never introduce out-of-vocabulary words
        lm_p = tgt_lm.prob(t, history)
        score = p_st * p_ts * lm_p
        if best is None or score > best.score:
            best = Translation(j, t, score, lm_p)
    if best is None:
        return Discard("no_translation")
    if best.lm_prob < lm_floor:
        return Discard("lm_floor")
    if not best.score > 0:
        return Discard("zero_score")
    if best.word == pair.target[j]:
        return Discard("unchanged_target")
    return best


def augment_pair(pair: SentencePair, positions: Sequence[int], models: AugmentationModels, config: AugmentConfig,
                 used: Counter | None = None, discards: Counter | None = None) -> list[tuple[SentencePair, list[AugmentationRecord]]]:
    """Apply accepted substitutions at ``positions`` to a single new pair.

    Positions are handled in ascending order, each scored against the
    original sentence.  Within a position the candidates are tried in
    preference order, skipping words whose budget (``used`` plus what this
    pair already took) has reached ``max_per_word``; the first one whose
    translation survives is kept.  A target index already rewritten for an
    earlier position makes the later one yield nothing.
    """
    if config.mode == R1 and len(positions) != 1:
        raise ValueError("r1 mode takes exactly one position")
    pos = sorted(positions)
    if config.mode == R_GE1 and any(b - a < config.min_distance for a, b in zip(pos, pos[1:])):
        raise ValueError(f"positions {pos} closer than {config.min_distance}")
    used = used if used is not None else Counter()
    discards = discards if discards is not None else Counter()
    pending = Counter()
    taken_j = set()
    records = []
    for i in pos:
        cands = candidate_substitutions(pair, i, models.forward, models.backward, models.rare, config.top_k,
                                        models.vocab)
        if not cands:
            discards["no_candidate"] += 1
            continue
        j = aligned_position(pair, i, models.links, models.lexicon)
        if j is None:
            discards["unaligned"] += 1
            continue
        if j in taken_j:
            discards["target_conflict"] += 1
            continue
        outcome = Discard("budget")
        for cand in cands.values():
            if used[cand.word] + pending[cand.word] >= config.max_per_word:
                continue
            outcome = _translate_at(pair, j, cand.word, models.lexicon, models.target_lm, config.lm_floor)
            if isinstance(outcome, Translation):
                break
        if isinstance(outcome, Discard):
            discards[outcome.reason] += 1
            continue
        pending[cand.word] += 1
        taken_j.add(j)
        records.append(AugmentationRecord(
            pair_id=pair.id, source_position=i, original_source=pair.source[i], substitute=cand.word,
            target_position=j, original_target=pair.target[j], replacement=outcome.word,
            forward_rank=cand.forward_rank, backward_rank=cand.backward_rank,
            translation_score=outcome.score,
        ))
    if not records:
        return []
    src, tgt = list(pair.source), list(pair.target)
    for r in records:
        src[r.source_position] = r.substitute
        tgt[r.target_position] = r.replacement
    return [(SentencePair(tuple(src), tuple(tgt), pair.id), records)]


def eligible_positions(tokens: Sequence[str], vocab: Vocabulary, rare: RareWordSet) -> list[int]:
    """Positions holding an in-vocabulary word that is not itself rare."""
    return [i for i, w in enumerate(tokens) if w in vocab and w not in rare]


def sample_positions(priorities: Sequence[float], eligible: Sequence[int], mode: str,
                     min_distance: int) -> list[int]:
    """Pick positions by decreasing priority (ties: earlier entry first).

    ``r1`` keeps the single top position.  ``r_ge1`` walks the whole order and
    keeps every position at least ``min_distance`` away from those already
    kept.  Returned in ascending order.
    """
    if len(priorities) != len(eligible):
        raise ValueError("one priority per eligible position")
    if not eligible:
        return []
    order = sorted(range(len(eligible)), key=lambda k: (-priorities[k], k))
    if mode == R1:
        return [eligible[order[0]]]
    chosen: list[int] = []
    for k in order:
        p = eligible[k]
        if all(abs(p - q) >= min_distance for q in chosen):
            chosen.append(p)
    return sorted(chosen)


def pass_rng(seed: int, pass_number: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(pass_number,)))


class _CachedLM:
    """Memoizes ranked queries; histories repeat heavily across sweeps."""

    def __init__(self, lm, maxsize=1 << 18):
        self._lm = lm
        self.order = lm.order
        self.direction = lm.direction
        self.vocab = getattr(lm, "vocab", None)
        self.prob = lm.prob
        self.history_at = lm.history_at
        self.topk_scored = functools.lru_cache(maxsize=maxsize)(self._topk)

    def _topk(self, history, k, restrict=None):
        return self._lm.topk_scored(history, k, restrict)


ENGINES = ("auto", "compiled", "python")


def run_tda(corpus: ParallelCorpus, models: AugmentationModels, config: AugmentConfig,
            trace: list | None = None, engine: str = "auto") -> AugmentedCorpus:
    """Sweep the corpus until a pass adds nothing or ``max_passes`` is hit.

    ``trace``, when given, receives ``(pass_number, pair_id, positions)`` for
    every sentence that had eligible positions, in processing order.

    ``engine="python"`` runs the loop below; ``"compiled"`` runs the numba
    sweep in :mod:`tdaug.compiled`, which gives identical output.  ``"auto"``
    picks the compiled sweep whenever the models are plain :class:`NGramLM`
    instances.
    """
    config.validate()
    if engine not in ENGINES:
        raise ConfigError(f"engine must be one of {ENGINES}, got {engine!r}")
    if engine != "python":
        from . import compiled

        if compiled.supports(models):
            out = AugmentedCorpus(corpus)
            compiled.run(corpus, models, config, out, trace)
            return out
        if engine == "compiled":
            raise ConfigError("the compiled engine needs NGramLM models sharing one source vocabulary")
    cached = replace(models, forward=_CachedLM(models.forward), backward=_CachedLM(models.backward))
    out = AugmentedCorpus(corpus)
    seen = {(p.source, p.target) for p in corpus}
    used = Counter()
    eligible = [eligible_positions(p.source, models.vocab, models.rare) for p in corpus]
    if not models.rare or not any(eligible):
        logger.info("nothing to augment: %d rare words, %d sentences with eligible positions",
                    len(models.rare), sum(bool(e) for e in eligible))
        return out

    n_eligible = sum(len(e) for e in eligible)
    for pass_number in range(1, config.max_passes + 1):
        priorities = pass_rng(config.seed, pass_number).random(n_eligible)
        accepted = 0
        start = 0
        for pair, elig in zip(corpus, eligible):
            positions = sample_positions(priorities[start:start + len(elig)], elig, config.mode, config.min_distance)
            start += len(elig)
            if not positions:
                continue
            if trace is not None:
                trace.append((pass_number, pair.id, tuple(positions)))
            for new_pair, recs in augment_pair(pair, positions, cached, config, used, out.discards):
                key = (new_pair.source, new_pair.target)
                if key in seen:
                    out.discards["duplicate"] += 1
                    continue
                seen.add(key)
                aug_id = len(corpus) + len(out.augmented)
                out.augmented.append(SentencePair(new_pair.source, new_pair.target, aug_id))
                for r in recs:
                    used[r.substitute] += 1
                    out.records.append(replace(r, pass_number=pass_number, augmented_id=aug_id))
                accepted += 1
        out.accepted_per_pass.append(accepted)
        logger.info("pass %d: %d new pairs (%d total)", pass_number, accepted, len(out.augmented))
        if accepted == 0:
            break
    return out


def oversample(corpus: ParallelCorpus, records: Sequence[AugmentationRecord]) -> AugmentedCorpus:
    """Append one unchanged copy of the referenced original pair per record."""
    out = AugmentedCorpus(corpus, records=list(records))
    for r in records:
        if not 0 <= r.pair_id < len(corpus):
            raise ValueError(f"record references pair {r.pair_id}, corpus has {len(corpus)} pairs")
        orig = corpus[r.pair_id]
        out.augmented.append(SentencePair(orig.source, orig.target, len(corpus) + len(out.augmented)))
    return out
