"""Reports over corpora and system translations.

Coverage counts unique whole-word types (before BPE).  BLEU follows
multi-bleu semantics: single reference, case folded, corpus-level clipped
n-gram precisions up to 4, brevity penalty, no smoothing.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import RareWordSet

Sentences = Sequence[Sequence[str]]


class AnalysisError(ValueError):
    pass


def _check_aligned(hyps: Sentences, refs: Sentences, what=("system output", "references")):
    if len(hyps) != len(refs):
        raise AnalysisError(f"line-count mismatch: {what[0]} has {len(hyps)} lines, {what[1]} has {len(refs)}")


def _fold(sentences: Sentences, lowercase: bool) -> list[list[str]]:
    return [[w.lower() for w in s] if lowercase else list(s) for s in sentences]


@dataclass(frozen=True)
class CoverageReport:
    rare_in_ref: int
    generated: int
    not_generated: int
    affected_by_augmentation: int
    affected_generated: int = 0
    affected_not_generated: int = 0
    words_generated: tuple[str, ...] = ()
    words_not_generated: tuple[str, ...] = ()
    words_affected: tuple[str, ...] = ()

    def __post_init__(self):
        if self.generated + self.not_generated != self.rare_in_ref:
            raise AnalysisError("coverage partition broken")
        if self.affected_generated + self.affected_not_generated != self.affected_by_augmentation:
            raise AnalysisError("affected partition broken")

    def to_dict(self) -> dict:
        return asdict(self)


def rare_word_coverage(system_output: Sentences, references: Sentences, rare: RareWordSet | Iterable[str],
                       augmented_counts: Mapping[str, int] | None = None, threshold: int | None = None,
                       lowercase: bool = False) -> CoverageReport:
    """How many rare words that the references use also show up in the output.

    A word counts as affected by augmentation once its count in the
    augmented corpus reaches ``threshold`` (the rare-word threshold).
    """
    _check_aligned(system_output, references)
    rare_words = {w.lower() for w in rare} if lowercase else set(rare)
    if threshold is None:
        threshold = getattr(rare, "threshold", None)
    ref_types = {w for s in _fold(references, lowercase) for w in s}
    out_types = {w for s in _fold(system_output, lowercase) for w in s}
    in_ref = rare_words & ref_types
    gen = in_ref & out_types
    miss = in_ref - out_types
    counts = augmented_counts or {}
    if lowercase and counts:
        folded = Counter()
        for w, c in counts.items():
            folded[w.lower()] += c
        counts = folded
    affected = {w for w in in_ref if threshold is not None and counts.get(w, 0) >= threshold}
    return CoverageReport(
        rare_in_ref=len(in_ref),
        generated=len(gen),
        not_generated=len(miss),
        affected_by_augmentation=len(affected),
        affected_generated=len(affected & gen),
        affected_not_generated=len(affected & miss),
        words_generated=tuple(sorted(gen)),
        words_not_generated=tuple(sorted(miss)),
        words_affected=tuple(sorted(affected)),
    )


def length_ratio(system_output: Sentences, references: Sentences) -> float:
    _check_aligned(system_output, references)
    ref_len = sum(len(s) for s in references)
    if ref_len == 0:
        raise AnalysisError("references are empty")
    return sum(len(s) for s in system_output) / ref_len


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_length: int
    ref_length: int
    matches: tuple[int, ...] = ()
    totals: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)

    def __str__(self) -> str:
        ps = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        return (f"BLEU = {100 * self.score:.2f}, {ps} (BP={self.brevity_penalty:.3f}, "
                f"ratio={self.hyp_length / max(self.ref_length, 1):.3f}, hyp_len={self.hyp_length}, "
                f"ref_len={self.ref_length})")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[k:k + n]) for k in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sentences, references: Sentences, max_order: int = 4,
                lowercase: bool = True) -> BleuScore:
    if not hypotheses:
        raise AnalysisError("no hypotheses to score")
    _check_aligned(hypotheses, references, ("hypotheses", "references"))
    hyps = _fold(hypotheses, lowercase)
    refs = _fold(references, lowercase)
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_order + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1 - ref_len / hyp_len)
    else:
        bp = 1.0
    if min(precisions) <= 0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / max_order)
    return BleuScore(score, precisions, bp, hyp_len, ref_len, tuple(matches), tuple(totals))


@dataclass
class AugmentationSummary:
    total: int = 0
    per_word: dict[str, int] = field(default_factory=dict)
    per_pass: dict[int, int] = field(default_factory=dict)
    discards: dict[str, int] = field(default_factory=dict)
    augmented_pairs: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def augmentation_stats(records, discards: Mapping[str, int] | None = None) -> AugmentationSummary:
    """Counts per substituted rare word and per pass.

    ``per_pass`` counts accepted substitutions (records), not pairs.  Discard
    reasons come from the run itself since records only hold acceptances.
    """
    per_word = Counter(r.substitute for r in records)
    per_pass = Counter(r.pass_number for r in records)
    return AugmentationSummary(
        total=len(records),
        per_word=dict(sorted(per_word.items(), key=lambda wc: (-wc[1], wc[0]))),
        per_pass=dict(sorted(per_pass.items())),
        discards=dict(sorted((discards or {}).items())),
        augmented_pairs=len({r.augmented_id for r in records}),
    )


def write_report(report: Mapping, json_path, text_path, header: Sequence[str] = ()) -> None:
    """Structured JSON plus a plain-text rendering of the same report."""
    with open(json_path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(report, f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write("\n")
    lines = [*header]
    for section, body in sorted(report.items()):
        lines.append(f"[{section}]")
        if isinstance(body, Mapping):
            for k, v in body.items():
                if isinstance(v, (list, tuple, Mapping)) and len(v) > 20:
                    v = f"{len(v)} items"
                lines.append(f"  {k}: {v}")
        else:
            lines.append(f"  {body}")
    with open(text_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
