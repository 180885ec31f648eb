import json

import pytest
import sacrebleu
from hypothesis import given
from hypothesis import strategies as st

from tdaug.analysis import (
    AnalysisError,
    augmentation_stats,
    corpus_bleu,
    length_ratio,
    rare_word_coverage,
    write_report,
)
from tdaug.augment import AugmentationRecord
from tdaug.corpus import RareWordSet

vocab = "the a cat dog sat on mat rug quietly Zebra ran".split()
sentence = st.lists(st.sampled_from(vocab), min_size=1, max_size=10)
aligned = st.integers(1, 8).flatmap(lambda n: st.tuples(st.lists(sentence, min_size=n, max_size=n),
                                                        st.lists(sentence, min_size=n, max_size=n)))

# 20 hypothesis/reference lines with partial overlap and a short-hypothesis brevity penalty
BLEU_HYPS = [
    "the cat sat on the mat", "a dog ran across the park", "the quick brown fox jumps", "it is raining today",
    "she reads a book every night", "we went to the market yesterday", "the sun is very bright",
    "my brother plays the guitar", "they built a small house", "the train arrived late again",
    "he likes green tea", "the children are playing outside", "this road leads to the river",
    "our teacher was very kind", "the old man walked slowly", "birds fly south in winter",
    "I lost my keys", "the meeting starts at nine", "the soup tastes good", "please close the door",
]
BLEU_REFS = [
    "the cat sat on a mat", "a dog ran through the park", "the quick brown fox jumped over", "it rains today",
    "she reads a book each night", "we went to the market yesterday", "the sun is bright",
    "my brother plays guitar well", "they built a little house", "the train was late again",
    "he really likes green tea", "the kids are playing outside", "this road goes to the river",
    "our teacher was very kind to us", "the old man walked slowly home", "birds fly south for winter",
    "I have lost my keys", "the meeting begins at nine", "the soup tastes very good", "please shut the door",
]


def toks(lines):
    return [line.split() for line in lines]


def sacre(hyps, refs):
    return sacrebleu.corpus_bleu([" ".join(h) for h in hyps], [[" ".join(r) for r in refs]], tokenize="none",
                                 lowercase=True, smooth_method="none", force=True)


def test_bleu_fixture_matches_sacrebleu():
    ours = corpus_bleu(toks(BLEU_HYPS), toks(BLEU_REFS))
    ref = sacre(toks(BLEU_HYPS), toks(BLEU_REFS))
    assert 0 < ours.score < 1
    assert ours.score == pytest.approx(ref.score / 100, abs=1e-4)
    assert ours.brevity_penalty == pytest.approx(ref.bp, abs=1e-9)
    assert list(ours.matches) == list(ref.counts)
    assert list(ours.totals) == list(ref.totals)


def test_bleu_is_case_insensitive():
    upper = [[w.upper() for w in s] for s in toks(BLEU_HYPS)]
    assert corpus_bleu(upper, toks(BLEU_REFS)).score == corpus_bleu(toks(BLEU_HYPS), toks(BLEU_REFS)).score


def test_bleu_identity_and_zero():
    assert corpus_bleu(toks(BLEU_REFS), toks(BLEU_REFS)).score == 1.0
    assert corpus_bleu([["a", "a", "a", "a"]], [["b", "b", "b", "b"]]).score == 0.0


def test_bleu_errors():
    with pytest.raises(AnalysisError):
        corpus_bleu([], [])
    with pytest.raises(AnalysisError):
        corpus_bleu([["a"]], [["a"], ["b"]])


@given(aligned)
def test_bleu_matches_sacrebleu_random(pair):
    hyps, refs = pair
    assert corpus_bleu(hyps, refs).score == pytest.approx(sacre(hyps, refs).score / 100, abs=1e-4)


@given(aligned, st.randoms())
def test_bleu_permutation_invariant(pair, rnd):
    hyps, refs = pair
    order = list(range(len(hyps)))
    rnd.shuffle(order)
    assert corpus_bleu([hyps[k] for k in order], [refs[k] for k in order]).score == pytest.approx(
        corpus_bleu(hyps, refs).score, abs=1e-12)


@given(st.lists(sentence, min_size=1, max_size=8))
def test_bleu_self_is_one_when_long_enough(hyps):
    score = corpus_bleu(hyps, hyps)
    if all(t > 0 for t in score.totals):
        assert score.score == pytest.approx(1.0, abs=1e-12)


def test_length_ratio():
    assert length_ratio(toks(BLEU_REFS), toks(BLEU_REFS)) == 1.0
    assert length_ratio([["w"] * 88], [["w"] * 100]) == 0.88
    with pytest.raises(AnalysisError):
        length_ratio([], [])


def test_coverage_examples():
    rare = RareWordSet(frozenset({"u", "v", "w"}), 100)
    refs = [["u", "x"], ["v"]]
    assert rare_word_coverage([["x"], ["y"]], refs, rare).generated == 0
    rep = rare_word_coverage([["u"], ["y"]], refs, rare)
    assert (rep.rare_in_ref, rep.generated, rep.not_generated) == (2, 1, 1)
    rep = rare_word_coverage([["u"], ["y"]], refs, rare, {"u": 150, "v": 99}, 100)
    assert rep.affected_by_augmentation == 1
    assert rep.words_affected == ("u",)


def test_coverage_line_mismatch():
    with pytest.raises(AnalysisError):
        rare_word_coverage([["a"]], [["a"], ["b"]], {"a"})


def coverage_oracle(out, refs, rare, counts, threshold):
    v_ref = set().union(*map(set, refs))
    v_out = set().union(*map(set, out))
    in_ref = set(rare) & v_ref
    affected = {w for w in in_ref if counts.get(w, 0) >= threshold}
    return (len(in_ref), len(in_ref & v_out), len(in_ref - v_out), len(affected),
            len(affected & v_out), len(affected - v_out))


@given(aligned, st.sets(st.sampled_from(vocab)), st.dictionaries(st.sampled_from(vocab), st.integers(0, 10)),
       st.integers(1, 10))
def test_coverage_partition_and_oracle(pair, rare, counts, threshold):
    out, refs = pair
    rep = rare_word_coverage(out, refs, RareWordSet(frozenset(rare), threshold), counts, threshold)
    assert rep.generated + rep.not_generated == rep.rare_in_ref
    assert rep.affected_by_augmentation <= rep.rare_in_ref
    got = (rep.rare_in_ref, rep.generated, rep.not_generated, rep.affected_by_augmentation,
           rep.affected_generated, rep.affected_not_generated)
    assert got == coverage_oracle(out, refs, rare, counts, threshold)


def record(word, pass_number, aug_id):
    return AugmentationRecord(0, 0, "x", word, 0, "y", "z", 1, 1, 0.5, pass_number, aug_id)


def test_stats_empty():
    s = augmentation_stats([])
    assert (s.total, s.per_word, s.per_pass, s.augmented_pairs) == (0, {}, {}, 0)


def test_stats_counts():
    recs = [record("w", 1, 10), record("w", 1, 11), record("w", 2, 12), record("u", 2, 12)]
    s = augmentation_stats(recs, {"budget": 3})
    assert s.per_word == {"w": 3, "u": 1}
    assert sum(s.per_word.values()) == s.total == len(recs)
    assert sum(s.per_pass.values()) == len(recs)
    assert s.augmented_pairs == 3
    assert s.discards == {"budget": 3}


def test_write_report(tmp_path):
    write_report({"sys": {"bleu": 0.5}}, tmp_path / "r.json", tmp_path / "r.txt", header=["# h"])
    assert json.loads((tmp_path / "r.json").read_text()) == {"sys": {"bleu": 0.5}}
    assert (tmp_path / "r.txt").read_text() == "# h\n[sys]\n  bleu: 0.5\n"
