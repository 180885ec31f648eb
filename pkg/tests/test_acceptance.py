"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line
that the terminal summary prints at the end of the run."""

import itertools
import math
import random
import time
from collections import Counter
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import sacrebleu
from hypothesis import given, settings

import conftest
from synth import mirror_models, zipf_bitext
from test_align import hand_em
from test_analysis import BLEU_HYPS, BLEU_REFS, coverage_oracle
from test_augment import build_case, check_invariants, run_cases
from tdaug.align import AlignmentLinks, lexical_tables_from_alignments, train_ibm1
from tdaug.analysis import corpus_bleu, rare_word_coverage
from tdaug.augment import AugmentConfig, candidate_substitutions, run_tda
from tdaug.bpe import apply_bpe, learn_bpe, undo_bpe
from tdaug.cli import main
from tdaug.config import parse_config
from tdaug.corpus import BOS, UNK, ParallelCorpus, RareWordSet, build_vocabulary, load_parallel
from tdaug.lm import BACKWARD, FORWARD, NGramLM, train_ngram_lm
from tdaug.pipeline import Run, build_models


@contextmanager
def criterion(n, title):
    """Record the outcome of criterion ``n``; ``detail`` entries are appended to the line."""
    detail = []
    try:
        yield detail
    except BaseException:
        conftest.ACCEPTANCE[n] = f"[FAIL] {n}. {title}" + (f": {'; '.join(detail)}" if detail else "")
        raise
    conftest.ACCEPTANCE[n] = f"[PASS] {n}. {title}" + (f": {'; '.join(detail)}" if detail else "")


# -- 1: brute-force oracle ---------------------------------------------------

def _history(tokens, i, order, forward):
    width = order - 1
    if forward:
        return tuple(tokens[max(0, i - width):i])
    return tuple(reversed(tokens[i + 1:i + 1 + width]))


def _top(lm, history, k):
    """The k best words by brute-force enumeration of the whole vocabulary."""
    scored = sorted((-lm.prob(w, history), lm.vocab.id(w), w) for w in lm.vocab.words)
    return {w: (rank, -negp) for rank, (negp, _, w) in enumerate(scored[:k], start=1)}


def oracle_run(corpus, models, cfg):
    """Every rule applied by enumeration: sampled positions, both top-K lists,
    the aligned target word, each candidate translation, the cap and dedup."""
    vocab, rare = models.vocab, models.rare
    fwd, bwd, tlm, lex = models.forward, models.backward, models.target_lm, models.lexicon
    eligible = [[i for i, w in enumerate(p.source) if w in vocab and w not in rare] for p in corpus]
    total = sum(map(len, eligible))
    seen = {(p.source, p.target) for p in corpus}
    used = Counter()
    augmented, records, trace, per_pass = [], [], [], []
    if not rare or total == 0:
        return augmented, records, trace, per_pass
    for pass_number in range(1, cfg.max_passes + 1):
        prio = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(pass_number,))).random(total)
        start, accepted = 0, 0
        for pair, elig in zip(corpus, eligible):
            pr = prio[start:start + len(elig)]
            start += len(elig)
            if not elig:
                continue
            by_priority = sorted(range(len(elig)), key=lambda k: (-pr[k], k))
            if cfg.mode == "r1":
                positions = [elig[by_priority[0]]]
            else:
                positions = []
                for k in by_priority:
                    if all(abs(elig[k] - q) >= cfg.min_distance for q in positions):
                        positions.append(elig[k])
                positions.sort()
            trace.append((pass_number, pair.id, tuple(positions)))
            pending, taken, recs = Counter(), set(), []
            for i in positions:
                top_f = _top(fwd, _history(pair.source, i, fwd.order, True), cfg.top_k)
                top_b = _top(bwd, _history(pair.source, i, bwd.order, False), cfg.top_k)
                cands = [w for w in rare.words if w in top_f and w in top_b and w != pair.source[i]]
                cands.sort(key=lambda w: (-(math.log(top_f[w][1]) + math.log(top_b[w][1])), vocab.id(w)))
                js = sorted(j for a, j in models.links[pair.id] if a == i)
                if not cands or not js:
                    continue
                j = max(js, key=lambda j: (lex.direct.get(pair.source[i], {}).get(pair.target[j], 0.0), -j))
                if j in taken:
                    continue
                for c in cands:
                    if used[c] + pending[c] >= cfg.max_per_word:
                        continue
                    options = []
                    for t, p_ts in sorted(lex.direct.get(c, {}).items(), key=lambda tp: (-tp[1], tp[0])):
                        if p_ts <= 0 or t not in tlm.vocab:
                            continue
                        p_st = lex.inverse.get(t, {}).get(c, 0.0)
                        lm_p = tlm.prob(t, _history(pair.target, j, tlm.order, True))
                        options.append((p_st * p_ts * lm_p, lm_p, t))
                    if not options:
                        continue
                    best = max(options, key=lambda o: o[0])  # first of equal scores
                    score, lm_p, t = best
                    if lm_p < cfg.lm_floor or score <= 0 or t == pair.target[j]:
                        continue
                    pending[c] += 1
                    taken.add(j)
                    recs.append((i, c, j, t, top_f[c][0], top_b[c][0], score))
                    break
            if not recs:
                continue
            src, tgt = list(pair.source), list(pair.target)
            for i, c, j, t, *_ in recs:
                src[i], tgt[j] = c, t
            key = (tuple(src), tuple(tgt))
            if key in seen:
                continue
            seen.add(key)
            aug_id = len(corpus) + len(augmented)
            augmented.append(key)
            for i, c, j, t, rf, rb, score in recs:
                used[c] += 1
                records.append((pair.id, i, pair.source[i], c, j, pair.target[j], t, rf, rb, score, pass_number,
                                aug_id))
            accepted += 1
        per_pass.append(accepted)
        if accepted == 0:
            break
    return augmented, records, trace, per_pass


def _as_tuple(r):
    return (r.pair_id, r.source_position, r.original_source, r.substitute, r.target_position, r.original_target,
            r.replacement, r.forward_rank, r.backward_rank, r.translation_score, r.pass_number, r.augmented_id)


def _toy_cases():
    cases = []
    for seed in range(3):
        corpus = zipf_bitext(50, 28, seed=seed, min_len=3, max_len=12)
        models = mirror_models(corpus, 2, 30, 8)
        assert len(models.vocab) <= 30
        for cfg in (AugmentConfig(8, 20, 3, 1e-4, "r1", 5, 20, seed),
                    AugmentConfig(8, 24, 2, 1e-4, "r_ge1", 3, 20, seed + 10)):
            cases.append((f"zipf{seed}/{cfg.mode}", corpus, models, cfg))
    fixture = Path(conftest.FIXTURES)
    cfg = parse_config(fixture / "toy.yaml")
    corpus = load_parallel(fixture / "toy.en", fixture / "toy.de")
    models = build_models(Run(cfg, fixture), corpus)
    for seed in (13, 14):
        for mode in ("r1", "r_ge1"):
            cases.append((f"toy/{mode}/{seed}", corpus, models, AugmentConfig(2, 25, 2, 1e-3, mode, 2, 20, seed)))
    return cases


def test_criterion_1_oracle_equivalence():
    with criterion(1, "brute-force oracle equivalence, toy bitexts, order-2 models") as detail:
        cases = _toy_cases()
        warm = zipf_bitext(5, 10, seed=99, min_len=2, max_len=4)
        run_tda(warm, mirror_models(warm, 2, 10, 2), AugmentConfig(2, 5))  # compile outside the timing
        slowest, n_aug = 0.0, 0
        for (name, corpus, models, cfg), engine in itertools.product(cases, ("python", "compiled")):
            name = f"{name}/{engine}"
            trace = []
            t0 = time.perf_counter()
            out = run_tda(corpus, models, cfg, trace=trace, engine=engine)
            slowest = max(slowest, time.perf_counter() - t0)
            augmented, records, o_trace, per_pass = oracle_run(corpus, models, cfg)
            assert trace == o_trace, name
            assert [(p.source, p.target) for p in out.augmented] == augmented, name
            got = [_as_tuple(r) for r in out.records]
            assert [g[:9] + g[10:] for g in got] == [r[:9] + r[10:] for r in records], name
            assert all(g[9] == pytest.approx(r[9], rel=1e-12) for g, r in zip(got, records)), name
            assert set(map(tuple, augmented)) == {(p.source, p.target) for p in out.augmented}
            assert out.accepted_per_pass == per_pass, name
            n_aug += len(augmented) if engine == "python" else 0
        assert n_aug > 0
        assert slowest < 5.0
        detail.append(f"{len(cases)} runs x 2 engines, {n_aug} augmented pairs, all identical; slowest run {slowest:.3f}s < 5s")


# -- 2: constraint suite -----------------------------------------------------

_cases_run = Counter()


@settings(max_examples=1000, database=None)
@given(run_cases)
def _constraint_case(case):
    corpus, models, cfg = build_case(case)
    out = run_tda(corpus, models, cfg)
    check_invariants(corpus, models, cfg, out)
    pair = corpus[case["seed"] % len(corpus)]
    for i in range(len(pair.source)):
        assert set(candidate_substitutions(pair, i, models.forward, models.backward, models.rare, cfg.top_k)) \
            <= set(models.rare.words)
    _cases_run["cases"] += 1
    _cases_run["augmented"] += len(out.augmented)


def test_criterion_2_constraint_suite():
    with criterion(2, "constraint suite over randomized cases") as detail:
        _constraint_case()
        assert _cases_run["cases"] >= 1000
        detail.append(f"{_cases_run['cases']} cases, {_cases_run['augmented']} augmented pairs, 0 violations")


# -- 3: language model -------------------------------------------------------

def test_criterion_3_lm_correctness(tmp_path):
    with criterion(3, "language model normalization, reversal, add-one fixture, ARPA round trip") as detail:
        corpus = zipf_bitext(300, 80, seed=3, min_len=1, max_len=15)
        sents = corpus.sources()
        vocab = build_vocabulary(sents, 60)
        lm = train_ngram_lm(sents, 4, FORWARD, vocab)
        rng = random.Random(0)
        pool = [*vocab.words, UNK, BOS, "never-seen"]
        worst = 0.0
        for _ in range(100):
            h = [rng.choice(pool) for _ in range(rng.randint(0, 4))]
            if rng.random() < 0.5:
                s = rng.choice(sents)
                h = list(s[:rng.randint(0, len(s))])
            worst = max(worst, abs(math.fsum(lm.distribution(h).values()) - 1.0))
        assert worst <= 1e-9
        bwd = train_ngram_lm(sents, 4, BACKWARD, vocab)
        rev = train_ngram_lm([tuple(reversed(s)) for s in sents], 4, FORWARD, vocab)
        pb, pr = bwd.parameters(), rev.parameters()
        assert pb.keys() == pr.keys()
        assert all(np.array_equal(pb[k], pr[k], equal_nan=True) for k in pb)
        uni = train_ngram_lm([["a", "a", "b"]], 1, FORWARD, build_vocabulary(["a a b"], 10))
        assert uni.prob("a", []) == 0.5
        bwd.save_arpa(tmp_path / "b.arpa")
        back = NGramLM.load_arpa(tmp_path / "b.arpa", vocab)
        err = max(abs(back.prob(w, bwd.history_at(s, i)) - bwd.prob(w, bwd.history_at(s, i)))
                  for s in sents[:40] for i in range(len(s)) for w in (s[i], UNK, vocab.words[0]))
        assert err <= 1e-6
        detail.append(f"max |sum - 1| = {worst:.1e} over 100 histories; backward == reversed forward exactly; "
                      f"P(a) = 0.5; ARPA max error {err:.1e}")


# -- 4: alignment ------------------------------------------------------------

def test_criterion_4_alignment():
    with criterion(4, "alignment: EM monotone, das/the fixture, link-count oracle") as detail:
        corpora = [zipf_bitext(n, v, seed=s, min_len=1, max_len=10) for s, (n, v) in enumerate([(30, 20), (80, 50),
                                                                                              (5, 5), (200, 100)])]
        corpora.append(load_parallel(Path(conftest.FIXTURES) / "toy.en", Path(conftest.FIXTURES) / "toy.de"))
        # shuffle targets so the alignment problem is not trivially diagonal
        rng = random.Random(4)
        corpora.append(ParallelCorpus.from_sentences(corpora[1].sources(),
                                                     [tuple(rng.sample(t, len(t))) for t in corpora[1].targets()]))
        for c in corpora:
            _, a, b = train_ibm1(c, 20, return_history=True)
            for ll in (a, b):
                assert all(y >= x - 1e-9 * abs(x) for x, y in zip(ll, ll[1:]))
        das = ParallelCorpus.from_sentences([("das", "haus"), ("das",)], [("the", "house"), ("the",)])
        lex = train_ibm1(das, 20)
        oracle = hand_em([(p.source, p.target) for p in das], 20)
        assert lex.p_direct("das", "the") > 0.9
        assert lex.p_direct("das", "the") == pytest.approx(oracle["das"]["the"] / sum(
            p for w, p in oracle["das"].items() if p >= 1e-6), rel=1e-12)
        checked = 0
        for c in corpora[:4]:
            links = AlignmentLinks(tuple(frozenset((i, j) for i in range(len(p.source)) for j in range(len(p.target))
                                                   if rng.random() < 0.3) for p in c))
            lex = lexical_tables_from_alignments(c, links)
            occ = Counter((p.source[i], p.target[j]) for p, ls in zip(c, links) for i, j in ls)
            by_s, by_t = Counter(), Counter()
            for (s, t), n in occ.items():
                by_s[s] += n
                by_t[t] += n
            for (s, t), n in occ.items():
                assert lex.p_direct(s, t) == n / by_s[s]
                assert lex.p_inverse(s, t) == n / by_t[t]
                checked += 1
            assert len(lex) == len(occ)
        detail.append(f"{len(corpora)} corpora x 2 directions monotone over 20 iterations; "
                      f"p(the|das) = {train_ibm1(das, 20).p_direct('das', 'the'):.4f}; {checked} link-count entries exact")


# -- 5: BLEU -----------------------------------------------------------------

def test_criterion_5_bleu_parity():
    with criterion(5, "BLEU parity with sacrebleu on a 20-sentence fixture") as detail:
        hyps, refs = [h.split() for h in BLEU_HYPS], [r.split() for r in BLEU_REFS]
        assert len(hyps) == 20
        ours = corpus_bleu(hyps, refs).score
        ref = sacrebleu.corpus_bleu(BLEU_HYPS, [BLEU_REFS], tokenize="none", lowercase=True, smooth_method="none",
                                    force=True).score / 100
        assert abs(ours - ref) <= 1e-4
        assert corpus_bleu(refs, refs).score == 1.0
        assert corpus_bleu([["a", "a", "a", "a"]], [["b", "b", "b", "b"]]).score == 0.0
        detail.append(f"ours {ours:.6f} vs sacrebleu {ref:.6f} (|diff| {abs(ours - ref):.1e}); identity 1.0; disjoint 0.0")


# -- 6: BPE ------------------------------------------------------------------

def test_criterion_6_bpe_round_trip():
    with criterion(6, "BPE round trip and first-merge fixture") as detail:
        rng = random.Random(6)
        alphabet = "abcdefghijklmnopqrstuvwxyzéü"
        sents = [["".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12))) for _ in range(rng.randint(1, 20))]
                 for _ in range(10_000)]
        table = learn_bpe(sents[:3000], 2000)
        bad = sum(undo_bpe(apply_bpe(s, table)) != s for s in sents)
        assert bad == 0
        first = learn_bpe([["ab", "ab", "abc"]], 1).merges
        assert first == (("a", "b"),)
        detail.append(f"10000 sentences, {len(table)} merges, 0 mismatches; first merge {first[0]}")


# -- 7: determinism ----------------------------------------------------------

def test_criterion_7_determinism(toy_dir):
    with criterion(7, "byte-identical augment runs") as detail:
        outs = []
        for name in ("run_a", "run_b"):
            args = ["augment", "--config", str(toy_dir / "toy.yaml"), "--out", str(toy_dir / name),
                    "--set", "augment.top_k=20", "--set", "augment.mode=r_ge1", "--set", "augment.min_distance=2"]
            assert main(args) == 0
            outs.append(toy_dir / name)
        files = ["augmented.src", "augmented.tgt", "records.jsonl", "augment_stats.json",
                 "manifests/augment-001.json"]
        for f in files:
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
        n = len((outs[0] / "records.jsonl").read_text().splitlines())
        assert n > 0
        detail.append(f"{len(files)} artifacts identical across two runs ({n} records)")


# -- 8: coverage report ------------------------------------------------------

def test_criterion_8_coverage_logic():
    with criterion(8, "coverage partition and set-arithmetic oracle") as detail:
        rng = random.Random(8)
        words = [f"w{k}" for k in range(40)]
        for _ in range(500):
            n = rng.randint(1, 10)
            refs = [[rng.choice(words) for _ in range(rng.randint(1, 8))] for _ in range(n)]
            outs = [[rng.choice(words) for _ in range(rng.randint(1, 8))] for _ in range(n)]
            rare = set(rng.sample(words, rng.randint(0, 30)))
            counts = {w: rng.randint(0, 200) for w in rng.sample(words, 20)}
            rep = rare_word_coverage(outs, refs, RareWordSet(frozenset(rare), 100), counts, 100)
            assert rep.generated + rep.not_generated == rep.rare_in_ref
            assert (rep.rare_in_ref, rep.generated, rep.not_generated, rep.affected_by_augmentation,
                    rep.affected_generated, rep.affected_not_generated) == coverage_oracle(outs, refs, rare, counts, 100)
        # two systems scored against one reference set, the shape of a per-system bar chart:
        # rare = {ant, bee, cod, dab, eel, fig}; V_ref holds ant bee cod dab eel
        refs = [["the", "ant", "and", "bee"], ["a", "cod"], ["dab", "eel", "go"]]
        base = [["the", "ant", "and", "bug"], ["a", "fish"], ["dab", "it", "go"]]
        tda = [["the", "ant", "and", "bee"], ["a", "cod"], ["fig", "eel", "go"]]
        rare = RareWordSet(frozenset({"ant", "bee", "cod", "dab", "eel", "fig"}), 100)
        after = {"bee": 150, "cod": 100, "eel": 99, "fig": 300}
        b = rare_word_coverage(base, refs, rare, after, 100)
        t = rare_word_coverage(tda, refs, rare, after, 100)
        # by hand: in_ref = 5 words; base generates {ant, dab}; tda {ant, bee, cod, eel}; affected {bee, cod}
        assert (b.rare_in_ref, b.generated, b.not_generated) == (5, 2, 3)
        assert (t.rare_in_ref, t.generated, t.not_generated) == (5, 4, 1)
        assert (b.affected_by_augmentation, b.affected_generated, b.affected_not_generated) == (2, 0, 2)
        assert (t.affected_by_augmentation, t.affected_generated, t.affected_not_generated) == (2, 2, 0)
        for rep, out in ((b, base), (t, tda)):
            assert (rep.rare_in_ref, rep.generated, rep.not_generated, rep.affected_by_augmentation,
                    rep.affected_generated, rep.affected_not_generated) == coverage_oracle(out, refs, rare, after, 100)
        detail.append("500 randomized fixtures and the two-system fixture match the oracle")


# -- 9: throughput -----------------------------------------------------------

def test_criterion_9_throughput():
    import os

    with criterion(9, "throughput: 100,000 pairs, order-4 models, 30K vocabulary, under 60 s") as detail:
        cores = len(os.sched_getaffinity(0))
        t0 = time.perf_counter()
        corpus = zipf_bitext(100_000, 31_000, seed=0)  # enough types that 30K survive the cap
        models = mirror_models(corpus, 4, 30_000, 100)
        t_train = time.perf_counter() - t0
        warm = zipf_bitext(20, 30, seed=1, min_len=3, max_len=6)
        t0 = time.perf_counter()
        run_tda(warm, mirror_models(warm, 4, 30, 3), AugmentConfig(3, 10))
        t_compile = time.perf_counter() - t0
        cfg = AugmentConfig()  # R=100, K=1000, N=500, 20 passes
        t0 = time.perf_counter()
        out = run_tda(corpus, models, cfg)
        t_aug = time.perf_counter() - t0
        detail.append(f"augmentation {t_aug:.1f}s for {len(out.augmented)} new pairs over "
                      f"{len(out.accepted_per_pass)} passes on {cores} core(s); reported apart: data and "
                      f"model training {t_train:.1f}s, compile or cache load {t_compile:.1f}s")
        assert len(models.vocab) == 30_000 and len(corpus) == 100_000
        assert t_aug < 60.0
