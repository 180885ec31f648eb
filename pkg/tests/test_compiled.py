"""The compiled kernels against the plain model and against each other."""

import numpy as np
import pytest
from numba import njit

from synth import mirror_models, zipf_bitext
from tdaug import compiled as C
from tdaug.corpus import BOS


@njit
def _rank_both(f, hists, k, rare, cache, ids_a, ranks_a, vals_a, ids_b, ranks_b, vals_b, counts):
    ctx = np.full(f.order + 1, -1, np.int64)
    stamp = np.zeros(f.radix, np.int64)
    lev = np.zeros(f.radix, np.int64)
    for q in range(hists.shape[0]):
        C._contexts(f, hists[q], ctx)
        counts[q, 0] = C._topk_rare(f, ctx, k, rare, stamp, lev, q + 1, ids_a[q], ranks_a[q], vals_a[q], cache)
        counts[q, 1] = C._topk_exact(f, ctx, k, rare, ids_b[q], ranks_b[q], vals_b[q])


@njit
def _probs(f, hists, words, out):
    ctx = np.full(f.order + 1, -1, np.int64)
    for q in range(hists.shape[0]):
        C._contexts(f, hists[q], ctx)
        for w in range(len(words)):
            out[q, w] = C._prob(f, words[w], ctx)


def _setup(seed, order):
    rng = np.random.default_rng(seed)
    corpus = zipf_bitext(int(rng.integers(50, 300)), int(rng.integers(30, 400)), seed=seed, min_len=1,
                         max_len=int(rng.integers(3, 16)))
    models = mirror_models(corpus, order, int(rng.integers(20, 400)), int(rng.integers(1, 8)))
    return rng, corpus, models


def _histories(rng, f, toks, width, n=150):
    hists = np.empty((n, width), np.int64)
    for h in range(n):
        if h % 3 == 0:
            hists[h] = rng.integers(0, f.radix, width)
        else:
            end = int(rng.integers(0, len(toks)))
            row = [f.bos] * width + list(toks[max(0, end - width):end])
            hists[h] = row[-width:]
    return hists


def _names(lm, ids):
    return tuple(BOS if t == lm.bos else lm.vocab.word(int(t)) for t in ids)


def _sorted(ids, ranks, vals, n):
    order = np.argsort(ranks[:n])
    return list(zip(ids[:n][order].tolist(), ranks[:n][order].tolist(), vals[:n][order].tolist()))


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("order", [2, 3, 4, 5])
def test_cached_ranking_matches_exact(seed, order):
    rng, corpus, models = _setup(seed, order)
    for lm in (models.forward, models.backward):
        f = C.pack_lm(lm)
        rare = np.zeros(f.radix, np.bool_)
        for w in models.rare:
            rare[lm.vocab.id(w)] = True
        toks = C._Tokens(corpus.sources(), lm.vocab, f.radix).lm
        hists = _histories(rng, f, toks, order - 1)
        for k in (1, 3, 10, 50, 1000):
            # tiny pools force the uncached and rebuild paths
            for cap in (64, 5000, 1 << 20):
                cache = C.new_query_cache(f, k, cap=cap)
                shape = (len(hists), k)
                a = [np.zeros(shape, np.int64), np.zeros(shape, np.int64), np.zeros(shape)]
                b = [np.zeros(shape, np.int64), np.zeros(shape, np.int64), np.zeros(shape)]
                counts = np.zeros((len(hists), 2), np.int64)
                for _ in range(2):  # second round reads the cache
                    _rank_both(f, hists, k, rare, cache, *a, *b, counts)
                    for q in range(len(hists)):
                        assert _sorted(a[0][q], a[1][q], a[2][q], counts[q, 0]) == \
                            _sorted(b[0][q], b[1][q], b[2][q], counts[q, 1])


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_exact_ranking_matches_model(seed, order):
    rng, corpus, models = _setup(seed, order)
    for lm in (models.forward, models.backward):
        f = C.pack_lm(lm)
        rare = np.zeros(f.radix, np.bool_)
        for w in models.rare:
            rare[lm.vocab.id(w)] = True
        width = max(order - 1, 1)
        hists = _histories(rng, f, C._Tokens(corpus.sources(), lm.vocab, f.radix).lm, width, 40)
        k = int(rng.integers(1, 60))
        shape = (len(hists), k)
        out = [np.zeros(shape, np.int64), np.zeros(shape, np.int64), np.zeros(shape)]
        counts = np.zeros((len(hists), 2), np.int64)
        if order == 1:
            ctx = np.full(2, -1, np.int64)
            for q in range(len(hists)):
                counts[q, 1] = C._topk_exact(f, ctx, k, rare, out[0][q], out[1][q], out[2][q])
            hist_names = [()] * len(hists)
        else:
            cache = C.new_query_cache(f, k)
            _rank_both(f, hists, k, rare, cache, *[np.zeros(shape, np.int64)] * 2, np.zeros(shape), *out, counts)
            hist_names = [_names(lm, h) for h in hists]
        for q, h in enumerate(hist_names):
            expected = [(lm.vocab.id(w), r, p) for w, r, p in lm.topk_scored(h, k, models.rare)]
            assert _sorted(out[0][q], out[1][q], out[2][q], counts[q, 1]) == expected


@pytest.mark.parametrize("order", [2, 3, 5])
def test_packed_prob_matches_model(order):
    rng, corpus, models = _setup(11, order)
    lm = models.backward
    f = C.pack_lm(lm)
    hists = _histories(rng, f, C._Tokens(corpus.sources(), lm.vocab, f.radix).lm, order - 1, 30)
    words = np.arange(f.radix - 1, dtype=np.int64)
    out = np.zeros((len(hists), len(words)))
    _probs(f, hists, words, out)
    for q, h in enumerate(hists):
        names = _names(lm, h)
        assert [lm.prob(lm.vocab.word(int(w)), names) for w in words] == out[q].tolist()


def test_pack_is_cached_per_model():
    _, _, models = _setup(0, 3)
    assert C.pack_lm(models.forward) is C.pack_lm(models.forward)
