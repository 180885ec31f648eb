"""Compiled sweep for :func:`tdaug.augment.run_tda`.

Same rules as the Python engine in :mod:`tdaug.augment`, same output bit for
bit, but every sentence is handled inside one numba loop per pass.  Words are
integers: in-vocabulary words keep their vocabulary id, out-of-vocabulary
types get ids from ``radix`` upwards so that equal ids mean equal strings.

Top-k queries merge the per-context follower lists (pre-sorted by
probability) with the unigram ranking instead of scoring the whole
vocabulary.  Scaling a list by a back-off weight can, through rounding, tie
two entries that were ordered by probability but not by id; the merge
notices and that one query falls back to a full sort.
"""

from __future__ import annotations

import logging
import math
from collections import namedtuple
from itertools import chain

import numpy as np
from numba import njit

from .corpus import BOS, ParallelCorpus, SentencePair
from .lm import FORWARD, NGramLM

logger = logging.getLogger(__name__)

REASONS = ("no_candidate", "unaligned", "target_conflict", "budget", "no_translation", "lm_floor",
           "zero_score", "unchanged_target", "duplicate")
(NO_CANDIDATE, UNALIGNED, TARGET_CONFLICT, BUDGET, NO_TRANSLATION, LM_FLOOR, ZERO_SCORE, UNCHANGED_TARGET,
 DUPLICATE) = range(len(REASONS))

PackedLM = namedtuple("PackedLM", "order radix bos forward unigram uni_bo uni_order keys probs backoffs off "
                                  "ranked_word ranked_prob u_base l2_upos child coff")


def pack_lm(lm: NGramLM) -> PackedLM:
    """Flat arrays for the kernels; computed once per model."""
    cached = getattr(lm, "_packed", None)
    if cached is not None:
        return cached
    radix = lm.radix
    off = np.zeros(lm.order + 2, dtype=np.int64)
    keys, probs, backoffs, ranked_word, ranked_prob = [], [], [], [], []
    total = 0
    for j, level in enumerate(lm.levels, start=2):
        off[j] = total
        # each context's followers again, best first; stored in place so the merge reads sequentially
        order = _rank_followers(level.keys, level.probs, radix)
        ranked_word.append(level.keys[order] % radix)
        ranked_prob.append(level.probs[order])
        keys.append(level.keys)
        probs.append(level.probs)
        backoffs.append(level.backoffs)
        total += len(level.keys)
    off[lm.order + 1:] = total
    # the unigram ranking's words and probabilities, indexed by word, close the ranked arrays
    unigram = np.ascontiguousarray(lm.unigram, dtype=np.float64)
    ranked_word.append(np.arange(len(unigram)))
    ranked_prob.append(unigram)

    def flat(parts, dtype):
        return np.ascontiguousarray(np.concatenate(parts), dtype=dtype) if parts else np.empty(0, dtype)

    uni_order = np.ascontiguousarray(lm._uni_order, dtype=np.int64)
    l2_upos = np.empty(0, dtype=np.int64)
    if lm.levels:
        uni_pos = np.full(radix, -1, dtype=np.int64)
        uni_pos[uni_order] = np.arange(len(uni_order))
        parent, word = np.divmod(lm.levels[0].keys, radix)
        upos = uni_pos[word]
        l2_upos = np.ascontiguousarray(upos[np.lexsort((upos, parent))])
    # child[coff[j] + node]: flat index of the first entry one level up whose context is that level-j node
    coff = np.zeros(lm.order + 1, dtype=np.int64)
    child = []
    for j in range(1, lm.order):
        coff[j] = sum(len(c) for c in child)
        n_nodes = radix if j == 1 else len(lm.levels[j - 2].keys)
        child.append(off[j + 1] + np.searchsorted(lm.levels[j - 1].keys, np.arange(n_nodes + 1) * radix))
    packed = PackedLM(lm.order, radix, lm.bos, lm.direction == FORWARD, unigram,
                      np.ascontiguousarray(lm.unigram_backoff, dtype=np.float64), uni_order,
                      flat(keys, np.int64), flat(probs, np.float64), flat(backoffs, np.float64), off,
                      flat(ranked_word, np.int64), flat(ranked_prob, np.float64), total, l2_upos,
                      flat(child, np.int64), coff)
    lm._packed = packed
    return packed


# -- language model kernels --------------------------------------------------

@njit(cache=True)
def _rank_followers(keys, probs, radix):
    """Permutation sorting each context's run of ``keys`` by descending
    probability; keys are sorted, so equal probabilities stay in word order."""
    n = len(keys)
    order = np.arange(n)
    a = 0
    while a < n:
        parent = keys[a] // radix
        e = a + 1
        while e < n and keys[e] // radix == parent:
            e += 1
        if e - a <= 16:
            for q in range(a + 1, e):  # stable insertion sort
                x = order[q]
                r = q
                while r > a and probs[order[r - 1]] < probs[x]:
                    order[r] = order[r - 1]
                    r -= 1
                order[r] = x
        elif e - a > 1:
            order[a:e] = a + np.argsort(-probs[a:e], kind="mergesort")
        a = e
    return order

@njit(cache=True, inline="always")
def _search(keys, lo, hi, key):
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, inline="always")
def _children(lm, j, node):
    """Flat range of the entries whose context is level-``j`` node ``node``."""
    q = lm.coff[j] + node
    return lm.child[q], lm.child[q + 1]


@njit(cache=True, inline="always")
def _find(lm, j, node, wid):
    """Flat index of ``wid`` after level-``j`` node ``node``, -1 if unseen."""
    a, e = _children(lm, j, node)
    key = node * lm.radix + wid
    p = _search(lm.keys, a, e, key)
    return p if p < e and lm.keys[p] == key else -1


@njit(cache=True)
def _fill_history(lm, toks, start, length, i, hist):
    w = lm.order - 1
    for q in range(w):
        hist[q] = lm.bos
    for d in range(1, w + 1):
        k = i - d if lm.forward else i + d
        if k < 0 or k >= length:
            break
        hist[w - d] = toks[start + k]


@njit(cache=True)
def _contexts(lm, hist, ctx):
    """ctx[j]: node of the last j - 1 history tokens (level j - 1), -1 if unseen."""
    w = lm.order - 1
    for j in range(2, lm.order + 1):
        first = w - (j - 1)
        node = hist[first]
        for lvl in range(2, j):
            p = _find(lm, lvl - 1, node, hist[first + lvl - 1])
            if p < 0:
                node = -1
                break
            node = p - lm.off[lvl]
        ctx[j] = node


@njit(cache=True)
def _prob(lm, wid, ctx):
    b = 1.0
    for j in range(lm.order, 1, -1):
        c = ctx[j]
        if c < 0:
            continue
        p = _find(lm, j - 1, c, wid)
        if p >= 0:
            return b * lm.probs[p]
        if j > 2:
            b *= lm.backoffs[lm.off[j - 1] + c]
        else:
            b *= lm.uni_bo[c]
    return b * lm.unigram[wid]


@njit(cache=True)
def _topk_exact(lm, ctx, k, rare, out_id, out_rank, out_val):
    n_words = len(lm.uni_order)
    b = 1.0
    facs = np.zeros(lm.order + 1)
    for j in range(lm.order, 1, -1):
        c = ctx[j]
        if c < 0:
            continue
        facs[j] = b
        if j > 2:
            b *= lm.backoffs[lm.off[j - 1] + c]
        else:
            b *= lm.uni_bo[c]
    vals = np.empty(n_words)
    for wid in range(1, n_words + 1):
        vals[wid - 1] = b * lm.unigram[wid]
    for j in range(2, lm.order + 1):
        c = ctx[j]
        if c < 0:
            continue
        a, e = _children(lm, j - 1, c)
        for g in range(a, e):
            wid = lm.keys[g] - c * lm.radix
            if 1 <= wid <= n_words:
                vals[wid - 1] = facs[j] * lm.probs[g]
    order = np.argsort(-vals, kind="mergesort")
    n = 0
    for r in range(min(k, n_words)):
        wid = order[r] + 1
        if rare[wid]:
            out_id[n] = wid
            out_rank[n] = r + 1
            out_val[n] = vals[order[r]]
            n += 1
    return n


@njit(cache=True)
def _topk_merge(lm, ctx, k, rare, stamp, lev, sv, out_id, out_rank, out_val):
    """Rare words among the top ``k`` as (id, 1-based rank, prob); returns the count.

    Lists, highest order first: the followers of each seen context, then the
    unigram ranking.  A word is taken from the highest-order list holding it
    and skipped everywhere below.
    """
    uni_order, unigram, l2_upos = lm.uni_order, lm.unigram, lm.l2_upos
    ranked_word, ranked_prob = lm.ranked_word, lm.ranked_prob
    kind = np.empty(6, np.int64)
    ptr = np.empty(6, np.int64)
    end = np.empty(6, np.int64)
    fac = np.empty(6)
    hid = np.full(6, -1, np.int64)  # current head per list, -1 when exhausted
    hval = np.empty(6)
    pid = np.full(6, -1, np.int64)  # last entry looked at per list
    pval = np.empty(6)
    moved = np.ones(6, np.bool_)
    nl = 0
    b = 1.0
    q2 = 0
    l2e = 0
    for j in range(lm.order, 1, -1):
        c = ctx[j]
        if c < 0:
            continue
        a, e = _children(lm, j - 1, c)
        if e > a:
            kind[nl] = j
            ptr[nl] = a
            end[nl] = e
            fac[nl] = b
            nl += 1
            if j == 2:
                q2 = a
                l2e = e
            elif j >= 3:
                for g in range(a, e):
                    wid = ranked_word[g]
                    if stamp[wid] != sv:
                        stamp[wid] = sv
                        lev[wid] = j
        if j > 2:
            b *= lm.backoffs[lm.off[j - 1] + c]
        else:
            b *= lm.uni_bo[c]
    kind[nl] = 1
    ptr[nl] = 0
    end[nl] = len(uni_order)
    fac[nl] = b
    nl += 1

    n = 0
    rank = 0
    while True:
        for L in range(nl):
            if not moved[L]:
                continue
            moved[L] = False
            hid[L] = -1
            while ptr[L] < end[L]:
                p = ptr[L]
                if kind[L] == 1:
                    wid = uni_order[p]
                    v = fac[L] * unigram[wid]
                else:
                    wid = ranked_word[p]
                    v = fac[L] * ranked_prob[p]
                if pid[L] >= 0 and v == pval[L] and wid < pid[L]:
                    # scaling tied two entries out of id order; rank exactly instead
                    return _topk_exact(lm, ctx, k, rare, out_id, out_rank, out_val)
                pid[L] = wid
                pval[L] = v
                skip = wid == 0 or wid == lm.bos
                if not skip:
                    if kind[L] == 1:
                        if stamp[wid] == sv:
                            skip = True
                        else:
                            while q2 < l2e and l2_upos[q2] < p:
                                q2 += 1
                            skip = q2 < l2e and l2_upos[q2] == p
                    else:
                        skip = stamp[wid] == sv and lev[wid] > kind[L]
                if skip:
                    ptr[L] += 1
                    continue
                hid[L] = wid
                hval[L] = v
                break
        if rank >= k:
            break
        best = -1
        for L in range(nl):
            if hid[L] < 0:
                continue
            if best < 0 or hval[L] > hval[best] or (hval[L] == hval[best] and hid[L] < hid[best]):
                best = L
        if best < 0:
            break
        rank += 1
        wid = hid[best]
        if rare[wid]:
            out_id[n] = wid
            out_rank[n] = rank
            out_val[n] = hval[best]
            n += 1
        ptr[best] += 1
        moved[best] = True
    return n



# -- query caches ---------------------------------------------------------------
#
# A base ranking holds, for one context, the merge of its own follower list
# with every shorter context's list and the unigram ranking: the full answer
# for a history ending in that context, up to some depth.  Entries index the
# ranked arrays (unigram words sit past ``u_base``) with the list level in the
# low three bits; level 1 is the unigram list.  A query picks the shortest
# context whose longer lists hold at most ``_DIRECT_MAX`` entries, then
# rescales the base level by level.  Rescaling keeps each level in order but
# can swap near-equal neighbours from different levels, so building records
# the first pair close enough for that ("danger").  Before it ranks follow
# from positions and only the longer lists' entries need searching; past it
# a query reads the entries one by one and checks their order.

QueryCache = namedtuple("QueryCache", "node_off start length full danger codes top rare_start rare_count rare_pos rare_top "
                                      "mark mark_level gen")
_NEAR = 1e-9  # far above the few ulps by which scaled orders can disagree
_DIRECT_MAX = 48  # longer-list entries a query searches one by one


def new_query_cache(lm: PackedLM, k: int, cap: int = 1 << 26) -> QueryCache:
    node_off = np.zeros(lm.order + 2, dtype=np.int64)
    for j in range(2, lm.order + 1):  # bases are keyed by ctx[j], a level j - 1 node
        node_off[j + 1] = node_off[j] + (lm.radix if j == 2 else lm.off[j] - lm.off[j - 1])
    if len(lm.ranked_word) >= 1 << 28:  # indices would not fit next to the level bits
        cap = 0
    n = int(node_off[-1])
    # np.empty pools: pages are only touched as contexts get cached
    return QueryCache(node_off, np.full(n, -1, np.int64), np.zeros(n, np.int32), np.zeros(n, np.bool_),
                      np.zeros(n, np.int64), np.empty(cap, np.int32), np.zeros(1, np.int64), np.zeros(n, np.int64),
                      np.zeros(n, np.int32), np.empty(cap // 2, np.int32), np.zeros(1, np.int64), np.zeros(lm.radix, np.int64),
                      np.zeros(lm.radix, np.int64), np.zeros(1, np.int64))


@njit(cache=True, inline="always")
def _backoff(lm, j, c):
    """Back-off weight of ``c``, the context node of level-``j`` lists."""
    return lm.backoffs[lm.off[j - 1] + c] if j > 2 else lm.uni_bo[c]


@njit(cache=True)
def _build_base(lm, ctx, jb, m, rare, cache):
    """Cache the first ``m`` base entries for context ``ctx[jb]``; False when a pool is full."""
    start = cache.top[0]
    m = min(m, len(cache.codes) - start)
    if m <= 0:
        return False
    rw, rp = lm.ranked_word, lm.ranked_prob
    codes, rare_pos, mark, mark_level = cache.codes, cache.rare_pos, cache.mark, cache.mark_level
    cache.gen[0] += 1
    gen = cache.gen[0]
    level = np.empty(6, np.int64)
    ptr = np.empty(6, np.int64)
    end = np.empty(6, np.int64)
    fac = np.empty(6)
    nl = 0
    b = 1.0
    for j in range(jb, 1, -1):
        c = ctx[j]
        if c < 0:
            continue
        a, e = _children(lm, j - 1, c)
        if e > a:
            level[nl] = j
            ptr[nl] = a
            end[nl] = e
            fac[nl] = b
            nl += 1
            for g in range(a, e):
                w = rw[g]
                if mark[w] != gen:
                    mark[w] = gen
                    mark_level[w] = j
        b *= _backoff(lm, j, c)
    level[nl] = 1
    ptr[nl] = 0
    end[nl] = len(lm.uni_order)
    fac[nl] = b
    nl += 1

    hid = np.full(6, -1, np.int64)
    hidx = np.empty(6, np.int64)
    hval = np.empty(6)
    rare_start = cache.rare_top[0]
    n_rare = 0
    n = 0
    danger = -1
    prev_level, prev_raw, prev_canon = -1, 0.0, 0.0
    full = False
    moved = np.ones(6, np.bool_)
    while True:
        best = -1
        for L in range(nl):
            if moved[L]:
                moved[L] = False
                hid[L] = -1
                while ptr[L] < end[L]:
                    if level[L] == 1:
                        w = lm.uni_order[ptr[L]]
                        g = lm.u_base + w
                        owned = mark[w] == gen
                    else:
                        g = ptr[L]
                        w = rw[g]
                        owned = mark_level[w] > level[L]
                    if w == 0 or w == lm.bos or owned:
                        ptr[L] += 1
                        continue
                    hid[L] = w
                    hidx[L] = g
                    hval[L] = fac[L] * rp[g]
                    break
            if hid[L] >= 0 and (best < 0 or hval[L] > hval[best] or (hval[L] == hval[best] and hid[L] < hid[best])):
                best = L
        if best < 0:
            full = True
            break
        if n == m:
            break
        g = hidx[best]
        w = hid[best]
        lv = level[best]
        codes[start + n] = (g << 3) | lv
        if rare[w]:
            if rare_start + n_rare >= len(rare_pos):
                return False
            rare_pos[rare_start + n_rare] = n
            n_rare += 1
        raw, canon = rp[g], hval[best]
        if danger < 0 and n > 0 and not (lv == prev_level and raw == prev_raw) \
                and not canon < prev_canon * (1.0 - _NEAR):
            danger = n - 1
        prev_level, prev_raw, prev_canon = lv, raw, canon
        n += 1
        ptr[best] += 1
        moved[best] = True
    if danger < 0:
        danger = n if full else n - 1  # past the end nothing is known about the next pair
    key = cache.node_off[jb] + ctx[jb]
    cache.start[key] = start
    cache.length[key] = n
    cache.full[key] = full
    cache.danger[key] = danger
    cache.rare_start[key] = rare_start
    cache.rare_count[key] = n_rare
    cache.top[0] = start + n
    cache.rare_top[0] = rare_start + n_rare
    return True


@njit(cache=True, inline="always")
def _head(lm, L, kind, ptr, end, fac, hid, hval, pid, pval, lev):
    """Move list ``L`` to its next entry not owned by a higher list; False on a tie out of id order."""
    hid[L] = -1
    while ptr[L] < end[L]:
        g = ptr[L]
        wid = lm.ranked_word[g]
        v = fac[L] * lm.ranked_prob[g]
        if pid[L] >= 0 and v == pval[L] and wid < pid[L]:
            return False
        pid[L] = wid
        pval[L] = v
        if wid == 0 or wid == lm.bos or lev[wid] > kind[L]:
            ptr[L] += 1
            continue
        hid[L] = wid
        hval[L] = v
        break
    return True


@njit(cache=True, inline="always")
def _best_head(nl, hid, hval):
    hb = -1
    for L in range(nl):
        if hid[L] >= 0 and (hb < 0 or hval[L] > hval[hb] or (hval[L] == hval[hb] and hid[L] < hid[hb])):
            hb = L
    return hb


@njit(cache=True, inline="always")
def _ahead(lm, codes, st, n, scale, v, w):
    """How many of the first ``n`` base entries rank above value ``v`` of word ``w``."""
    lo, hi = 0, n
    while lo < hi:
        mid = (lo + hi) >> 1
        code = codes[st + mid]
        g = code >> 3
        u = scale[code & 7] * lm.ranked_prob[g]
        if u > v or (u == v and lm.ranked_word[g] < w):
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, inline="always")
def _upper(arr, n, x):
    """How many of the sorted ``arr[:n]`` are <= x."""
    lo, hi = 0, n
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _rank_direct(lm, ctx, jb, key, k, rare, stamp, sv, lev, lists, n_high, scale, cache, out_id, out_rank, out_val):
    """Top-k rare words from positions in the base ranking.

    Returns the count, -1 when the stretch needed holds a danger pair, -2 when
    more base entries are needed, -3 on a tie out of id order.
    """
    kind, first, ptr, end, fac, hid, hval, pid, pval, nl = lists
    rw, rp = lm.ranked_word, lm.ranked_prob
    st = cache.start[key]
    ln = cache.length[key]
    full = cache.full[key]
    fd = cache.danger[key]
    codes = cache.codes
    hi_r = min(fd + 1, ln)  # entries [0, hi_r) are in scaled order

    # entries of the longer lists in rank order, each with its insertion point in the base
    ew = np.empty(n_high + 1, np.int64)
    ev = np.empty(n_high + 1)
    ins = np.empty(n_high + 1, np.int64)
    ne = 0
    for L in range(nl):
        ptr[L] = first[L]
        pid[L] = -1
        if not _head(lm, L, kind, ptr, end, fac, hid, hval, pid, pval, lev):
            return -3
    hb = _best_head(nl, hid, hval)
    while hb >= 0:
        ew[ne] = hid[hb]
        ev[ne] = hval[hb]
        ins[ne] = _ahead(lm, codes, st, hi_r, scale, hval[hb], hid[hb])
        ne += 1
        ptr[hb] += 1
        if not _head(lm, hb, kind, ptr, end, fac, hid, hval, pid, pval, lev):
            return -3
        hb = _best_head(nl, hid, hval)

    # base positions of the words the longer lists own
    sp = np.empty(n_high + 1, np.int64)
    ns = 0
    for L in range(nl):
        for g in range(first[L], end[L]):
            w = rw[g]
            if w == 0 or w == lm.bos or lev[w] != kind[L]:
                continue
            v = scale[1] * lm.unigram[w]
            for j in range(jb, 1, -1):
                if ctx[j] >= 0:
                    q = _find(lm, j - 1, ctx[j], w)
                    if q >= 0:
                        v = scale[j] * lm.probs[q]
                        break
            pos = _ahead(lm, codes, st, hi_r, scale, v, w)
            if pos < hi_r and rw[codes[st + pos] >> 3] == w:
                sp[ns] = pos
                ns += 1
    sp[:ns].sort()

    # z: first base entry, not owned above, ranked past k
    lo, hi = 0, hi_r
    while lo < hi:
        mid = (lo + hi) >> 1
        if mid + 1 - _upper(sp, ns, mid) + _upper(ins, ne, mid) > k:
            hi = mid
        else:
            lo = mid + 1
    z = lo
    while z < hi_r and stamp[rw[codes[st + z] >> 3]] == sv:
        z += 1
    if z == hi_r:
        if hi_r == ln and not full:
            return -2
        if not (full and fd >= ln):
            return -1
    else:
        # whatever follows z's run of equal entries must be clearly smaller
        zl, zr = codes[st + z] & 7, rp[codes[st + z] >> 3]
        lo, hi = z + 1, hi_r
        while lo < hi:
            mid = (lo + hi) >> 1
            code = codes[st + mid]
            if (code & 7) == zl and rp[code >> 3] == zr:
                lo = mid + 1
            else:
                hi = mid
        if lo - 1 >= fd:
            return -2 if fd == ln - 1 and not full else -1

    n = 0
    a = cache.rare_start[key]
    r_end = a + cache.rare_count[key]
    t = 0
    while True:
        rb = -1
        pos = 0
        while a < r_end:
            pos = cache.rare_pos[a]
            if pos >= z:
                a = r_end
                break
            if stamp[rw[codes[st + pos] >> 3]] == sv:
                a += 1
                continue
            rb = pos + 1 - _upper(sp, ns, pos) + _upper(ins, ne, pos)
            break
        rh = -1
        while t < ne:
            if rare[ew[t]]:
                rh = ins[t] - _upper(sp, ns, ins[t] - 1) + t + 1
                if rh > k:
                    rh = -1
                    t = ne
                break
            t += 1
        if rb < 0 and rh < 0:
            return n
        if rh < 0 or (rb >= 0 and rb < rh):
            code = codes[st + pos]
            out_id[n] = rw[code >> 3]
            out_rank[n] = rb
            out_val[n] = scale[code & 7] * rp[code >> 3]
            a += 1
        else:
            out_id[n] = ew[t]
            out_rank[n] = rh
            out_val[n] = ev[t]
            t += 1
        n += 1


@njit(cache=True)
def _walk(lm, key, k, rare, stamp, sv, lev, lists, scale, cache, out_id, out_rank, out_val):
    """Top-k rare words by reading the base ranking entry by entry, checking its scaled order.

    Returns the count, -2 when more base entries are needed, -3 on an order
    the base cannot settle.
    """
    kind, first, ptr, end, fac, hid, hval, pid, pval, nl = lists
    rw, rp = lm.ranked_word, lm.ranked_prob
    codes = cache.codes
    st = cache.start[key]
    qend = st + cache.length[key]
    full = cache.full[key]
    n = 0
    rank = 0
    for L in range(nl):
        ptr[L] = first[L]
        pid[L] = -1
        if not _head(lm, L, kind, ptr, end, fac, hid, hval, pid, pval, lev):
            return -3
    hb = _best_head(nl, hid, hval)
    q = st
    zq = -1
    pv = 0.0
    pw = -1
    while rank < k:
        hv = -1.0
        hw = 0
        if hb >= 0:
            hv = hval[hb]
            hw = hid[hb]
        while q < qend and rank < k:
            code = codes[q]
            wid = rw[code >> 3]
            v = scale[code & 7] * rp[code >> 3]
            if zq >= 0 and (v > pv or (v == pv and wid < pw)):
                return -3
            zq = q
            pv = v
            pw = wid
            if stamp[wid] == sv:
                q += 1
                continue
            if v > hv or (v == hv and wid < hw):
                rank += 1
                if rare[wid]:
                    out_id[n] = wid
                    out_rank[n] = rank
                    out_val[n] = v
                    n += 1
                q += 1
            else:
                break
        if rank >= k:
            break
        if q >= qend and not full:
            return -2
        if hb < 0:
            break
        rank += 1
        wid = hid[hb]
        if rare[wid]:
            out_id[n] = wid
            out_rank[n] = rank
            out_val[n] = hval[hb]
            n += 1
        ptr[hb] += 1
        if not _head(lm, hb, kind, ptr, end, fac, hid, hval, pid, pval, lev):
            return -3
        hb = _best_head(nl, hid, hval)
    if zq < 0:
        return n if full else -2
    # nothing unread may rank above the last entry read
    floor = pv * (1.0 - _NEAR)
    r = zq + 1
    while r < qend:
        code = codes[r]
        wid = rw[code >> 3]
        v = scale[code & 7] * rp[code >> 3]
        if v > pv or (v == pv and wid < pw):
            return -3
        if v < floor:
            return n
        pv = v
        pw = wid
        r += 1
    return n if full else -2


@njit(cache=True)
def _topk_rare(lm, ctx, k, rare, stamp, lev, sv, out_id, out_rank, out_val, cache):
    """Rare words among the top ``k`` as (id, 1-based rank, prob); returns the count.

    Same result as :func:`_topk_merge`, which it falls back to, but reads the
    shorter contexts' lists through a cached base ranking.
    """
    if lm.order < 2 or k <= 0:
        return _topk_merge(lm, ctx, k, rare, stamp, lev, sv, out_id, out_rank, out_val)
    size = np.zeros(lm.order + 1, np.int64)
    lo = np.zeros(lm.order + 1, np.int64)
    scale = np.empty(lm.order + 1)  # true factor per list level, 1 for the unigram list
    b = 1.0
    for j in range(lm.order, 1, -1):
        c = ctx[j]
        if c < 0:
            continue
        a, e = _children(lm, j - 1, c)
        lo[j] = a
        size[j] = e - a
        scale[j] = b
        b *= _backoff(lm, j, c)
    scale[1] = b
    # shortest context whose longer lists are few enough to search one by one
    jb = 2
    above = 0
    for j in range(lm.order, 1, -1):
        above += size[j]
    for j in range(2, lm.order + 1):
        above -= size[j]
        if ctx[j] >= 0 and above <= _DIRECT_MAX:
            jb = j
            break
    kind = np.empty(6, np.int64)
    first = np.empty(6, np.int64)
    end = np.empty(6, np.int64)
    fac = np.empty(6)
    nl = 0
    n_high = 0
    for j in range(lm.order, jb, -1):
        if size[j] > 0:
            kind[nl] = j
            first[nl] = lo[j]
            end[nl] = lo[j] + size[j]
            fac[nl] = scale[j]
            nl += 1
            n_high += size[j]
            for g in range(lo[j], lo[j] + size[j]):
                wid = lm.ranked_word[g]
                if stamp[wid] != sv:
                    stamp[wid] = sv
                    lev[wid] = j
    lists = (kind, first, np.empty(6, np.int64), end, fac, np.empty(6, np.int64), np.empty(6), np.empty(6, np.int64),
             np.empty(6), nl)
    key = cache.node_off[jb] + ctx[jb]
    if cache.start[key] < 0 and not _build_base(lm, ctx, jb, k + n_high + 32, rare, cache):
        return _topk_merge(lm, ctx, k, rare, stamp, lev, sv, out_id, out_rank, out_val)
    while True:
        n = -1
        if n_high <= _DIRECT_MAX:
            n = _rank_direct(lm, ctx, jb, key, k, rare, stamp, sv, lev, lists, n_high, scale, cache,
                             out_id, out_rank, out_val)
        if n == -1:
            n = _walk(lm, key, k, rare, stamp, sv, lev, lists, scale, cache, out_id, out_rank, out_val)
        if n == -3:
            return _topk_exact(lm, ctx, k, rare, out_id, out_rank, out_val)
        if n >= 0:
            return n
        if not _build_base(lm, ctx, jb, 2 * cache.length[key] + n_high + 32, rare, cache):
            return _topk_merge(lm, ctx, k, rare, stamp, lev, sv, out_id, out_rank, out_val)


# -- pair store and duplicate table --------------------------------------------

@njit(cache=True)
def _hash(src, s0, s1, tgt, t0, t1):
    h = np.uint64(14695981039346656037)
    prime = np.uint64(1099511628211)
    for q in range(s0, s1):
        h = (h ^ np.uint64(src[q])) * prime
    h = (h ^ np.uint64(0xFFFFFFFFFFFF)) * prime
    for q in range(t0, t1):
        h = (h ^ np.uint64(tgt[q])) * prime
    return h


@njit(cache=True)
def _same(a, a0, a1, b, b0, b1):
    if a1 - a0 != b1 - b0:
        return False
    for q in range(a1 - a0):
        if a[a0 + q] != b[b0 + q]:
            return False
    return True


@njit(cache=True)
def _lookup(tkeys, tvals, h, ssrc, ssoff, stgt, stoff, src, s0, s1, tgt, t0, t1):
    """Slot holding an equal pair, or ``-(slot + 1)`` of the free slot to insert at."""
    mask = len(tkeys) - 1
    slot = np.int64(h & np.uint64(mask))
    while tvals[slot] >= 0:
        e = tvals[slot]
        if tkeys[slot] == h and _same(ssrc, ssoff[e], ssoff[e + 1], src, s0, s1) \
                and _same(stgt, stoff[e], stoff[e + 1], tgt, t0, t1):
            return slot
        slot = (slot + 1) & mask
    return -(slot + 1)


@njit(cache=True)
def _build_table(ssrc, ssoff, stgt, stoff, n_entries, tkeys, tvals):
    for e in range(n_entries):
        h = _hash(ssrc, ssoff[e], ssoff[e + 1], stgt, stoff[e], stoff[e + 1])
        slot = _lookup(tkeys, tvals, h, ssrc, ssoff, stgt, stoff, ssrc, ssoff[e], ssoff[e + 1],
                       stgt, stoff[e], stoff[e + 1])
        if slot < 0:
            slot = -slot - 1
            tkeys[slot] = h
            tvals[slot] = e


# -- one pass ----------------------------------------------------------------

@njit(cache=True)
def _choose(pri, elig, a, e, r1, min_dist, out):
    """Positions for one sentence into ``out``; returns how many."""
    if e == a:
        return 0
    if r1:
        best = a
        for q in range(a + 1, e):
            if pri[q] > pri[best]:
                best = q
        out[0] = elig[best]
        return 1
    order = np.argsort(-pri[a:e], kind="mergesort")
    n = 0
    for o in order:
        p = elig[a + o]
        ok = True
        for m in range(n):
            if abs(p - out[m]) < min_dist:
                ok = False
                break
        if ok:
            out[n] = p
            n += 1
    out[:n].sort()
    return n


@njit(cache=True)
def _translate(tlm, tctx, w, j, cur_t, trans_off, trans_t, trans_pts, trans_pst, lm_floor, res):
    best_t = -1
    best_score = 0.0
    best_lm = 0.0
    for e in range(trans_off[w], trans_off[w + 1]):
        t = trans_t[e]
        lm_p = _prob(tlm, t, tctx)
        score = trans_pst[e] * trans_pts[e] * lm_p
        if best_t < 0 or score > best_score:
            best_t, best_score, best_lm = t, score, lm_p
    if best_t < 0:
        return -1 - NO_TRANSLATION
    if best_lm < lm_floor:
        return -1 - LM_FLOOR
    if not best_score > 0:
        return -1 - ZERO_SCORE
    if best_t == cur_t:
        return -1 - UNCHANGED_TARGET
    res[0] = best_score
    return best_t


@njit(cache=True)
def _sweep(fwd, bwd, tlm, src_full, src_lm, src_off, tgt_full, tgt_lm, tgt_off, aligned, elig, elig_off, pri,
           rare, trans_off, trans_t, trans_pts, trans_pst, k, cap_n, lm_floor, r1, min_dist, used,
           ssrc, ssoff, stgt, stoff, tkeys, tvals, pos_flat, pos_off, rec_int, rec_score, acc_pair, acc_entry,
           counters, discards, fcache, bcache):
    n_pairs = len(src_off) - 1
    radix = fwd.radix
    stamp = np.zeros(radix, np.int64)
    lev = np.zeros(radix, np.int64)
    mark = np.zeros(radix, np.int64)
    slot = np.zeros(radix, np.int64)
    pend = np.zeros(radix, np.int64)
    sv = 0
    width = max(k, 1)
    f_id = np.empty(width, np.int64)
    f_rank = np.empty(width, np.int64)
    f_val = np.empty(width)
    b_id = np.empty(width, np.int64)
    b_rank = np.empty(width, np.int64)
    b_val = np.empty(width)
    c_id = np.empty(width, np.int64)
    c_fr = np.empty(width, np.int64)
    c_br = np.empty(width, np.int64)
    c_lp = np.empty(width)
    c_done = np.zeros(width, np.bool_)
    fhist = np.empty(max(fwd.order - 1, 1), np.int64)
    bhist = np.empty(max(bwd.order - 1, 1), np.int64)
    thist = np.empty(max(tlm.order - 1, 1), np.int64)
    fctx = np.full(fwd.order + 1, -1, np.int64)
    bctx = np.full(bwd.order + 1, -1, np.int64)
    tctx = np.full(tlm.order + 1, -1, np.int64)
    positions = np.empty(max(1, np.max(src_off[1:] - src_off[:-1])), np.int64)
    pr_pos = np.empty(len(positions), np.int64)
    pr_w = np.empty(len(positions), np.int64)
    pr_j = np.empty(len(positions), np.int64)
    pr_t = np.empty(len(positions), np.int64)
    pr_fr = np.empty(len(positions), np.int64)
    pr_br = np.empty(len(positions), np.int64)
    pr_score = np.empty(len(positions))
    res = np.zeros(1)
    n_entries = counters[0]
    n_rec = 0
    n_acc = 0
    pos_off[0] = 0

    for p in range(n_pairs):
        s0, s1 = src_off[p], src_off[p + 1]
        t0, t1 = tgt_off[p], tgt_off[p + 1]
        n_pos = _choose(pri, elig, elig_off[p], elig_off[p + 1], r1, min_dist, positions)
        pos_flat[pos_off[p]:pos_off[p] + n_pos] = positions[:n_pos]
        pos_off[p + 1] = pos_off[p] + n_pos
        n_new = 0
        for pi in range(n_pos):
            i = positions[pi]
            _fill_history(fwd, src_lm, s0, s1 - s0, i, fhist)
            _contexts(fwd, fhist, fctx)
            sv += 1
            nf = _topk_rare(fwd, fctx, k, rare, stamp, lev, sv, f_id, f_rank, f_val, fcache)
            nc = 0
            if nf > 0:
                _fill_history(bwd, src_lm, s0, s1 - s0, i, bhist)
                _contexts(bwd, bhist, bctx)
                sv += 1
                nb = _topk_rare(bwd, bctx, k, rare, stamp, lev, sv, b_id, b_rank, b_val, bcache)
                sv += 1
                for a in range(nf):
                    mark[f_id[a]] = sv
                    slot[f_id[a]] = a
                for q in range(nb):
                    wid = b_id[q]
                    if mark[wid] == sv and wid != src_lm[s0 + i]:
                        a = slot[wid]
                        c_id[nc] = wid
                        c_fr[nc] = f_rank[a]
                        c_br[nc] = b_rank[q]
                        c_lp[nc] = math.log(f_val[a]) + math.log(b_val[q])
                        c_done[nc] = False
                        nc += 1
            if nc == 0:
                discards[NO_CANDIDATE] += 1
                continue
            j = aligned[s0 + i]
            if j < 0:
                discards[UNALIGNED] += 1
                continue
            clash = False
            for m in range(n_new):
                if pr_j[m] == j:
                    clash = True
            if clash:
                discards[TARGET_CONFLICT] += 1
                continue
            _fill_history(tlm, tgt_lm, t0, t1 - t0, j, thist)
            _contexts(tlm, thist, tctx)
            outcome = -1 - BUDGET  # a failure is -1 - reason, a success the target word id
            chosen = -1
            for _ in range(nc):
                # next candidate: highest combined log-probability, then lowest id
                c = -1
                for q in range(nc):
                    if c_done[q]:
                        continue
                    if c < 0 or c_lp[q] > c_lp[c] or (c_lp[q] == c_lp[c] and c_id[q] < c_id[c]):
                        c = q
                c_done[c] = True
                w = c_id[c]
                if used[w] + pend[w] >= cap_n:
                    continue
                outcome = _translate(tlm, tctx, w, j, tgt_full[t0 + j], trans_off, trans_t, trans_pts,
                                     trans_pst, lm_floor, res)
                if outcome >= 0:
                    chosen = c
                    break
            if chosen < 0:
                discards[-1 - outcome] += 1
                continue
            w = c_id[chosen]
            pend[w] += 1
            pr_pos[n_new] = i
            pr_w[n_new] = w
            pr_j[n_new] = j
            pr_t[n_new] = outcome
            pr_fr[n_new] = c_fr[chosen]
            pr_br[n_new] = c_br[chosen]
            pr_score[n_new] = res[0]
            n_new += 1
        if n_new == 0:
            continue
        for m in range(n_new):
            pend[pr_w[m]] = 0

        # the candidate pair goes straight into the store; it is kept only if new
        e = n_entries
        ns0, nt0 = ssoff[e], stoff[e]
        ssrc[ns0:ns0 + s1 - s0] = src_full[s0:s1]
        stgt[nt0:nt0 + t1 - t0] = tgt_full[t0:t1]
        for m in range(n_new):
            ssrc[ns0 + pr_pos[m]] = pr_w[m]
            stgt[nt0 + pr_j[m]] = pr_t[m]
        ssoff[e + 1] = ns0 + s1 - s0
        stoff[e + 1] = nt0 + t1 - t0
        h = _hash(ssrc, ns0, ssoff[e + 1], stgt, nt0, stoff[e + 1])
        found = _lookup(tkeys, tvals, h, ssrc, ssoff, stgt, stoff, ssrc, ns0, ssoff[e + 1], stgt, nt0, stoff[e + 1])
        if found >= 0:
            discards[DUPLICATE] += 1
            continue
        tkeys[-found - 1] = h
        tvals[-found - 1] = e
        n_entries += 1
        for m in range(n_new):
            used[pr_w[m]] += 1
            rec_int[n_rec, 0] = p
            rec_int[n_rec, 1] = pr_pos[m]
            rec_int[n_rec, 2] = pr_w[m]
            rec_int[n_rec, 3] = pr_j[m]
            rec_int[n_rec, 4] = pr_t[m]
            rec_int[n_rec, 5] = pr_fr[m]
            rec_int[n_rec, 6] = pr_br[m]
            rec_int[n_rec, 7] = n_acc
            rec_score[n_rec] = pr_score[m]
            n_rec += 1
        acc_pair[n_acc] = p
        acc_entry[n_acc] = e
        n_acc += 1
    counters[0] = n_entries
    counters[1] = n_rec
    counters[2] = n_acc


# -- Python side ---------------------------------------------------------------

def supports(models) -> bool:
    """Whether the compiled sweep can run on these models."""
    lms = (models.forward, models.backward, models.target_lm)
    if not all(type(lm) is NGramLM for lm in lms):
        return False
    v = models.vocab
    return all(lm.vocab is v or lm.vocab.words == v.words for lm in lms[:2])


class _Tokens:
    """Full-id view of one side of the corpus."""

    def __init__(self, sentences, vocab, lm_radix: int):
        index = dict(vocab._index)
        n_vocab = len(vocab)
        self.words = [None, *vocab.words, BOS]  # ids 0 and radix - 1 never occur as corpus tokens
        lengths = np.fromiter((len(s) for s in sentences), dtype=np.int64, count=len(sentences))
        self.off = np.zeros(len(sentences) + 1, dtype=np.int64)
        np.cumsum(lengths, out=self.off[1:])

        tokens = list(chain.from_iterable(sentences))
        full = list(map(index.get, tokens))
        if None in full:
            for q, k in enumerate(full):
                if k is None:
                    w = tokens[q]
                    k = index.get(w)
                    if k is None:
                        k = index[w] = len(self.words)
                        self.words.append(w)
                    full[q] = k
        self.full = np.array(full, dtype=np.int64)
        lm_ids = np.where(self.full <= n_vocab, self.full, 0)
        if BOS in index:  # a literal <s> reads as the boundary marker, as in NGramLM
            lm_ids[self.full == index[BOS]] = lm_radix - 1
        self.lm = lm_ids


def _aligned_positions(corpus: ParallelCorpus, links, lexicon, src_off) -> np.ndarray:
    aligned = np.full(int(src_off[-1]), -1, dtype=np.int64)
    off = src_off.tolist()
    for pair, ls in zip(corpus, links):
        if not ls:
            continue
        base = off[pair.id]
        if len({i for i, _ in ls}) == len(ls):  # one link per source word
            for i, j in ls:
                aligned[base + i] = j
            continue
        groups: dict[int, list[int]] = {}
        for i, j in ls:
            groups.setdefault(i, []).append(j)
        for i, js in groups.items():
            if len(js) == 1:
                aligned[base + i] = js[0]
            else:
                s = pair.source[i]
                aligned[base + i] = max(js, key=lambda j: (lexicon.p_direct(s, pair.target[j]), -j))
    return aligned


def _translation_table(rare_ids, words, lexicon, tgt_vocab):
    n = len(words)
    counts = np.zeros(n + 1, dtype=np.int64)
    rows = {}
    for w in rare_ids:
        row = [(tgt_vocab.id(t), p_ts, p_st) for t, p_ts, p_st in lexicon.trans(words[w]) if t in tgt_vocab]
        rows[w] = row
        counts[w + 1] = len(row)
    off = np.cumsum(counts)
    size = int(off[-1])
    tt = np.empty(size, dtype=np.int64)
    pts = np.empty(size)
    pst = np.empty(size)
    for w, row in rows.items():
        for q, (t, a, b) in enumerate(row, start=int(off[w])):
            tt[q], pts[q], pst[q] = t, a, b
    return off, tt, pts, pst


def _grow(arr, size):
    if len(arr) >= size:
        return arr
    out = np.empty(max(size, 2 * len(arr)), dtype=arr.dtype)
    out[:len(arr)] = arr
    return out


def run(corpus: ParallelCorpus, models, config, out, trace=None) -> None:
    """Fill ``out`` (an empty :class:`AugmentedCorpus`) like the Python engine."""
    from .augment import AugmentationRecord, pass_rng

    fwd, bwd, tlm = pack_lm(models.forward), pack_lm(models.backward), pack_lm(models.target_lm)
    src = _Tokens(corpus.sources(), models.vocab, fwd.radix)
    tgt = _Tokens(corpus.targets(), models.target_lm.vocab, tlm.radix)
    n_vocab = len(models.vocab)
    rare = np.zeros(fwd.radix, dtype=np.bool_)
    rare_ids = [models.vocab.id(w) for w in models.rare.words if w in models.vocab]
    rare[rare_ids] = True

    in_vocab = (src.full >= 1) & (src.full <= n_vocab)
    eligible = in_vocab & ~rare[np.where(in_vocab, src.full, 0)]
    pair_of = np.repeat(np.arange(len(corpus)), np.diff(src.off))
    elig = (np.nonzero(eligible)[0] - src.off[pair_of[eligible]]).astype(np.int64)
    elig_off = np.zeros(len(corpus) + 1, dtype=np.int64)
    np.cumsum(np.bincount(pair_of[eligible], minlength=len(corpus)), out=elig_off[1:])
    if not rare_ids or len(elig) == 0:
        logger.info("nothing to augment: %d rare words, %d sentences with eligible positions",
                    len(rare_ids), int(np.count_nonzero(np.diff(elig_off))))
        return

    aligned = _aligned_positions(corpus, models.links, models.lexicon, src.off)
    trans_off, trans_t, trans_pts, trans_pst = _translation_table(rare_ids, src.words, models.lexicon,
                                                                  models.target_lm.vocab)

    n_pairs = len(corpus)
    fcache, bcache = new_query_cache(fwd, config.top_k), new_query_cache(bwd, config.top_k)
    ssrc, stgt = src.full.copy(), tgt.full.copy()
    ssoff, stoff = src.off.copy(), tgt.off.copy()
    counters = np.array([n_pairs, 0, 0], dtype=np.int64)
    tkeys = np.zeros(0, dtype=np.uint64)
    tvals = np.zeros(0, dtype=np.int64)
    used = np.zeros(fwd.radix, dtype=np.int64)
    discards = np.zeros(len(REASONS), dtype=np.int64)
    n_src, n_tgt = int(src.off[-1]), int(tgt.off[-1])
    pos_flat = np.empty(len(elig), dtype=np.int64)
    pos_off = np.empty(n_pairs + 1, dtype=np.int64)
    rec_int = np.empty((len(elig), 8), dtype=np.int64)
    rec_score = np.empty(len(elig))
    acc_pair = np.empty(n_pairs, dtype=np.int64)
    acc_entry = np.empty(n_pairs, dtype=np.int64)

    for pass_number in range(1, config.max_passes + 1):
        n_entries = int(counters[0])
        # room for every pair of this pass being accepted
        ssrc = _grow(ssrc, int(ssoff[n_entries]) + n_src)
        stgt = _grow(stgt, int(stoff[n_entries]) + n_tgt)
        ssoff = _grow(ssoff, n_entries + n_pairs + 1)
        stoff = _grow(stoff, n_entries + n_pairs + 1)
        if len(tkeys) < 2 * (n_entries + n_pairs):
            cap = 1 << (4 * (n_entries + n_pairs) - 1).bit_length()
            tkeys = np.zeros(cap, dtype=np.uint64)
            tvals = np.full(cap, -1, dtype=np.int64)
            _build_table(ssrc, ssoff, stgt, stoff, n_entries, tkeys, tvals)

        pri = pass_rng(config.seed, pass_number).random(len(elig))
        _sweep(fwd, bwd, tlm, src.full, src.lm, src.off, tgt.full, tgt.lm, tgt.off, aligned, elig, elig_off, pri,
               rare, trans_off, trans_t, trans_pts, trans_pst, config.top_k, config.max_per_word,
               config.lm_floor, config.mode == "r1", config.min_distance, used, ssrc, ssoff, stgt, stoff,
               tkeys, tvals, pos_flat, pos_off, rec_int, rec_score, acc_pair, acc_entry, counters, discards,
               fcache, bcache)

        if trace is not None:
            for p in np.nonzero(np.diff(pos_off))[0]:
                trace.append((pass_number, int(p), tuple(int(x) for x in pos_flat[pos_off[p]:pos_off[p + 1]])))
        n_acc, n_rec = int(counters[2]), int(counters[1])
        first_id = len(corpus) + len(out.augmented)
        for a, e in enumerate(acc_entry[:n_acc].tolist()):
            s0, s1, t0, t1 = int(ssoff[e]), int(ssoff[e + 1]), int(stoff[e]), int(stoff[e + 1])
            out.augmented.append(SentencePair(tuple(map(src.words.__getitem__, ssrc[s0:s1].tolist())),
                                              tuple(map(tgt.words.__getitem__, stgt[t0:t1].tolist())),
                                              first_id + a))
        for row, score in zip(rec_int[:n_rec].tolist(), rec_score[:n_rec].tolist()):
            p, i, w, j, t, fr, br, a = row
            pair = corpus[p]
            out.records.append(AugmentationRecord(
                pair_id=p, source_position=i, original_source=pair.source[i], substitute=src.words[w],
                target_position=j, original_target=pair.target[j], replacement=tgt.words[t],
                forward_rank=fr, backward_rank=br, translation_score=score,
                pass_number=pass_number, augmented_id=first_id + a,
            ))
        out.accepted_per_pass.append(n_acc)
        logger.info("pass %d: %d new pairs (%d total)", pass_number, n_acc, len(out.augmented))
        if n_acc == 0:
            break
    out.discards.update({REASONS[r]: int(c) for r, c in enumerate(discards) if c})
