"""Corpus evaluation metrics over normalized token lists.

Candidates and references are flattened paragraphs (sentences concatenated),
tokenized with the same rule the vocabulary uses, so scores never depend on
where sentence boundaries fell. Three scorers: n-gram precision with brevity
penalty, tf-idf n-gram cosine consensus, and an exact-match unigram
F-measure with a fragmentation penalty (no stemming or synonym resources;
scores are conservative relative to the resource-backed original).
"""

from __future__ import annotations

import math
import warnings
from collections import Counter

Pair = tuple[list[str], list[list[str]]]       # (candidate, references)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(c_len: int, refs: list[list[str]]) -> int:
    # ties go to the shorter reference
    return min((len(r) for r in refs), key=lambda rl: (abs(rl - c_len), rl))


def bleu(pairs: list[Pair], n: int) -> float:
    """Corpus-level n-gram precision score, orders 1..n.

    Clipped matches and totals are pooled over all pairs before the
    precisions are taken; the geometric mean is multiplied by the brevity
    penalty exp(1 - r/c) when the candidate corpus is shorter than the
    closest-reference length r."""
    if not (1 <= n <= 4):
        raise ValueError(f"order must be 1..4, got {n}")
    if not pairs:
        raise ValueError("no pairs to score")
    match = [0] * n
    total = [0] * n
    c_len = 0
    r_len = 0
    for cand, refs in pairs:
        if not refs:
            raise ValueError("each pair needs at least one reference")
        if len(cand) == 0:
            warnings.warn("empty candidate, scoring 0 for this pair")
        c_len += len(cand)
        r_len += _closest_ref_len(len(cand), refs)
        for k in range(1, n + 1):
            cgrams = _ngrams(cand, k)
            if not cgrams:
                continue
            best: Counter = Counter()
            for ref in refs:
                rgrams = _ngrams(ref, k)
                for g, cnt in rgrams.items():
                    if cnt > best[g]:
                        best[g] = cnt
            match[k - 1] += sum(min(cnt, best[g]) for g, cnt in cgrams.items())
            total[k - 1] += sum(cgrams.values())
    if c_len == 0 or any(t == 0 for t in total) or any(m == 0 for m in match):
        return 0.0
    log_gm = sum(math.log(match[k] / total[k]) for k in range(n)) / n
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_gm)


def cider_per_image(pairs: list[Pair]) -> list[float]:
    """Per-image tf-idf n-gram cosine scores (orders 1..4, averaged, x10).

    Document frequency counts the images whose reference set contains the
    n-gram; idf = ln(N) - ln(max(df, 1)). Each candidate vector is compared
    against the mean of its reference vectors."""
    n_img = len(pairs)
    if n_img < 2:
        raise ValueError("consensus scoring needs at least 2 images "
                         "(document frequencies are degenerate otherwise)")
    orders = range(1, 5)
    df: dict[int, Counter] = {k: Counter() for k in orders}
    for _, refs in pairs:
        for k in orders:
            seen = set()
            for ref in refs:
                seen.update(_ngrams(ref, k).keys())
            for g in seen:
                df[k][g] += 1

    def tfidf(tokens: list[str], k: int) -> dict:
        return {g: cnt * (math.log(n_img) - math.log(max(df[k][g], 1)))
                for g, cnt in _ngrams(tokens, k).items()}

    def cosine(u: dict, v: dict) -> float:
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        dot = sum(x * v[g] for g, x in u.items() if g in v)
        return dot / (nu * nv)

    scores = []
    for cand, refs in pairs:
        if not refs:
            raise ValueError("each pair needs at least one reference")
        acc = 0.0
        for k in orders:
            cvec = tfidf(cand, k)
            mean_ref: dict = {}
            for ref in refs:
                for g, x in tfidf(ref, k).items():
                    mean_ref[g] = mean_ref.get(g, 0.0) + x / len(refs)
            acc += cosine(cvec, mean_ref)
        scores.append(10.0 * acc / 4.0)
    return scores


def cider(pairs: list[Pair]) -> float:
    scores = cider_per_image(pairs)
    return sum(scores) / len(scores)


def _align(cand: list[str], ref: list[str]) -> tuple[int, int]:
    """Greedy alignment of exact matches, longest common run first, so the
    chunk count is (heuristically) minimized. Returns (matches, chunks)."""
    used_c = [False] * len(cand)
    used_r = [False] * len(ref)
    matches = 0
    chunks = 0
    while True:
        best_len = 0
        best = None
        for i in range(len(cand)):
            for j in range(len(ref)):
                run = 0
                while (i + run < len(cand) and j + run < len(ref)
                       and not used_c[i + run] and not used_r[j + run]
                       and cand[i + run] == ref[j + run]):
                    run += 1
                if run > best_len:
                    best_len = run
                    best = (i, j)
        if best is None:
            break
        i, j = best
        for k in range(best_len):
            used_c[i + k] = True
            used_r[j + k] = True
        matches += best_len
        chunks += 1
    return matches, chunks


def meteor_exact(cand: list[str], refs: list[list[str]]) -> float:
    """Exact-match unigram F-measure with fragmentation penalty:
    F = 10PR/(R+9P), penalty = 0.5*(chunks/matches)^3, score = F*(1-penalty).
    The best score over the references is returned."""
    if not refs:
        raise ValueError("need at least one reference")
    best = 0.0
    for ref in refs:
        if len(cand) == 0 or len(ref) == 0:
            continue
        m, ch = _align(cand, ref)
        if m == 0:
            continue
        p = m / len(cand)
        r = m / len(ref)
        f = 10.0 * p * r / (r + 9.0 * p)
        penalty = 0.5 * (ch / m) ** 3
        best = max(best, f * (1.0 - penalty))
    return best


def evaluate_pairs(pairs: list[Pair]) -> dict:
    """The full report: four precision orders, consensus, and the exact-match
    F-measure averaged over images."""
    report = {f"bleu{k}": bleu(pairs, k) for k in range(1, 5)}
    report["cider"] = cider(pairs)
    report["meteor_exact"] = (
        sum(meteor_exact(c, r) for c, r in pairs) / len(pairs))
    report["n_images"] = len(pairs)
    return report
