#!/usr/bin/env python3
"""Brute-force reference for the metric golden fixtures.

Counts n-grams with collections.Counter and finds the longest common
subsequence by enumerating every subsequence of the hypothesis, so it shares
no code path with the C++ implementation. Regenerate with:

    python3 tests/oracles/metric_oracle.py > tests/data/metric_fixtures.tsv
"""

import itertools
import math
from collections import Counter


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def clipped(ref, hyp, n):
    r, h = ngrams(ref, n), ngrams(hyp, n)
    return sum(min(c, r[g]) for g, c in h.items())


def sentence_bleu(ref, hyp, max_order=4):
    if not hyp:
        return 0.0
    logs = []
    for n in range(1, max_order + 1):
        m = clipped(ref, hyp, n)
        t = max(len(hyp) - n + 1, 0)
        if n > 1:
            m, t = m + 1, t + 1
        if m == 0:
            return 0.0
        logs.append(math.log(m / t))
    bp = min(1.0, math.exp(1.0 - len(ref) / len(hyp)))
    return bp * math.exp(sum(logs) / max_order)


def rouge_n(ref, hyp, n):
    if not hyp:
        return 0.0
    rt, ht = max(len(ref) - n + 1, 0), max(len(hyp) - n + 1, 0)
    if rt == 0 or ht == 0:
        return 1.0 if ref == hyp else 0.0
    o = clipped(ref, hyp, n)
    if o == 0:
        return 0.0
    p, r = o / ht, o / rt
    return 2 * p * r / (p + r)


def is_subsequence(sub, seq):
    it = iter(seq)
    return all(tok in it for tok in sub)


def lcs_brute(ref, hyp):
    for k in range(len(hyp), 0, -1):
        for idx in itertools.combinations(range(len(hyp)), k):
            if is_subsequence([hyp[i] for i in idx], ref):
                return k
    return 0


def rouge_l(ref, hyp):
    if not hyp:
        return 0.0
    l = lcs_brute(ref, hyp)
    if l == 0:
        return 0.0
    p, r = l / len(hyp), l / len(ref)
    return 2 * p * r / (p + r)


CASES = [
    ("a b c d e", "a b c d e"),
    ("a b c d e", "a b c x e"),
    ("a b c d", "a c d"),
    ("a b c", "c b a"),
    ("the cat sat on the mat", "the cat is on the mat"),
    ("the cat sat on the mat", "the the the the"),
    ("a b c d e f g h", "a b c d"),
    ("a b c d", "a b c d e f g h"),
    ("x y z", "p q r"),
    ("a", "a"),
    ("a b", "b a"),
    ("a a b b", "a b a b"),
    ("one two three four five six", "one two four three five six"),
    ("w1 w2 w3 w4 w5 w6 w7 w8 w9 w10", "w1 w2 w3 w4 w5 w6 w7 w8 w9"),
    ("w3 w1 w4 w1 w5 w9 w2 w6", "w3 w1 w4 w1 w5 w9 w2 w7"),
    ("a b c d e", "e d c b a"),
    ("a b a b a b", "a b a"),
    ("p q r s t u v", "p x r y t z v"),
]

METRICS = {
    "bleu": sentence_bleu,
    "rouge1": lambda r, h: rouge_n(r, h, 1),
    "rouge2": lambda r, h: rouge_n(r, h, 2),
    "rougeL": rouge_l,
}


def main():
    print("ref\thyp\tmetric\texpected_score")
    for ref, hyp in CASES:
        r, h = ref.split(), hyp.split()
        for name, fn in METRICS.items():
            print(f"{ref}\t{hyp}\t{name}\t{fn(r, h):.6f}")


if __name__ == "__main__":
    main()
