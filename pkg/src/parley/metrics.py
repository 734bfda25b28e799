"""Corpus-level generation metrics: BLEU-1/2, Distinct-1/2, ROUGE-L.

BLEU-n here is the single-order modified n-gram precision (clipped counts
pooled over the corpus) times the standard brevity penalty against
closest-length references. Distinct-n pools n-grams over the whole
hypothesis corpus. ROUGE-L is the mean best-reference LCS F-measure.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .errors import DataError


@dataclass
class EvalPair:
    hypothesis: list[str]
    references: list[list[str]]

    def __post_init__(self):
        if not self.references:
            raise DataError("an evaluation pair needs at least one reference")


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_order(n: int):
    if n not in (1, 2):
        raise DataError(f"only 1- and 2-gram metrics are supported, got n={n}")


def bleu_n(pairs: list[EvalPair], n: int) -> float:
    _check_order(n)
    if not pairs:
        raise DataError("cannot score an empty corpus")
    clipped = 0
    total = 0
    hyp_len = 0
    ref_len = 0
    for pair in pairs:
        counts = _ngrams(pair.hypothesis, n)
        max_ref: Counter = Counter()
        for ref in pair.references:
            for gram, c in _ngrams(ref, n).items():
                if c > max_ref[gram]:
                    max_ref[gram] = c
        clipped += sum(min(c, max_ref[gram]) for gram, c in counts.items())
        total += sum(counts.values())
        hyp_len += len(pair.hypothesis)
        closest = min(pair.references, key=lambda r: (abs(len(r) - len(pair.hypothesis)), len(r)))
        ref_len += len(closest)
    if total == 0:
        return 0.0
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * clipped / total


def distinct_n(hypotheses: list[list[str]], n: int) -> float:
    _check_order(n)
    seen: set = set()
    total = 0
    for hyp in hypotheses:
        grams = [tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1)]
        seen.update(grams)
        total += len(grams)
    if total == 0:
        raise DataError(f"no {n}-grams in the hypothesis corpus")
    return len(seen) / total


def _lcs(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(pairs: list[EvalPair]) -> float:
    if not pairs:
        raise DataError("cannot score an empty corpus")
    score = 0.0
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            if not pair.hypothesis and not ref:
                f = 1.0  # both empty match by convention
            elif not pair.hypothesis or not ref:
                f = 0.0
            else:
                lcs = _lcs(pair.hypothesis, ref)
                p = lcs / len(pair.hypothesis)
                r = lcs / len(ref)
                f = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
            best = max(best, f)
        score += best
    return score / len(pairs)


def evaluation_report(pairs: list[EvalPair]) -> dict:
    """All metrics for one corpus, shaped for the JSON report."""
    hyps = [p.hypothesis for p in pairs]
    return {
        "bleu1": bleu_n(pairs, 1),
        "bleu2": bleu_n(pairs, 2),
        "distinct1": distinct_n(hyps, 1),
        "distinct2": distinct_n(hyps, 2),
        "rougeL": rouge_l(pairs),
        "num_pairs": len(pairs),
    }
