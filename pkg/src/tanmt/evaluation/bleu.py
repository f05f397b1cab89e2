"""Corpus-level BLEU on token ids."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from ..errors import ContractError


@dataclass(frozen=True)
class BleuReport:
    score: float
    precisions: tuple
    raw_precisions: tuple
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    unsmoothed_score: float

    @property
    def percent(self) -> float:
        return round(100.0 * self.score, 2)

    def __str__(self):
        ps = "/".join(f"{100 * p:.1f}" for p in self.raw_precisions)
        return (f"BLEU = {100 * self.score:.2f} {ps} (BP = {self.brevity_penalty:.3f}, "
                f"hyp_len = {self.hyp_len}, ref_len = {self.ref_len})")


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _tokens(seq):
    return tuple(seq.tokens) if hasattr(seq, "tokens") else tuple(seq)


def corpus_bleu(hyps, refs, max_n: int = 4) -> BleuReport:
    """Modified n-gram precision with uniform weights and a brevity penalty.

    Orders with no clipped matches use the precision floor
    ``1 / (2 * hypothesis n-gram count)``; ``unsmoothed_score`` reports the
    value without that floor (zero whenever an order has no match).
    """
    if len(hyps) != len(refs):
        raise ContractError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if not hyps:
        raise ContractError("BLEU needs at least one sentence")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        h, r = _tokens(h), _tokens(r)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    raw = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    smoothed = tuple(p if p > 0 else 1.0 / (2 * max(t, 1)) for p, t in zip(raw, totals))
    if hyp_len == 0:
        bp = 0.0
    else:
        bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    score = bp * math.exp(sum(math.log(p) for p in smoothed) / max_n)
    unsmoothed = 0.0 if min(raw) == 0 else bp * math.exp(sum(math.log(p) for p in raw) / max_n)
    return BleuReport(score, smoothed, raw, bp, hyp_len, ref_len, unsmoothed)
