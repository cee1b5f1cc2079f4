"""Corpus BLEU (multi-bleu conventions) and distinct-n diversity."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

MAX_ORDER = 4


def ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuReport:
    bleu: float
    precisions: tuple
    brevity_penalty: float
    candidate_length: int
    reference_length: int

    def lines(self) -> list[str]:
        out = [f"BLEU={self.bleu!r}"]
        out += [f"p{i}={p!r}" for i, p in enumerate(self.precisions, 1)]
        out += [f"BP={self.brevity_penalty!r}", f"hyp_len={self.candidate_length}",
                f"ref_len={self.reference_length}"]
        return out


@dataclass
class DiversityReport:
    distinct_1: float
    distinct_2: float
    total_tokens: int

    def lines(self) -> list[str]:
        return [f"distinct1={self.distinct_1!r}", f"distinct2={self.distinct_2!r}",
                f"tokens={self.total_tokens}"]


def closest_ref_length(cand_len: int, ref_lens: Sequence[int]) -> int:
    """Closest reference length; ties go to the shorter reference (multi-bleu.perl)."""
    return min(ref_lens, key=lambda r: (abs(r - cand_len), r))


def sentence_stats(candidate: Sequence, references: Sequence[Sequence]) -> np.ndarray:
    """Sufficient statistics ``[match_1..4, total_1..4, cand_len, ref_len]`` for one sentence."""
    if not references:
        raise ValueError("no references")
    stats = np.zeros(2 * MAX_ORDER + 2)
    for n in range(1, MAX_ORDER + 1):
        cand = ngrams(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            for g, k in ngrams(ref, n).items():
                if k > max_ref[g]:
                    max_ref[g] = k
        stats[n - 1] = sum(min(k, max_ref[g]) for g, k in cand.items())
        stats[MAX_ORDER + n - 1] = max(len(candidate) - n + 1, 0)
    stats[2 * MAX_ORDER] = len(candidate)
    stats[2 * MAX_ORDER + 1] = closest_ref_length(len(candidate), [len(r) for r in references])
    return stats


def bleu_from_stats(stats: np.ndarray) -> BleuReport:
    match, total = stats[:MAX_ORDER], stats[MAX_ORDER:2 * MAX_ORDER]
    c, r = int(stats[2 * MAX_ORDER]), int(stats[2 * MAX_ORDER + 1])
    precisions = tuple(float(m / t) if t > 0 else 0.0 for m, t in zip(match, total))
    if c == 0:
        bp = 0.0
    else:
        bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    if min(precisions) <= 0.0:
        bleu = 0.0
    else:
        bleu = bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(bleu, precisions, bp, c, r)


def bleu_score(stats: np.ndarray) -> float:
    """Scalar BLEU from summed statistics; the fast path used by the tuner."""
    match, total = stats[:MAX_ORDER], stats[MAX_ORDER:2 * MAX_ORDER]
    if np.any(match <= 0) or np.any(total <= 0):
        return 0.0
    c, r = stats[2 * MAX_ORDER], stats[2 * MAX_ORDER + 1]
    log_bp = 0.0 if c >= r else 1.0 - r / c
    return math.exp(log_bp + float(np.mean(np.log(match / total))))


def corpus_bleu(candidates: Sequence[Sequence], references: Sequence[Sequence[Sequence]]) -> BleuReport:
    """``references[i]`` is the list of references for ``candidates[i]``. Tokens must exclude EOS."""
    if not candidates:
        raise ValueError("empty candidate set")
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates for {len(references)} reference sets")
    total = np.zeros(2 * MAX_ORDER + 2)
    for cand, refs in zip(candidates, references):
        total += sentence_stats(list(cand), [list(r) for r in refs])
    return bleu_from_stats(total)


def _distinct(lists: Sequence[Sequence[Sequence]], n: int) -> tuple[float, int]:
    values = []
    tokens = 0
    for cands in lists:
        if not cands:
            raise ValueError("empty candidate list")
        seen = set()
        count = 0
        for cand in cands:
            grams = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
            seen.update(grams)
            count += len(grams)
            tokens += len(cand) if n == 1 else 0
        # a list with no n-grams of this order contributes zero diversity
        values.append(len(seen) / count if count else 0.0)
    return float(np.mean(values)), tokens


def distinct_n(lists: Sequence[Sequence[Sequence]], n: int) -> float:
    """Distinct n-grams over n-gram tokens within each source's list, averaged over sources."""
    if n < 1:
        raise ValueError("n must be positive")
    if not lists:
        raise ValueError("empty list")
    return _distinct(lists, n)[0]


def diversity_report(lists: Sequence[Sequence[Sequence]]) -> DiversityReport:
    d1, tokens = _distinct(lists, 1)
    return DiversityReport(d1, distinct_n(lists, 2), tokens)
