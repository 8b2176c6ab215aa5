"""Self-contained reference metrics: smoothed sentence BLEU and chrF.

Both are pure functions of strings and are registered under fixed names so a
board works end to end with no external plugins.  The exact smoothing and
tie-break rules are pinned here so scores are bit-reproducible; no parity
with any external toolkit is claimed.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

__all__ = ["sentence_bleu", "chrf", "tokenize", "BUILTIN_METRICS", "BuiltinMetric"]


def tokenize(text: str) -> list[str]:
    """Lowercase, isolate Unicode punctuation as standalone tokens, split on
    whitespace."""
    pieces: list[str] = []
    for ch in text.lower():
        if unicodedata.category(ch).startswith("P"):
            pieces.append(f" {ch} ")
        else:
            pieces.append(ch)
    return "".join(pieces).split()


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(candidate: str, references: Sequence[str]) -> float:
    """Smoothed sentence-level BLEU-4 with native multi-reference support.

    Modified n-gram precisions (n = 1..4) clip each candidate n-gram count
    against the maximum count across all references.  Orders with an empty
    candidate denominator are skipped from the geometric mean; a zero
    numerator is floored at 1/(2*denominator).  The brevity penalty uses the
    reference whose token length is closest to the candidate's, breaking
    ties toward the shorter reference.  An empty candidate scores 0.
    """
    if not references:
        raise ValueError("sentence_bleu requires at least one reference")
    cand = tokenize(candidate)
    refs = [tokenize(r) for r in references]
    if not cand:
        return 0.0

    log_precisions = 0.0
    orders_used = 0
    for n in range(1, 5):
        cand_counts = _ngrams(cand, n)
        denominator = sum(cand_counts.values())
        if denominator == 0:
            continue
        ref_counts = [_ngrams(r, n) for r in refs]
        numerator = sum(
            min(count, max(rc[gram] for rc in ref_counts))
            for gram, count in cand_counts.items()
        )
        precision = numerator / denominator if numerator else 1.0 / (2.0 * denominator)
        log_precisions += math.log(precision)
        orders_used += 1
    if orders_used == 0:
        return 0.0

    c_len = len(cand)
    r_len = c_len
    best_gap = None
    for r in refs:
        gap = abs(len(r) - c_len)
        if best_gap is None or gap < best_gap or (gap == best_gap and len(r) < r_len):
            best_gap = gap
            r_len = len(r)
    brevity = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return brevity * math.exp(log_precisions / orders_used)


def _chrf_single(candidate: str, reference: str, max_n: int = 6, beta: float = 2.0) -> float:
    cand = "".join(candidate.split())
    ref = "".join(reference.split())
    total = 0.0
    orders_used = 0
    for n in range(1, max_n + 1):
        cand_counts = _ngrams(cand, n)
        ref_counts = _ngrams(ref, n)
        n_cand = sum(cand_counts.values())
        n_ref = sum(ref_counts.values())
        if n_cand == 0 or n_ref == 0:
            continue
        overlap = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        precision = overlap / n_cand
        recall = overlap / n_ref
        if precision + recall > 0:
            b2 = beta * beta
            total += (1 + b2) * precision * recall / (b2 * precision + recall)
        orders_used += 1
    if orders_used == 0:
        return 0.0
    return total / orders_used


def chrf(candidate: str, references: Sequence[str]) -> float:
    """Character n-gram F-score (n = 1..6, beta = 2, recall-weighted).

    Whitespace is stripped before n-gram extraction; orders where either
    side has no n-grams are skipped from the average.  Multiple references
    reduce to the maximum of per-reference scores, which matches the
    engine-level max rule applied to non-native metrics.
    """
    if not references:
        raise ValueError("chrf requires at least one reference")
    return max(_chrf_single(candidate, r) for r in references)


@dataclass(frozen=True)
class BuiltinMetric:
    """Registry entry pinning a builtin's canonical submission flags."""

    name: str
    fn: Callable[[str, Sequence[str]], float]
    direction: str
    needs_references: bool
    needs_source: bool
    native_multi_ref: bool


BUILTIN_METRICS: dict[str, BuiltinMetric] = {
    "sentence_bleu": BuiltinMetric(
        name="sentence_bleu",
        fn=sentence_bleu,
        direction="higher_better",
        needs_references=True,
        needs_source=False,
        native_multi_ref=True,
    ),
    "chrf": BuiltinMetric(
        name="chrf",
        fn=chrf,
        direction="higher_better",
        needs_references=True,
        needs_source=False,
        native_multi_ref=False,
    ),
}
