"""Corpus-level quality scores: BLEU-4 and a shift-free word edit rate.

BLEU uses add-one smoothing on the order-2..4 precisions; tiny corpora
otherwise hit zero precisions and the reward signal collapses. The edit
rate is plain word-level Levenshtein over reference length (no block
shifts).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass


class MetricError(ValueError):
    pass


def _tokens(seq) -> list:
    ids = getattr(seq, "ids", seq)
    return list(ids)


def corpus_bleu(hypotheses: list, references: list) -> float:
    """Corpus BLEU-4 in [0, 100].

    Geometric mean of modified n-gram precisions (n=1..4) times the brevity
    penalty; n>1 precisions are add-one smoothed in numerator and
    denominator. Unigram precision is unsmoothed, so zero overlap scores 0.
    """
    if len(hypotheses) != len(references):
        raise MetricError(
            f"length mismatch: {len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise MetricError("need at least one sentence pair")

    matches = [0] * 5
    totals = [0] * 5
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h = _tokens(hyp)
        r = _tokens(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, 5):
            h_ngrams = Counter(tuple(h[i : i + n]) for i in range(len(h) - n + 1))
            r_ngrams = Counter(tuple(r[i : i + n]) for i in range(len(r) - n + 1))
            matches[n] += sum(min(c, r_ngrams[g]) for g, c in h_ngrams.items())
            totals[n] += max(0, len(h) - n + 1)

    if totals[1] == 0 or matches[1] == 0:
        return 0.0
    log_precisions = [math.log(matches[1] / totals[1])]
    for n in range(2, 5):
        log_precisions.append(math.log((matches[n] + 1) / (totals[n] + 1)))
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(sum(log_precisions) / 4.0)


def word_edit_rate(hypothesis, reference) -> float:
    """Word-level Levenshtein distance divided by reference length."""
    r = _tokens(reference)
    if not r:
        raise MetricError("empty reference")
    h = _tokens(hypothesis)
    return levenshtein(h, r) / len(r)


def levenshtein(a: list, b: list) -> int:
    """Unit-cost insert/delete/substitute distance."""
    if not a:
        return len(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class EvalReport:
    bleu: float
    word_edit_rate: float
    n_sentences: int
    decode_mode: str

    def __post_init__(self):
        if not 0.0 <= self.bleu <= 100.0:
            raise MetricError(f"bleu out of range: {self.bleu}")
        if self.word_edit_rate < 0.0:
            raise MetricError(f"negative edit rate: {self.word_edit_rate}")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(model, dev: list, decode_mode: str = "greedy") -> EvalReport:
    """Decode every dev source with the stated mode and score the corpus.

    decode_mode is "greedy" or "beam<width>" (e.g. "beam5"). Pure function
    of (model, dev, mode).
    """
    from .decoding import batched_greedy_decode, beam_search

    if not dev:
        raise MetricError("empty dev set")
    sources = [ex.source for ex in dev]
    if decode_mode == "greedy":
        hyps = batched_greedy_decode(model, sources)
    elif decode_mode.startswith("beam"):
        width = int(decode_mode[4:] or "5")
        hyps = [beam_search(model, src, width) for src in sources]
    else:
        raise MetricError(f"unknown decode mode: {decode_mode!r}")

    hyp_tokens = [h.content_ids() for h in hyps]
    ref_tokens = [list(ex.reference.ids) for ex in dev]
    bleu = corpus_bleu(hyp_tokens, ref_tokens)
    total_edits = sum(levenshtein(h, r) for h, r in zip(hyp_tokens, ref_tokens))
    total_ref = sum(len(r) for r in ref_tokens)
    return EvalReport(
        bleu=bleu,
        word_edit_rate=total_edits / total_ref,
        n_sentences=len(dev),
        decode_mode=decode_mode,
    )
