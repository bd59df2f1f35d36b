"""Greedy and beam decoding for the seq2seq learner.

Hypothesis ids include the terminal EOS when decoding stopped on one;
max-length-truncated outputs carry no EOS. Ties are always broken toward
the lowest token id so decoding is deterministic across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .data import BOS, EOS, PAD, Sequence, Vocabulary
from .learner import Seq2SeqModel


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]
    token_logprobs: tuple[float, ...]
    score: float

    def __post_init__(self):
        if len(self.ids) != len(self.token_logprobs):
            raise ValueError("ids and token_logprobs lengths differ")

    def content_ids(self) -> list[int]:
        return [i for i in self.ids if i not in (PAD, BOS, EOS)]

    def terminated(self) -> bool:
        return bool(self.ids) and self.ids[-1] == EOS

    def to_sequence(self, vocab: Vocabulary) -> Sequence:
        content = self.content_ids()
        return Sequence(ids=tuple(content), surface=vocab.decode(content))


def _make_hypothesis(ids: list[int], logprobs: list[float]) -> Hypothesis:
    lps = tuple(min(lp, 0.0) for lp in logprobs)
    return Hypothesis(ids=tuple(ids), token_logprobs=lps, score=sum(lps))


def batched_greedy_decode(
    model: Seq2SeqModel, sources: list, chunk_size: int = 256
) -> list[Hypothesis]:
    """Greedy-decode many sources at once; per-row results match one-at-a-time
    decoding (rows are isolated by masking). Fixed chunking keeps results
    reproducible across runs."""
    out: list[Hypothesis] = []
    for start in range(0, len(sources), chunk_size):
        out.extend(_greedy_chunk(model, sources[start : start + chunk_size]))
    return out


def _greedy_chunk(model: Seq2SeqModel, sources: list) -> list[Hypothesis]:
    id_lists = [tuple(getattr(s, "ids", s)) for s in sources]
    b = len(id_lists)
    s_max = max(len(x) for x in id_lists)
    src = torch.zeros(b, s_max, dtype=torch.long)
    src_mask = torch.zeros(b, s_max, dtype=torch.bool)
    for i, x in enumerate(id_lists):
        src[i, : len(x)] = torch.tensor(x, dtype=torch.long)
        src_mask[i, : len(x)] = True

    ids: list[list[int]] = [[] for _ in range(b)]
    lps: list[list[float]] = [[] for _ in range(b)]
    done = [False] * b
    with torch.no_grad():
        keys = model.encode(src, src_mask)
        h = keys.new_zeros(b, model.config.hidden_dim)
        prev = torch.full((b,), BOS, dtype=torch.long)
        for _ in range(model.config.max_decode_len):
            h, logprobs = model.decode_step(keys, src_mask, h, prev)
            next_ids = torch.argmax(logprobs, dim=-1)  # first max = lowest id
            for i in range(b):
                if done[i]:
                    continue
                tok = int(next_ids[i])
                ids[i].append(tok)
                lps[i].append(float(logprobs[i, tok]))
                if tok == EOS:
                    done[i] = True
            if all(done):
                break
            prev = torch.where(torch.tensor(done), torch.full_like(next_ids, PAD), next_ids)
    return [_make_hypothesis(i, l) for i, l in zip(ids, lps)]


def greedy_decode(model: Seq2SeqModel, source) -> Hypothesis:
    """Argmax decoding until EOS or max_decode_len."""
    return batched_greedy_decode(model, [source])[0]


def beam_search(model: Seq2SeqModel, source, width: int | None = None) -> Hypothesis:
    """Length-unnormalized beam search; width 1 reproduces greedy exactly.

    Completed hypotheses compete with max-length live ones by total score;
    ties go to the shorter, then lexicographically smaller id sequence.
    """
    if width is None:
        width = model.config.beam_width
    if width < 1:
        raise ValueError("beam width must be >= 1")
    x = tuple(getattr(source, "ids", source))
    src = torch.tensor([list(x)], dtype=torch.long)
    src_mask = torch.ones_like(src, dtype=torch.bool)

    import numpy as np

    with torch.no_grad():
        keys = model.encode(src, src_mask)
        h0 = keys.new_zeros(1, model.config.hidden_dim)
        # live beams: (ids, logprobs, score, hidden_state, prev_token)
        live = [((), (), 0.0, h0[0], BOS)]
        finished: list[tuple[tuple[int, ...], tuple[float, ...], float]] = []
        token_order = None
        for _ in range(model.config.max_decode_len):
            n = len(live)
            h_in = torch.stack([b[3] for b in live])
            prev = torch.tensor([b[4] for b in live], dtype=torch.long)
            h_out, logprobs = model.decode_step(
                keys.expand(n, -1, -1), src_mask.expand(n, -1), h_in, prev
            )
            lp = logprobs.numpy()
            if token_order is None:
                token_order = np.arange(lp.shape[1])
            take = min(width, lp.shape[1])
            candidates = []
            for i, (ids, lseq, score, _, _) in enumerate(live):
                # a beam contributes at most `width` survivors; lexsort is
                # stable, so ties fall to the lower token id exactly as a
                # full sort would
                best = np.lexsort((token_order, -lp[i]))[:take]
                candidates.extend((score + float(lp[i, v]), int(v), i) for v in best)
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            new_live = []
            for score, v, i in candidates[:width]:
                ids, lseq, _, _, _ = live[i]
                step_lp = min(float(lp[i, v]), 0.0)
                if v == EOS:
                    finished.append((ids + (EOS,), lseq + (step_lp,), score))
                else:
                    new_live.append((ids + (v,), lseq + (step_lp,), score, h_out[i], v))
            live = new_live
            if not live:
                break

    pool = finished + [(ids, lseq, score) for ids, lseq, score, _, _ in live]
    pool.sort(key=lambda p: (-p[2], len(p[0]), p[0]))
    ids, lseq, _ = pool[0]
    return _make_hypothesis(list(ids), list(lseq))
