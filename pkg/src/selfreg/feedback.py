"""The simulated human teacher.

Builds the target, per-token weight vector, and effort cost for each
feedback type from the reference translation: corrections cost character
edits, markings cost one click per marked word, self-supervision and
skipping are free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .costs import FeedbackType
from .data import Sequence, ParallelExample
from .decoding import Hypothesis, beam_search
from .learner import TokenWeights


def _lcs_length(a, b) -> int:
    """Longest common subsequence length, O(len(a)*len(b))."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def char_edit_cost(hyp_surface: str, ref_surface: str) -> int:
    """Insertions plus deletions implied by a character-level LCS alignment.

    Symmetric; zero iff the strings are equal.
    """
    lcs = _lcs_length(hyp_surface, ref_surface)
    return (len(hyp_surface) - lcs) + (len(ref_surface) - lcs)


@dataclass(frozen=True)
class MarkingResult:
    marked: tuple[bool, ...]

    @property
    def n_marked(self) -> int:
        return sum(self.marked)


def _common_substring_length(hyp: list, ref: list) -> int:
    """Length of the longest common contiguous substring."""
    best = 0
    prev = [0] * (len(ref) + 1)
    for x in hyp:
        cur = [0]
        for j, y in enumerate(ref, start=1):
            run = prev[j - 1] + 1 if x == y else 0
            cur.append(run)
            if run > best:
                best = run
        prev = cur
    return best


def mark_correct(hyp, ref) -> MarkingResult:
    """Mark every maximal-length common substring occurrence in the hypothesis.

    With L the longest common contiguous substring length (in words), spans
    of hyp of length L that occur in ref are marked greedily left-to-right
    without overlap. L = 0 marks nothing.
    """
    h = list(getattr(hyp, "ids", hyp))
    r = list(getattr(ref, "ids", ref))
    if not h:
        raise ValueError("empty hypothesis")
    length = _common_substring_length(h, r)
    marked = [False] * len(h)
    if length == 0:
        return MarkingResult(marked=tuple(marked))
    ref_spans = {tuple(r[j : j + length]) for j in range(len(r) - length + 1)}
    i = 0
    while i + length <= len(h):
        if tuple(h[i : i + length]) in ref_spans:
            for k in range(i, i + length):
                marked[k] = True
            i += length
        else:
            i += 1
    return MarkingResult(marked=tuple(marked))


@dataclass(frozen=True)
class FeedbackResponse:
    type: FeedbackType
    target: Sequence
    weights: TokenWeights
    dropout: float | None
    cost: float

    def __post_init__(self):
        if len(self.weights) != len(self.target.ids):
            raise ValueError("weights length must equal target length")
        if self.type in (FeedbackType.SELF, FeedbackType.NONE) and self.cost != 0:
            raise ValueError(f"{self.type.value} feedback must be free")
        if self.cost < 0:
            raise ValueError("negative cost")


def provide_feedback(
    feedback_type: FeedbackType,
    example: ParallelExample,
    hyp: Hypothesis,
    p_att: float,
    vocab,
) -> FeedbackResponse:
    """Dispatch one feedback request against the reference.

    Full: corrected target with all-one weights, character-edit cost.
    Weak: the hypothesis with marked-token weights, one click per mark.
    Self: the hypothesis under attention dropout, free.
    None: the hypothesis with all-zero weights, free.
    """
    if not isinstance(feedback_type, FeedbackType):
        raise ValueError(f"unknown feedback type: {feedback_type!r}")
    hyp_seq = hyp.to_sequence(vocab)
    n = len(hyp_seq.ids)
    if feedback_type is FeedbackType.FULL:
        return FeedbackResponse(
            type=feedback_type,
            target=example.reference,
            weights=TokenWeights.ones(len(example.reference.ids)),
            dropout=None,
            cost=float(char_edit_cost(hyp_seq.surface, example.reference.surface)),
        )
    if feedback_type is FeedbackType.WEAK:
        # degenerate empty hypothesis: nothing to mark, nothing to pay
        if n == 0:
            return FeedbackResponse(
                type=feedback_type, target=hyp_seq, weights=TokenWeights.zeros(0),
                dropout=None, cost=0.0,
            )
        marking = mark_correct(hyp_seq.ids, example.reference.ids)
        return FeedbackResponse(
            type=feedback_type,
            target=hyp_seq,
            weights=TokenWeights(values=tuple(1.0 if m else 0.0 for m in marking.marked)),
            dropout=None,
            cost=float(marking.n_marked),
        )
    if feedback_type is FeedbackType.SELF:
        return FeedbackResponse(
            type=feedback_type, target=hyp_seq, weights=TokenWeights.ones(n),
            dropout=p_att, cost=0.0,
        )
    return FeedbackResponse(
        type=feedback_type, target=hyp_seq, weights=TokenWeights.zeros(n),
        dropout=None, cost=0.0,
    )


def pregenerate_targets(model, corpus: list[ParallelExample], width: int | None = None) -> dict[int, Hypothesis]:
    """Beam-decode every source once with the initial model; held fixed afterwards."""
    return {ex.id: beam_search(model, ex.source, width) for ex in corpus}


def save_pregenerated(pregen: dict[int, Hypothesis], vocab, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex_id in sorted(pregen):
            hyp = pregen[ex_id]
            fh.write(
                json.dumps(
                    {
                        "id": ex_id,
                        "ids": list(hyp.ids),
                        "surface": vocab.decode(hyp.content_ids()),
                        "token_logprobs": list(hyp.token_logprobs),
                        "score": hyp.score,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_pregenerated(path: Path) -> dict[int, Hypothesis]:
    out: dict[int, Hypothesis] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        out[rec["id"]] = Hypothesis(
            ids=tuple(rec["ids"]),
            token_logprobs=tuple(rec["token_logprobs"]),
            score=rec["score"],
        )
    return out
