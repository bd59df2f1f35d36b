"""Vocabulary, tokenization, parallel corpora, and synthetic task generation.

The synthetic task is a deterministic lexicon-plus-reordering transducer:
each domain owns a token-to-token mapping and a sampling distribution over
source words, so "reference translations" are exact and a domain shift is a
lexicon swap. Source and target words share one joint vocabulary (the
feedback-choice policy reads both sides with a single embedding table).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .rng import substream

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

WHITESPACE = "whitespace"
CHARACTER = "character"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Dense token <-> id mapping; the four special ids come first."""

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if tuple(self.id_to_token[:4]) != SPECIAL_TOKENS:
            raise DataError("first four ids must be the special tokens")
        mapping = {t: i for i, t in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise DataError("duplicate token in vocabulary")
        object.__setattr__(self, "token_to_id", mapping)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token_of(self, idx: int) -> str:
        return self.id_to_token[idx]

    def decode(self, ids: list[int] | tuple[int, ...], scheme: str = WHITESPACE) -> str:
        toks = [self.id_to_token[i] for i in ids if i not in (PAD, BOS, EOS)]
        sep = " " if scheme == WHITESPACE else ""
        return sep.join(toks)


def build_vocabulary(tokens: list[str]) -> Vocabulary:
    """Vocabulary over `tokens` (deduplicated, order-preserving) plus specials."""
    seen: dict[str, None] = {}
    for t in tokens:
        if t and t not in seen:
            seen[t] = None
    return Vocabulary(id_to_token=SPECIAL_TOKENS + tuple(seen))


def split_surface(text: str, scheme: str) -> list[str]:
    if scheme == WHITESPACE:
        return text.split()
    if scheme == CHARACTER:
        return list(text)
    raise DataError(f"unknown tokenization scheme: {scheme!r}")


@dataclass(frozen=True)
class Sequence:
    """Token ids plus the surface string they came from."""

    ids: tuple[int, ...]
    surface: str
    scheme: str = WHITESPACE

    def __len__(self) -> int:
        return len(self.ids)


def tokenize(text: str, scheme: str, vocab: Vocabulary) -> Sequence:
    """Map surface text to ids; out-of-vocabulary tokens become UNK.

    No BOS/EOS are inserted here; decoders add their own.
    """
    toks = split_surface(text, scheme)
    if not toks:
        raise DataError("empty input")
    return Sequence(ids=tuple(vocab.id_of(t) for t in toks), surface=text, scheme=scheme)


@dataclass(frozen=True)
class ParallelExample:
    id: int
    source: Sequence
    reference: Sequence

    def __post_init__(self):
        if not self.source.ids or not self.reference.ids:
            raise DataError("parallel example with an empty side")


def load_parallel(
    source_path: str | Path,
    target_path: str | Path,
    scheme: str,
    vocab: Vocabulary,
) -> tuple[list[ParallelExample], int]:
    """Read two line-aligned UTF-8 files into examples.

    Returns (examples, n_skipped); pairs with a blank side are skipped and
    counted. Mismatched line counts are an error.
    """
    src_lines = Path(source_path).read_text(encoding="utf-8").splitlines()
    trg_lines = Path(target_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(trg_lines):
        raise DataError(
            f"line count mismatch: {source_path} has {len(src_lines)} lines, "
            f"{target_path} has {len(trg_lines)}"
        )
    examples: list[ParallelExample] = []
    skipped = 0
    for i, (s, t) in enumerate(zip(src_lines, trg_lines)):
        if not s.strip() or not t.strip():
            skipped += 1
            continue
        examples.append(
            ParallelExample(
                id=i,
                source=tokenize(s, scheme, vocab),
                reference=tokenize(t, scheme, vocab),
            )
        )
    if skipped:
        logger.warning("skipped %d blank line pair(s)", skipped)
    return examples, skipped


# --------------------------------------------------------------------------
# Synthetic task
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticTaskSpec:
    """One domain of the synthetic translation task.

    lexicon maps every source word to its target word (a total function);
    reorder_window w reverses consecutive target blocks of size w+1, so a
    token never moves more than w positions. sampling_weights give the
    domain's source-word distribution (parallel to sorted lexicon keys).
    """

    lexicon: dict[str, str]
    reorder_window: int
    domain_id: int
    seed: int
    sampling_weights: tuple[float, ...] = ()
    src_len_range: tuple[int, int] = (3, 9)

    def __post_init__(self):
        if self.reorder_window < 0:
            raise DataError("reorder_window must be >= 0")
        if self.sampling_weights and len(self.sampling_weights) != len(self.lexicon):
            raise DataError("sampling_weights must match lexicon size")


def _pseudo_words(rng, count: int, prefix: str = "") -> list[str]:
    """Distinct pronounceable words; surfaces matter for character-edit costs."""
    consonants = "bdfgklmnprstvz"
    vowels = "aeiou"
    out: list[str] = []
    seen: set[str] = set()
    while len(out) < count:
        n_syll = int(rng.integers(2, 5))
        word = prefix + "".join(
            consonants[rng.integers(len(consonants))] + vowels[rng.integers(len(vowels))]
            for _ in range(n_syll)
        )
        if word not in seen:
            seen.add(word)
            out.append(word)
    return out


def make_task_family(
    lexicon_size: int,
    reorder_window: int,
    seed: int,
    n_domains: int = 3,
    shift_fraction: float = 0.3,
    src_len_range: tuple[int, int] = (3, 9),
    zipf_a: float = 1.1,
) -> list[SyntheticTaskSpec]:
    """Build one spec per domain over a shared source vocabulary.

    Domain 0 is the base mapping with a zipf-skewed word distribution. Every
    later domain remaps a deterministic `shift_fraction` of the source words
    to domain-specific target words and rotates the frequency ranks, so a
    shifted domain leans on words that were rare (hence undertrained) before.
    """
    if lexicon_size < 1:
        raise DataError("lexicon_size must be >= 1")
    rng = substream(seed, "task/lexicon")
    words = _pseudo_words(rng, 2 * lexicon_size)
    src_words, base_targets = words[:lexicon_size], words[lexicon_size:]
    base_lexicon = dict(zip(src_words, base_targets))

    base_weights = [1.0 / (r + 3) ** zipf_a for r in range(1, lexicon_size + 1)]
    stride = max(1, lexicon_size // max(n_domains, 2))

    specs: list[SyntheticTaskSpec] = []
    for d in range(n_domains):
        lexicon = dict(base_lexicon)
        weights = [base_weights[(i + d * stride) % lexicon_size] for i in range(lexicon_size)]
        if d > 0:
            drng = substream(seed, f"task/domain-{d}")
            n_shift = int(round(shift_fraction * lexicon_size))
            shifted = drng.choice(lexicon_size, size=n_shift, replace=False)
            new_targets = _pseudo_words(drng, n_shift, prefix=f"q{d}")
            for idx, trg in zip(sorted(int(i) for i in shifted), new_targets):
                lexicon[src_words[idx]] = trg
        total = sum(weights)
        specs.append(
            SyntheticTaskSpec(
                lexicon=lexicon,
                reorder_window=reorder_window,
                domain_id=d,
                seed=seed,
                sampling_weights=tuple(w / total for w in weights),
                src_len_range=src_len_range,
            )
        )
    return specs


def family_vocabulary(specs: list[SyntheticTaskSpec]) -> Vocabulary:
    """Joint vocabulary over every domain's source and target words."""
    tokens: list[str] = []
    for spec in specs:
        tokens.extend(sorted(spec.lexicon.keys()))
    for spec in specs:
        tokens.extend(spec.lexicon[k] for k in sorted(spec.lexicon.keys()))
    return build_vocabulary(tokens)


def _reorder(tokens: list[str], window: int) -> list[str]:
    if window == 0:
        return tokens
    block = window + 1
    out: list[str] = []
    for i in range(0, len(tokens), block):
        out.extend(reversed(tokens[i : i + block]))
    return out


def reference_for(spec: SyntheticTaskSpec, source_tokens: list[str]) -> list[str]:
    """Apply the domain transducer: lexicon mapping then local block reversal."""
    mapped = [spec.lexicon[t] for t in source_tokens]
    return _reorder(mapped, spec.reorder_window)


def gen_synthetic(
    spec: SyntheticTaskSpec,
    n: int,
    vocab: Vocabulary | None = None,
    stream_name: str = "train",
) -> list[ParallelExample]:
    """Sample n deterministic examples from the domain distribution."""
    if n < 1:
        raise DataError("n must be >= 1")
    if vocab is None:
        vocab = family_vocabulary([spec])
    words = sorted(spec.lexicon.keys())
    weights = spec.sampling_weights or tuple([1.0 / len(words)] * len(words))
    rng = substream(spec.seed, f"task/domain-{spec.domain_id}/{stream_name}")
    lo, hi = spec.src_len_range
    examples: list[ParallelExample] = []
    for i in range(n):
        length = int(rng.integers(lo, hi + 1))
        idxs = rng.choice(len(words), size=length, p=weights)
        src_tokens = [words[int(j)] for j in idxs]
        trg_tokens = reference_for(spec, src_tokens)
        examples.append(
            ParallelExample(
                id=i,
                source=tokenize(" ".join(src_tokens), WHITESPACE, vocab),
                reference=tokenize(" ".join(trg_tokens), WHITESPACE, vocab),
            )
        )
    return examples


def write_parallel(examples: list[ParallelExample], source_path: Path, target_path: Path) -> None:
    source_path.write_text("".join(e.source.surface + "\n" for e in examples), encoding="utf-8")
    target_path.write_text("".join(e.reference.surface + "\n" for e in examples), encoding="utf-8")


def save_vocabulary(vocab: Vocabulary, path: Path) -> None:
    path.write_text("".join(t + "\n" for t in vocab.id_to_token), encoding="utf-8")


def load_vocabulary(path: Path) -> Vocabulary:
    tokens = Path(path).read_text(encoding="utf-8").splitlines()
    return Vocabulary(id_to_token=tuple(tokens))
