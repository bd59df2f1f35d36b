"""The toy sequence-to-sequence student.

Single-layer bidirectional GRU encoder, single-layer GRU decoder with global
dot-product attention, all float64 so gradient tests against central finite
differences are tight. One weighted gradient routine covers every
supervision mode: the per-token weight vector decides what is learned, the
optional attention-dropout mask decides under which (weakened) model.

All randomness (init, dropout masks) is drawn from numpy generators so runs
are reproducible independently of torch's global RNG.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .data import BOS, EOS, PAD
from .rng import substream

DTYPE = torch.float64


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class LearnerConfig:
    src_vocab_size: int
    trg_vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    p_att: float = 0.1
    max_decode_len: int = 20
    beam_width: int = 5
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    optimizer: str = "adam"  # "sgd" gives exact-arithmetic updates for tests

    def __post_init__(self):
        if min(self.src_vocab_size, self.trg_vocab_size, self.embed_dim, self.hidden_dim) < 1:
            raise LearnerError("all dimensions must be >= 1")
        if not 0.0 <= self.p_att < 1.0:
            raise LearnerError("p_att must be in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise LearnerError(f"unknown optimizer: {self.optimizer!r}")


@dataclass(frozen=True)
class TokenWeights:
    """Per-target-token weights, each in {0, 1}."""

    values: tuple[float, ...]

    def __post_init__(self):
        if any(v not in (0.0, 1.0) for v in self.values):
            raise LearnerError("token weights must be 0 or 1")

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def ones(cls, n: int) -> "TokenWeights":
        return cls(values=(1.0,) * n)

    @classmethod
    def zeros(cls, n: int) -> "TokenWeights":
        return cls(values=(0.0,) * n)


def _gru_params(rng, input_dim: int, hidden_dim: int) -> dict[str, torch.nn.Parameter]:
    def tensor(*shape):
        arr = rng.uniform(-0.08, 0.08, size=shape)
        return torch.nn.Parameter(torch.tensor(arr, dtype=DTYPE))

    return {
        "weight_ih": tensor(3 * hidden_dim, input_dim),
        "weight_hh": tensor(3 * hidden_dim, hidden_dim),
        "bias_ih": tensor(3 * hidden_dim),
        "bias_hh": tensor(3 * hidden_dim),
    }


def gru_step(p: dict, prefix: str, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    """One GRU cell update; gate layout (reset, update, candidate)."""
    gi = x @ p[f"{prefix}/weight_ih"].T + p[f"{prefix}/bias_ih"]
    gh = h @ p[f"{prefix}/weight_hh"].T + p[f"{prefix}/bias_hh"]
    hd = h.shape[-1]
    i_r, i_z, i_n = gi[..., :hd], gi[..., hd : 2 * hd], gi[..., 2 * hd :]
    h_r, h_z, h_n = gh[..., :hd], gh[..., hd : 2 * hd], gh[..., 2 * hd :]
    r = torch.sigmoid(i_r + h_r)
    z = torch.sigmoid(i_z + h_z)
    n = torch.tanh(i_n + r * h_n)
    return (1.0 - z) * n + z * h


class Seq2SeqModel(torch.nn.Module):
    """Encoder-decoder with dot-product attention over projected states.

    Parameter blocks: src/trg embeddings, forward/backward encoder cells,
    decoder cell, attention projection (2H -> H), output projection (H -> V).
    The decoder starts from a zero state; attention carries the source.
    """

    def __init__(self, config: LearnerConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = substream(seed, "learner-init")
        E, H = config.embed_dim, config.hidden_dim

        def tensor(*shape):
            arr = rng.uniform(-0.08, 0.08, size=shape)
            return torch.nn.Parameter(torch.tensor(arr, dtype=DTYPE))

        self.params = torch.nn.ParameterDict()
        self.params["src_embed"] = tensor(config.src_vocab_size, E)
        self.params["trg_embed"] = tensor(config.trg_vocab_size, E)
        for prefix, in_dim in (("enc_fwd", E), ("enc_bwd", E), ("dec", E)):
            for name, param in _gru_params(rng, in_dim, H).items():
                self.params[f"{prefix}/{name}"] = param
        self.params["att_proj/weight"] = tensor(H, 2 * H)
        self.params["att_proj/bias"] = tensor(H)
        self.params["out_proj/weight"] = tensor(config.trg_vocab_size, H)
        self.params["out_proj/bias"] = tensor(config.trg_vocab_size)

    # -- parameter bookkeeping ------------------------------------------------

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {name: p for name, p in self.params.items()}

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {name: p.detach().clone() for name, p in self.params.items()}

    def restore(self, snap: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name, p in self.params.items():
                p.copy_(snap[name])

    # -- encoding -------------------------------------------------------------

    def _scan(self, prefix: str, emb: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, s, _ = emb.shape
        h = emb.new_zeros(b, self.config.hidden_dim)
        states = []
        for t in range(s):
            h_new = gru_step(self.params, prefix, emb[:, t], h)
            h = torch.where(mask[:, t : t + 1], h_new, h)
            states.append(h)
        return torch.stack(states, dim=1)

    def encode(self, src: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
        """Project bidirectional encoder states to attention keys (B, S, H)."""
        emb = self.params["src_embed"][src]
        fwd = self._scan("enc_fwd", emb, src_mask)

        lengths = src_mask.sum(dim=1)
        s = src.shape[1]
        pos = torch.arange(s)
        # reverse each row within its true length; reversed rows stay left-aligned
        rev_idx = torch.where(pos < lengths[:, None], lengths[:, None] - 1 - pos, pos)
        emb_rev = torch.gather(emb, 1, rev_idx[..., None].expand_as(emb))
        bwd_rev = self._scan("enc_bwd", emb_rev, src_mask)
        bwd = torch.gather(bwd_rev, 1, rev_idx[..., None].expand_as(bwd_rev))

        states = torch.cat([fwd, bwd], dim=-1)
        return states @ self.params["att_proj/weight"].T + self.params["att_proj/bias"]

    # -- one decoder step -----------------------------------------------------

    def decode_step(
        self,
        keys: torch.Tensor,
        src_mask: torch.Tensor,
        h: torch.Tensor,
        prev_ids: torch.Tensor,
        att_keep: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Advance the decoder one position; returns (h', log-probs (B, V)).

        att_keep is an optional {0,1} mask over source positions, applied to
        the post-softmax attention weights and renormalized; a row that would
        drop every real position falls back to the undropped weights.
        """
        emb = self.params["trg_embed"][prev_ids]
        h = gru_step(self.params, "dec", emb, h)
        scores = torch.einsum("bh,bsh->bs", h, keys)
        scores = scores.masked_fill(~src_mask, float("-inf"))
        attw = torch.softmax(scores, dim=-1)
        if att_keep is not None:
            dropped = attw * att_keep
            z = dropped.sum(dim=-1, keepdim=True)
            dead = z == 0.0
            attw = torch.where(dead, attw, dropped / torch.where(dead, torch.ones_like(z), z))
        ctx = torch.einsum("bs,bsh->bh", attw, keys)
        combined = torch.tanh(h + ctx)
        logits = combined @ self.params["out_proj/weight"].T + self.params["out_proj/bias"]
        return h, torch.log_softmax(logits, dim=-1)


# --------------------------------------------------------------------------
# Scoring and gradients
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GradItem:
    """One example prepared for a weighted update.

    target_ids already carry the terminal EOS; weights has the same length.
    att_keep, when set, is the fixed (T, S) attention keep-mask of the
    weakened model.
    """

    src_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    weights: tuple[float, ...]
    att_keep: np.ndarray | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.target_ids):
            raise LearnerError(
                f"weights length {len(self.weights)} != target length {len(self.target_ids)}"
            )


def dropout_keep_mask(prob: float, seed: int, n_steps: int, n_src: int) -> np.ndarray:
    """Fixed {0,1} keep-mask; entries are zeroed independently with `prob`."""
    if prob == 0.0:
        return np.ones((n_steps, n_src))
    rng = substream(seed, "att-dropout")
    return (rng.random((n_steps, n_src)) >= prob).astype(np.float64)


def _check_ids(ids, limit: int, side: str) -> None:
    for i in ids:
        if not 0 <= i < limit:
            raise LearnerError(f"{side} token id {i} out of range [0, {limit})")


def prepare_item(
    model: Seq2SeqModel,
    x_ids: tuple[int, ...],
    y_ids: tuple[int, ...],
    weights: tuple[float, ...] | None = None,
    dropout: tuple[float, int] | None = None,
) -> GradItem:
    """Assemble a GradItem from content-level target ids and weights.

    The terminal EOS position is appended here; its weight is 1 when every
    token weight is 1 (complete-sequence supervision) and 0 otherwise
    (markings are clicks on words, there is nothing to click for the end).
    """
    _check_ids(x_ids, model.config.src_vocab_size, "source")
    _check_ids(y_ids, model.config.trg_vocab_size, "target")
    if weights is None:
        weights = (1.0,) * len(y_ids)
    if len(weights) == len(y_ids):
        eos_w = 1.0 if weights and min(weights) == 1.0 else 0.0
        target = tuple(y_ids) + (EOS,)
        full_weights = tuple(weights) + (eos_w,)
    elif len(weights) == len(y_ids) + 1:
        target = tuple(y_ids) + (EOS,)
        full_weights = tuple(weights)
    else:
        raise LearnerError(f"weights length {len(weights)} does not match target {len(y_ids)}")
    keep = None
    if dropout is not None:
        prob, seed = dropout
        if prob > 0.0:
            keep = dropout_keep_mask(prob, seed, len(target), len(x_ids))
    return GradItem(src_ids=tuple(x_ids), target_ids=target, weights=full_weights, att_keep=keep)


def _pad_batch(model: Seq2SeqModel, items: list[GradItem]):
    b = len(items)
    s = max(len(it.src_ids) for it in items)
    t = max(len(it.target_ids) for it in items)
    src = torch.zeros(b, s, dtype=torch.long)
    src_mask = torch.zeros(b, s, dtype=torch.bool)
    trg = torch.zeros(b, t, dtype=torch.long)
    trg_in = torch.full((b, t), BOS, dtype=torch.long)
    wts = torch.zeros(b, t, dtype=DTYPE)
    keep = torch.ones(b, t, s, dtype=DTYPE)
    any_keep = False
    for i, it in enumerate(items):
        si, ti = len(it.src_ids), len(it.target_ids)
        src[i, :si] = torch.tensor(it.src_ids, dtype=torch.long)
        src_mask[i, :si] = True
        trg[i, :ti] = torch.tensor(it.target_ids, dtype=torch.long)
        trg_in[i, 1:ti] = torch.tensor(it.target_ids[:-1], dtype=torch.long)
        wts[i, :ti] = torch.tensor(it.weights, dtype=DTYPE)
        if it.att_keep is not None:
            any_keep = True
            keep[i, :ti, :si] = torch.tensor(it.att_keep, dtype=DTYPE)
    return src, src_mask, trg, trg_in, wts, (keep if any_keep else None)


def _forward_batch(model: Seq2SeqModel, items: list[GradItem]):
    src, src_mask, trg, trg_in, wts, keep = _pad_batch(model, items)
    keys = model.encode(src, src_mask)
    h = keys.new_zeros(len(items), model.config.hidden_dim)
    rows = []
    for t in range(trg.shape[1]):
        h, logprobs = model.decode_step(
            keys, src_mask, h, trg_in[:, t], None if keep is None else keep[:, t]
        )
        rows.append(logprobs.gather(1, trg[:, t : t + 1]).squeeze(1))
    return torch.stack(rows, dim=1), wts


def batch_position_logprobs(model: Seq2SeqModel, items: list[GradItem]) -> torch.Tensor:
    """Teacher-forced log p(target_t | x, target_<t) for every item, padded (B, T)."""
    logprobs, _ = _forward_batch(model, items)
    return logprobs


def weighted_batch_loss(model: Seq2SeqModel, items: list[GradItem]) -> torch.Tensor:
    """Mean over items of the per-item weighted negative log-likelihood."""
    logprobs, wts = _forward_batch(model, items)
    return -(wts * logprobs).sum() / len(items)


def token_logprobs(
    model: Seq2SeqModel,
    x_ids: tuple[int, ...],
    y_ids: tuple[int, ...],
    dropout: tuple[float, int] | None = None,
) -> list[float]:
    """Per-position log-probabilities of y (plus its terminal EOS) given x."""
    if not x_ids or not y_ids:
        raise LearnerError("empty sequence")
    item = prepare_item(model, x_ids, y_ids, None, dropout)
    with torch.no_grad():
        lp = batch_position_logprobs(model, [item])
    return [float(v) for v in lp[0]]


def _grads_as_dict(model: Seq2SeqModel, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    names = list(model.params.keys())
    tensors = [model.params[n] for n in names]
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    return {
        n: (g.detach().clone() if g is not None else torch.zeros_like(p))
        for n, p, g in zip(names, tensors, grads)
    }


def grad_supervised(
    model: Seq2SeqModel,
    x_ids: tuple[int, ...],
    y_ids: tuple[int, ...],
    weights: TokenWeights | tuple[float, ...],
    dropout: tuple[float, int] | None = None,
) -> dict[str, torch.Tensor]:
    """Gradient of the weighted negative log-likelihood for one example."""
    values = weights.values if isinstance(weights, TokenWeights) else tuple(weights)
    item = prepare_item(model, x_ids, y_ids, values, dropout)
    loss = weighted_batch_loss(model, [item])
    return _grads_as_dict(model, loss)


def mean_weighted_gradient(model: Seq2SeqModel, items: list[GradItem]) -> dict[str, torch.Tensor]:
    """Mean of the per-item weighted gradients, computed in one padded pass."""
    loss = weighted_batch_loss(model, items)
    return _grads_as_dict(model, loss)


def position_entropies(
    model: Seq2SeqModel, x_ids: tuple[int, ...], y_ids: tuple[int, ...]
) -> list[float]:
    """Entropy of the output distribution at each position of y given x."""
    src = torch.tensor([list(x_ids)], dtype=torch.long)
    src_mask = torch.ones_like(src, dtype=torch.bool)
    with torch.no_grad():
        keys = model.encode(src, src_mask)
        h = keys.new_zeros(1, model.config.hidden_dim)
        prev = torch.tensor([BOS], dtype=torch.long)
        out = []
        for t in range(len(y_ids)):
            h, logprobs = model.decode_step(keys, src_mask, h, prev)
            probs = logprobs.exp()
            out.append(float(-(probs * logprobs).sum()))
            prev = torch.tensor([y_ids[t]], dtype=torch.long)
    return out


def avg_token_entropy(model: Seq2SeqModel, x_ids: tuple[int, ...], hyp_ids: tuple[int, ...]) -> float:
    """Mean entropy over the positions of a decoded hypothesis."""
    if not hyp_ids:
        raise LearnerError("empty hypothesis")
    return float(np.mean(position_entropies(model, x_ids, hyp_ids)))


# --------------------------------------------------------------------------
# Optimizer
# --------------------------------------------------------------------------

@dataclass
class OptimizerState:
    step: int = 0
    learning_rate: float = 0.0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)

    @classmethod
    def fresh(cls, model: Seq2SeqModel | torch.nn.Module, learning_rate: float) -> "OptimizerState":
        return cls(
            step=0,
            learning_rate=learning_rate,
            m={n: torch.zeros_like(p) for n, p in model.params.items()},
            v={n: torch.zeros_like(p) for n, p in model.params.items()},
        )


def accumulate_and_update(
    model,
    state: OptimizerState,
    gradients: list[dict[str, torch.Tensor]],
    optimizer: str = "adam",
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
):
    """Apply one optimizer step on the arithmetic mean of `gradients`."""
    if not gradients:
        raise LearnerError("no gradients to accumulate")
    mean: dict[str, torch.Tensor] = {}
    for name in gradients[0]:
        stacked = torch.stack([g[name] for g in gradients])
        if not torch.isfinite(stacked).all():
            raise LearnerError(f"non-finite gradient in parameter block {name!r}")
        mean[name] = stacked.mean(dim=0)

    state.step += 1
    b1, b2 = betas
    with torch.no_grad():
        for name, p in model.params.items():
            g = mean[name]
            if optimizer == "sgd":
                p.add_(g, alpha=-state.learning_rate)
                continue
            state.m[name].mul_(b1).add_(g, alpha=1 - b1)
            state.v[name].mul_(b2).addcmul_(g, g, value=1 - b2)
            m_hat = state.m[name] / (1 - b1**state.step)
            v_hat = state.v[name] / (1 - b2**state.step)
            p.add_(-state.learning_rate * m_hat / (v_hat.sqrt() + eps))
    return model, state
