"""The feedback-choice policy network.

Two bidirectional GRU encoders read the source and the hypothesis; their
final states, concatenated with the previous action distribution, feed a
higher-level recurrent cell whose state persists across inputs for the
whole run. A softmax over action scores is sampled for the decision, and
the policy-gradient update replays decisions against recorded (frozen)
recurrent states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .costs import FeedbackType
from .data import EOS
from .learner import DTYPE, LearnerError, _gru_params, gru_step
from .rng import substream


@dataclass(frozen=True)
class RegulatorConfig:
    encoder_hidden: int = 32
    state_hidden: int = 32
    action_set: tuple[FeedbackType, ...] = (
        FeedbackType.FULL,
        FeedbackType.WEAK,
        FeedbackType.SELF,
    )
    alpha: float = 1.0
    learning_rate: float = 1e-3

    def __post_init__(self):
        if min(self.encoder_hidden, self.state_hidden) < 1:
            raise LearnerError("regulator dims must be >= 1")
        if self.alpha <= 0:
            raise LearnerError("alpha must be > 0")
        if not self.action_set or len(set(self.action_set)) != len(self.action_set):
            raise LearnerError("action set must be non-empty without duplicates")


@dataclass(frozen=True)
class PolicyDecision:
    action: FeedbackType
    logprob: float
    distribution: tuple[float, ...]

    def __post_init__(self):
        if abs(sum(self.distribution) - 1.0) > 1e-6:
            raise LearnerError("decision distribution must sum to 1")


@dataclass(frozen=True)
class DecisionRecord:
    """Everything needed to replay one decision's forward pass for Eq-style
    policy-gradient updates: the recurrent inputs are frozen constants."""

    x_ids: tuple[int, ...]
    hyp_ids: tuple[int, ...]
    prev_dist: tuple[float, ...]
    state_in: torch.Tensor
    action_index: int


class RegulatorModel(torch.nn.Module):
    def __init__(self, config: RegulatorConfig, embed_init: torch.Tensor, seed: int = 0):
        """embed_init: the learner's source embedding table (copied, then
        trained independently)."""
        super().__init__()
        self.config = config
        rng = substream(seed, "regulator-init")
        eh, sh = config.encoder_hidden, config.state_hidden
        n_actions = len(config.action_set)
        embed_dim = embed_init.shape[1]

        def tensor(*shape):
            arr = rng.uniform(-0.08, 0.08, size=shape)
            return torch.nn.Parameter(torch.tensor(arr, dtype=DTYPE))

        self.params = torch.nn.ParameterDict()
        self.params["embed"] = torch.nn.Parameter(embed_init.detach().clone().to(DTYPE))
        for prefix in ("src_fwd", "src_bwd", "hyp_fwd", "hyp_bwd"):
            for name, param in _gru_params(rng, embed_dim, eh).items():
                self.params[f"{prefix}/{name}"] = param
        for name, param in _gru_params(rng, 4 * eh + n_actions, sh).items():
            self.params[f"top/{name}"] = param
        self.params["out/weight"] = tensor(n_actions, sh)
        self.params["out/bias"] = tensor(n_actions)

        self.state = torch.zeros(sh, dtype=DTYPE)
        self.prev_dist = self.uniform_distribution()

    def uniform_distribution(self) -> tuple[float, ...]:
        n = len(self.config.action_set)
        return tuple([1.0 / n] * n)

    def reset_state(self) -> None:
        self.state = torch.zeros(self.config.state_hidden, dtype=DTYPE)
        self.prev_dist = self.uniform_distribution()

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {name: p for name, p in self.params.items()}

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {name: p.detach().clone() for name, p in self.params.items()}

    def restore(self, snap: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name, p in self.params.items():
                p.copy_(snap[name])

    # -- forward pieces -------------------------------------------------------

    def _encode_pair(self, fwd_prefix: str, bwd_prefix: str, ids_batch: list[tuple[int, ...]]):
        """Final bidirectional states for a padded batch of id tuples, (B, 2*eh)."""
        b = len(ids_batch)
        # an empty hypothesis is encoded as a lone EOS so the scan has one step
        rows = [ids if ids else (EOS,) for ids in ids_batch]
        s = max(len(r) for r in rows)
        ids = torch.zeros(b, s, dtype=torch.long)
        mask = torch.zeros(b, s, dtype=torch.bool)
        for i, r in enumerate(rows):
            ids[i, : len(r)] = torch.tensor(r, dtype=torch.long)
            mask[i, : len(r)] = True
        emb = self.params["embed"][ids]

        def scan(prefix, emb_in):
            h = emb_in.new_zeros(b, self.config.encoder_hidden)
            for t in range(s):
                h_new = gru_step(self.params, prefix, emb_in[:, t], h)
                h = torch.where(mask[:, t : t + 1], h_new, h)
            return h

        lengths = mask.sum(dim=1)
        pos = torch.arange(s)
        rev_idx = torch.where(pos < lengths[:, None], lengths[:, None] - 1 - pos, pos)
        emb_rev = torch.gather(emb, 1, rev_idx[..., None].expand_as(emb))
        return torch.cat([scan(fwd_prefix, emb), scan(bwd_prefix, emb_rev)], dim=-1)

    def _scores(
        self,
        x_batch: list[tuple[int, ...]],
        hyp_batch: list[tuple[int, ...]],
        prev_dists: torch.Tensor,
        states_in: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        src_enc = self._encode_pair("src_fwd", "src_bwd", x_batch)
        hyp_enc = self._encode_pair("hyp_fwd", "hyp_bwd", hyp_batch)
        cell_in = torch.cat([src_enc, hyp_enc, prev_dists], dim=-1)
        states_out = gru_step(self.params, "top", cell_in, states_in)
        scores = states_out @ self.params["out/weight"].T + self.params["out/bias"]
        return scores, states_out

    # -- decision and policy gradient -----------------------------------------

    def decide(
        self, x_ids: tuple[int, ...], hyp_ids: tuple[int, ...], rng: np.random.Generator
    ) -> tuple[PolicyDecision, DecisionRecord]:
        """Sample one action; advances and persists the recurrent state."""
        prev = torch.tensor([self.prev_dist], dtype=DTYPE)
        state_in = self.state.detach().clone()
        with torch.no_grad():
            scores, state_out = self._scores([x_ids], [hyp_ids], prev, state_in.unsqueeze(0))
            log_dist = torch.log_softmax(scores[0], dim=-1)
        dist = log_dist.exp().numpy()
        p = dist / dist.sum()
        idx = int(rng.choice(len(p), p=p))
        decision = PolicyDecision(
            action=self.config.action_set[idx],
            logprob=float(log_dist[idx]),
            distribution=tuple(float(v) for v in dist),
        )
        record = DecisionRecord(
            x_ids=tuple(x_ids),
            hyp_ids=tuple(hyp_ids),
            prev_dist=tuple(self.prev_dist),
            state_in=state_in,
            action_index=idx,
        )
        self.state = state_out[0].detach().clone()
        self.prev_dist = decision.distribution
        return decision, record

    def replay_logprobs(self, records: list[DecisionRecord]) -> torch.Tensor:
        """Log-probabilities of the sampled actions, recomputed with gradient
        tracking against the recorded (frozen) recurrent inputs."""
        prev = torch.tensor([r.prev_dist for r in records], dtype=DTYPE)
        states_in = torch.stack([r.state_in for r in records])
        scores, _ = self._scores(
            [r.x_ids for r in records], [r.hyp_ids for r in records], prev, states_in
        )
        log_dist = torch.log_softmax(scores, dim=-1)
        actions = torch.tensor([r.action_index for r in records], dtype=torch.long)
        return log_dist.gather(1, actions[:, None]).squeeze(1)


class RegulatorPolicy:
    """Loop adapter: sequential decisions per item, one policy-gradient
    ascent step per batch (skipped when frozen for domain transfer)."""

    def __init__(
        self,
        model: RegulatorModel,
        rng: np.random.Generator,
        trainable: bool = True,
        optimizer: str = "adam",
    ):
        from .learner import OptimizerState, accumulate_and_update

        self.model = model
        self.rng = rng
        self.trainable = trainable
        self.optimizer = optimizer
        self.opt_state = OptimizerState.fresh(model, model.config.learning_rate)
        self._update = accumulate_and_update
        self._records: list[DecisionRecord] = []
        names = "".join(a.value[0] for a in model.config.action_set)
        self.name = f"regulator-{names}" + ("" if trainable else "-frozen")

    def choose(self, items, learner_model) -> list[FeedbackType]:
        # records queue up until the batch improvement arrives in observe;
        # items may be chosen one at a time (the session service) or per batch
        actions = []
        for item in items:
            decision, record = self.model.decide(
                tuple(item.example.source.ids), tuple(item.hyp.content_ids()), self.rng
            )
            self._records.append(record)
            actions.append(decision.action)
        return actions

    def observe(self, actions, costs, delta, alpha) -> None:
        if len(self._records) < len(costs):
            raise LearnerError("more costs than recorded decisions")
        records = self._records[: len(costs)]
        del self._records[: len(costs)]
        if not self.trainable:
            return
        ascent = regulator_grad(self.model, records, list(costs), delta, alpha)
        descent = {name: -g for name, g in ascent.items()}
        self._update(self.model, self.opt_state, [descent], optimizer=self.optimizer)

    def state_dict(self) -> dict:
        return {
            "policy": self.name,
            "trainable": self.trainable,
            "action_set": [a.value for a in self.model.config.action_set],
        }


def regulator_grad(
    model: RegulatorModel,
    records: list[DecisionRecord],
    costs: list[float],
    delta: float,
    alpha: float,
) -> dict[str, torch.Tensor]:
    """Mini-batch policy gradient (ascent direction):
    delta * (1/B) * sum_i grad log q(s_i | x_i, hyp_i) / (cost_i + alpha)."""
    if not records:
        raise LearnerError("empty decision batch")
    if len(costs) != len(records):
        raise LearnerError("costs and records length mismatch")
    logq = model.replay_logprobs(records)
    inv_costs = torch.tensor([1.0 / (c + alpha) for c in costs], dtype=DTYPE)
    objective = (logq * inv_costs).sum()
    names = list(model.params.keys())
    tensors = [model.params[n] for n in names]
    grads = torch.autograd.grad(objective, tensors, allow_unused=True)
    scale = delta / len(records)
    return {
        n: (scale * g.detach() if g is not None else torch.zeros_like(p))
        for n, p, g in zip(names, tensors, grads)
    }
