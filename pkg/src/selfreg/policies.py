"""Feedback-choice policies: presets, reward, the epsilon-greedy bandit,
uncertainty-based active learning, and fixed single-type baselines.

Policies share one interface: `choose` maps a mini-batch of (example,
hypothesis) items to actions, `observe` feeds back the batch improvement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .costs import FeedbackType
from .learner import avg_token_entropy

ACTION_PRESETS = {
    "reg2": (FeedbackType.FULL, FeedbackType.WEAK),
    "reg3": (FeedbackType.FULL, FeedbackType.WEAK, FeedbackType.SELF),
    "reg4": (FeedbackType.FULL, FeedbackType.WEAK, FeedbackType.SELF, FeedbackType.NONE),
}


def parse_action_set(text: str) -> tuple[FeedbackType, ...]:
    """Accepts a preset name (Reg2/Reg3/Reg4) or a comma list of type names."""
    key = text.strip().lower()
    if key in ACTION_PRESETS:
        return ACTION_PRESETS[key]
    actions = tuple(FeedbackType.from_name(part) for part in key.split(",") if part.strip())
    if not actions or len(set(actions)) != len(actions):
        raise ValueError(f"invalid action set: {text!r}")
    return actions


def reward(delta: float, cost: float, alpha: float) -> float:
    """Improvement per unit of (smoothed) effort."""
    if cost < 0:
        raise ValueError("negative cost")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    return delta / (cost + alpha)


# --------------------------------------------------------------------------
# Epsilon-greedy bandit
# --------------------------------------------------------------------------

@dataclass
class BanditState:
    arms: tuple[FeedbackType, ...]
    epsilon: float
    counts: dict[FeedbackType, int] = field(default_factory=dict)
    means: dict[FeedbackType, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        for arm in self.arms:
            self.counts.setdefault(arm, 0)
            self.means.setdefault(arm, 0.0)


def bandit_choose(state: BanditState, rng: np.random.Generator) -> FeedbackType:
    """Exploit the best arm w.p. 1-eps, otherwise explore uniformly among the
    other arms. Arms never rewarded yet are forced first, in arm order."""
    unpulled = [a for a in state.arms if state.counts[a] == 0]
    if unpulled:
        return unpulled[0]
    best = max(state.arms, key=lambda a: (state.means[a], -state.arms.index(a)))
    others = [a for a in state.arms if a is not best]
    if not others:
        return best
    if rng.random() < state.epsilon:
        return others[int(rng.integers(len(others)))]
    return best


def bandit_update(state: BanditState, arm: FeedbackType, observed: float) -> BanditState:
    """Incremental mean update for one observed reward."""
    if arm not in state.counts:
        raise ValueError(f"arm {arm} not in action set")
    state.counts[arm] += 1
    state.means[arm] += (observed - state.means[arm]) / state.counts[arm]
    return state


# --------------------------------------------------------------------------
# Active learning selection
# --------------------------------------------------------------------------

def uncertainty_select(entropies: list[float], gamma: float) -> set[int]:
    """Indices of the ceil(gamma*B) highest-entropy items; ties to lower index."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    k = math.ceil(gamma * len(entropies))
    order = sorted(range(len(entropies)), key=lambda i: (-entropies[i], i))
    return set(order[:k])


# --------------------------------------------------------------------------
# Loop-facing policy adapters
# --------------------------------------------------------------------------

class FixedPolicy:
    """Always request the same feedback type."""

    def __init__(self, action: FeedbackType):
        self.action = action
        self.name = f"fixed-{action.value}"

    def choose(self, items, model) -> list[FeedbackType]:
        return [self.action] * len(items)

    def observe(self, actions, costs, delta, alpha) -> None:
        pass

    def state_dict(self) -> dict:
        return {"policy": self.name}


class EpsilonGreedyPolicy:
    """Context-free bandit over feedback types; batch improvement is
    attributed to every item of the batch."""

    def __init__(self, action_set: tuple[FeedbackType, ...], epsilon: float, rng: np.random.Generator):
        self.state = BanditState(arms=action_set, epsilon=epsilon)
        self.rng = rng
        self.name = f"epsilon-greedy-{epsilon}"
        self._forced = {a: False for a in action_set}

    def choose(self, items, model) -> list[FeedbackType]:
        actions = []
        for _ in items:
            pending = [a for a in self.state.arms if not self._forced[a]]
            if pending:
                # cold start: pull each arm once, in arm order, before greedy
                action = pending[0]
                self._forced[action] = True
            else:
                action = bandit_choose(self.state, self.rng)
            actions.append(action)
        return actions

    def observe(self, actions, costs, delta, alpha) -> None:
        for action, cost in zip(actions, costs):
            bandit_update(self.state, action, reward(delta, cost, alpha))

    def state_dict(self) -> dict:
        return {
            "policy": self.name,
            "epsilon": self.state.epsilon,
            "counts": {a.value: self.state.counts[a] for a in self.state.arms},
            "means": {a.value: self.state.means[a] for a in self.state.arms},
        }


class ActiveLearningPolicy:
    """Full feedback for the gamma fraction of highest-entropy items per
    batch, skip for the rest."""

    def __init__(self, gamma: float):
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        self.gamma = gamma
        self.name = f"active-learning-{gamma}"

    def choose(self, items, model) -> list[FeedbackType]:
        entropies = [
            avg_token_entropy(model, item.example.source.ids, item.hyp.ids) for item in items
        ]
        selected = uncertainty_select(entropies, self.gamma)
        return [
            FeedbackType.FULL if i in selected else FeedbackType.NONE
            for i in range(len(items))
        ]

    def observe(self, actions, costs, delta, alpha) -> None:
        pass

    def state_dict(self) -> dict:
        return {"policy": self.name, "gamma": self.gamma}
