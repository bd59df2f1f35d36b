"""Streaming orchestration: feedback acquisition, mini-batch learner
updates, improvement measurement, policy updates, early stopping, and
pretraining.

Per mini-batch: every input gets a feedback decision and a response at some
cost, the learner takes one step on the averaged weighted gradients, the
held-out score is re-measured (greedy decoding), and the improvement drives
the policy update. The checkpoint with the best held-out score wins.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .costs import CostLedger, FeedbackType
from .data import ParallelExample, Vocabulary
from .decoding import Hypothesis
from .feedback import provide_feedback
from .learner import (
    OptimizerState,
    Seq2SeqModel,
    accumulate_and_update,
    mean_weighted_gradient,
    prepare_item,
)
from .metrics import evaluate
from .rng import restore_rng, rng_state, stream_key, substream
from .runlog import RunLog, RunRecord


class LoopError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    alpha: float = 1.0
    learner_lr: float = 5e-4
    max_epochs: int = 1
    eval_cadence: int = 1  # >1 skews rewards; experimental
    budget_cap: float | None = None
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size < 1:
            raise LoopError("batch_size must be >= 1")
        if self.alpha <= 0:
            raise LoopError("alpha must be > 0")
        if self.eval_cadence < 1:
            raise LoopError("eval_cadence must be >= 1")


@dataclass(frozen=True)
class StreamItem:
    example: ParallelExample
    hyp: Hypothesis


@dataclass
class RunResult:
    runlog: RunLog
    ledger: CostLedger
    item_log: list[dict]
    best_val: float
    best_iteration: int
    best_params: dict[str, torch.Tensor]
    final_val: float
    iterations: int = 0
    opt_state: OptimizerState = field(repr=False, default=None)


def _batches(stream: list[ParallelExample], batch_size: int, max_epochs: int):
    for _ in range(max_epochs):
        for start in range(0, len(stream), batch_size):
            yield stream[start : start + batch_size]


def _grad_items(model, batch_items, responses, p_att, seed, iteration):
    out = []
    for item, resp in zip(batch_items, responses):
        dropout = None
        if resp.dropout is not None and resp.dropout > 0.0:
            drop_seed = stream_key(f"drop/{seed}/{iteration}/{item.example.id}")
            dropout = (resp.dropout, drop_seed)
        out.append(
            prepare_item(
                model,
                item.example.source.ids,
                resp.target.ids,
                resp.weights.values,
                dropout,
            )
        )
    return out


def run_stream(
    model: Seq2SeqModel,
    policy,
    stream: list[ParallelExample],
    pregen: dict[int, Hypothesis],
    dev: list[ParallelExample],
    config: TrainConfig,
    vocab: Vocabulary,
    p_att: float | None = None,
    resume: RunResult | None = None,
    max_batches: int | None = None,
) -> RunResult:
    """Drive one run of the interactive loop with any feedback policy.

    The policy sees (example, pre-generated hypothesis) items, returns one
    action per item, and observes the batch improvement afterwards. Passing
    a previous RunResult as `resume` (with model and policy state restored)
    continues the identical trajectory.
    """
    if not stream:
        raise LoopError("empty stream")
    for ex in stream:
        if ex.id not in pregen:
            raise LoopError(f"no pre-generated hypothesis for example id {ex.id}")
    if p_att is None:
        p_att = model.config.p_att

    torch.set_num_threads(1)  # keep reruns bit-identical
    if resume is None:
        ledger = CostLedger()
        opt_state = OptimizerState.fresh(model, config.learner_lr)
        runlog = RunLog(policy=getattr(policy, "name", "unknown"), seed=config.seed)
        item_log: list[dict] = []
        val_before = evaluate(model, dev, "greedy").bleu
        best_val, best_iter, best_params = val_before, 0, model.snapshot()
        done_batches = 0
    else:
        ledger = resume.ledger
        opt_state = resume.opt_state
        runlog = resume.runlog
        item_log = resume.item_log
        val_before = resume.final_val
        best_val, best_iter = resume.best_val, resume.best_iteration
        best_params = resume.best_params
        done_batches = resume.iterations

    start_time = time.perf_counter()
    j = done_batches
    taken = 0
    stopped = False
    for batch_index, batch in enumerate(_batches(stream, config.batch_size, config.max_epochs)):
        if batch_index < done_batches:
            continue
        if max_batches is not None and taken >= max_batches:
            break
        taken += 1
        j += 1
        items = [StreamItem(example=ex, hyp=pregen[ex.id]) for ex in batch]
        actions = policy.choose(items, model)
        responses = [
            provide_feedback(action, item.example, item.hyp, p_att, vocab)
            for action, item in zip(actions, items)
        ]
        costs = [resp.cost for resp in responses]
        for action, cost, item in zip(actions, costs, items):
            ledger.add(action, cost)
            item_log.append(
                {"j": j, "id": item.example.id, "action": action.value, "cost": cost}
            )

        grad = mean_weighted_gradient(
            model, _grad_items(model, items, responses, p_att, config.seed, j)
        )
        accumulate_and_update(
            model,
            opt_state,
            [grad],
            optimizer=config.optimizer,
            betas=(model.config.adam_beta1, model.config.adam_beta2),
            eps=model.config.adam_eps,
        )

        if j % config.eval_cadence == 0:
            val_after = evaluate(model, dev, "greedy").bleu
            delta = val_after - val_before
            policy.observe(actions, costs, delta, config.alpha)
            counts: dict[str, int] = {}
            for action in actions:
                counts[action.value] = counts.get(action.value, 0) + 1
            runlog.append(
                RunRecord(
                    j=j,
                    cumulative_cost=ledger.total,
                    val_bleu=val_after,
                    delta=delta,
                    action_counts=counts,
                    wall_time=time.perf_counter() - start_time,
                )
            )
            if val_after > best_val:
                best_val, best_iter, best_params = val_after, j, model.snapshot()
            val_before = val_after

        if config.budget_cap is not None and ledger.total >= config.budget_cap:
            stopped = True
        if stopped:
            break

    return RunResult(
        runlog=runlog,
        ledger=ledger,
        item_log=item_log,
        best_val=best_val,
        best_iteration=best_iter,
        best_params=best_params,
        final_val=val_before,
        iterations=j,
        opt_state=opt_state,
    )


def run_regulated(model, regulator_policy, stream, pregen, dev, config, vocab) -> RunResult:
    """Algorithm loop with the neural regulator choosing feedback types."""
    regulator_policy.model.reset_state()
    return run_stream(model, regulator_policy, stream, pregen, dev, config, vocab)


def run_baseline(model, policy, stream, pregen, dev, config, vocab) -> RunResult:
    """Same loop with a fixed-type, bandit, or active-learning policy."""
    return run_stream(model, policy, stream, pregen, dev, config, vocab)


def run_transfer(model, frozen_regulator_policy, stream, pregen, dev, config, vocab) -> RunResult:
    """Frozen trained regulator steering a reset learner on a new domain."""
    if frozen_regulator_policy.trainable:
        raise LoopError("transfer requires a frozen regulator policy")
    frozen_regulator_policy.model.reset_state()
    return run_stream(model, frozen_regulator_policy, stream, pregen, dev, config, vocab)


# --------------------------------------------------------------------------
# Run checkpoints
# --------------------------------------------------------------------------

def save_run_checkpoint(path, model: Seq2SeqModel, policy, result: RunResult) -> None:
    """Persist everything needed to continue a run: learner params and
    optimizer, policy state (regulator tensors and recurrent state, or
    bandit statistics), ledger, RNG states, and the best-so-far marker."""
    from . import checkpoint
    from .regulator import RegulatorPolicy

    tensors: dict[str, torch.Tensor] = {}
    for name, p in model.params.items():
        tensors[f"learner/{name}"] = p
    for name, p in result.best_params.items():
        tensors[f"best/{name}"] = p
    for name, t in result.opt_state.m.items():
        tensors[f"opt_m/{name}"] = t
    for name, t in result.opt_state.v.items():
        tensors[f"opt_v/{name}"] = t

    policy_blob: dict = {"kind": type(policy).__name__, "state": policy.state_dict()}
    if isinstance(policy, RegulatorPolicy):
        for name, p in policy.model.params.items():
            tensors[f"reg/{name}"] = p
        for name, t in policy.opt_state.m.items():
            tensors[f"reg_opt_m/{name}"] = t
        for name, t in policy.opt_state.v.items():
            tensors[f"reg_opt_v/{name}"] = t
        tensors["reg_state"] = policy.model.state
        policy_blob["prev_dist"] = list(policy.model.prev_dist)
        policy_blob["opt_step"] = policy.opt_state.step
        policy_blob["opt_lr"] = policy.opt_state.learning_rate
        policy_blob["rng"] = rng_state(policy.rng)
    elif hasattr(policy, "rng"):
        policy_blob["rng"] = rng_state(policy.rng)
        if hasattr(policy, "_forced"):
            policy_blob["forced"] = {a.value: v for a, v in policy._forced.items()}

    extra = {
        "iterations": result.iterations,
        "final_val": result.final_val,
        "best_val": result.best_val,
        "best_iteration": result.best_iteration,
        "opt_step": result.opt_state.step,
        "opt_lr": result.opt_state.learning_rate,
        "ledger_costs": result.ledger.costs_by_name(),
        "ledger_counts": result.ledger.counts_by_name(),
        "records": [rec.to_json() for rec in result.runlog.records],
        "runlog_policy": result.runlog.policy,
        "runlog_seed": result.runlog.seed,
        "item_log": result.item_log,
        "policy": policy_blob,
    }
    checkpoint.save(path, "run-state", {}, tensors, extra)


def load_run_checkpoint(path, model: Seq2SeqModel, policy) -> RunResult:
    """Restore model and policy state in place; returns the resume handle."""
    import json as _json

    from . import checkpoint
    from .regulator import RegulatorPolicy

    kind, _, tensors, extra = checkpoint.load(path)
    if kind != "run-state":
        raise LoopError(f"not a run checkpoint: {path}")
    model.restore({n[len("learner/"):]: t for n, t in tensors.items() if n.startswith("learner/")})
    best_params = {n[len("best/"):]: t for n, t in tensors.items() if n.startswith("best/")}
    opt_state = OptimizerState(
        step=extra["opt_step"],
        learning_rate=extra["opt_lr"],
        m={n[len("opt_m/"):]: t for n, t in tensors.items() if n.startswith("opt_m/")},
        v={n[len("opt_v/"):]: t for n, t in tensors.items() if n.startswith("opt_v/")},
    )

    blob = extra["policy"]
    if isinstance(policy, RegulatorPolicy):
        policy.model.restore(
            {n[len("reg/"):]: t for n, t in tensors.items() if n.startswith("reg/") and not n.startswith("reg_")}
        )
        policy.model.state = tensors["reg_state"].clone()
        policy.model.prev_dist = tuple(blob["prev_dist"])
        policy.opt_state = OptimizerState(
            step=blob["opt_step"],
            learning_rate=blob["opt_lr"],
            m={n[len("reg_opt_m/"):]: t for n, t in tensors.items() if n.startswith("reg_opt_m/")},
            v={n[len("reg_opt_v/"):]: t for n, t in tensors.items() if n.startswith("reg_opt_v/")},
        )
        policy.rng = restore_rng(blob["rng"])
    elif hasattr(policy, "rng"):
        policy.rng = restore_rng(blob["rng"])
        if "forced" in blob and hasattr(policy, "_forced"):
            policy._forced = {FeedbackType(k): v for k, v in blob["forced"].items()}
        if hasattr(policy, "state") and "counts" in blob.get("state", {}):
            for name, count in blob["state"]["counts"].items():
                policy.state.counts[FeedbackType(name)] = count
            for name, mean in blob["state"]["means"].items():
                policy.state.means[FeedbackType(name)] = mean

    ledger = CostLedger()
    for name, cost in extra["ledger_costs"].items():
        ledger.per_type[FeedbackType(name)] = cost
    for name, count in extra["ledger_counts"].items():
        ledger.per_type_counts[FeedbackType(name)] = count

    runlog = RunLog(policy=extra["runlog_policy"], seed=extra["runlog_seed"])
    for line in extra["records"]:
        rec = _json.loads(line)
        runlog.append(
            RunRecord(
                j=rec["j"],
                cumulative_cost=rec["cumulative_cost"],
                val_bleu=rec["val_bleu"],
                delta=rec["delta"],
                action_counts=rec["action_counts"],
                wall_time=rec["wall_time"],
            )
        )
    return RunResult(
        runlog=runlog,
        ledger=ledger,
        item_log=list(extra["item_log"]),
        best_val=extra["best_val"],
        best_iteration=extra["best_iteration"],
        best_params=best_params,
        final_val=extra["final_val"],
        iterations=extra["iterations"],
        opt_state=opt_state,
    )


# --------------------------------------------------------------------------
# Pretraining
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PretrainConfig:
    batch_size: int = 64
    learning_rate: float = 2e-3
    max_epochs: int = 40
    halve_patience: int = 3
    stop_patience: int = 6
    seed: int = 0
    optimizer: str = "adam"


def pretrain(
    model: Seq2SeqModel,
    train: list[ParallelExample],
    dev: list[ParallelExample],
    config: PretrainConfig,
) -> tuple[dict[str, torch.Tensor], list[dict]]:
    """Full-supervision training with halve-on-plateau and early stopping.

    The learning rate halves after every `halve_patience` consecutive
    non-improving validations; training stops after `stop_patience`. The
    model is left restored to (and the returned snapshot is) the best
    validation checkpoint.
    """
    if not train:
        raise LoopError("empty pretraining corpus")
    torch.set_num_threads(1)
    opt_state = OptimizerState.fresh(model, config.learning_rate)
    best_val = evaluate(model, dev, "greedy").bleu
    best_params = model.snapshot()
    history = [{"epoch": 0, "val_bleu": best_val, "learning_rate": opt_state.learning_rate}]
    bad_streak = 0

    for epoch in range(1, config.max_epochs + 1):
        order = np.arange(len(train))
        substream(config.seed, f"pretrain-order-{epoch}").shuffle(order)
        for start in range(0, len(train), config.batch_size):
            batch = [train[int(i)] for i in order[start : start + config.batch_size]]
            items = [
                prepare_item(model, ex.source.ids, ex.reference.ids, None, None)
                for ex in batch
            ]
            grad = mean_weighted_gradient(model, items)
            accumulate_and_update(
                model,
                opt_state,
                [grad],
                optimizer=config.optimizer,
                betas=(model.config.adam_beta1, model.config.adam_beta2),
                eps=model.config.adam_eps,
            )
        val = evaluate(model, dev, "greedy").bleu
        if val > best_val:
            best_val = val
            best_params = model.snapshot()
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak % config.halve_patience == 0:
                opt_state.learning_rate /= 2.0
        history.append(
            {"epoch": epoch, "val_bleu": val, "learning_rate": opt_state.learning_rate}
        )
        if bad_streak >= config.stop_patience:
            break

    model.restore(best_params)
    return best_params, history
