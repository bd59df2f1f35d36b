"""HTTP/JSON session service for live (or simulated) teachers.

One session drives the interactive loop over a stream: the server picks the
feedback type to request per item, the client answers with markings, a
corrected text, or a skip, and the server computes all costs
authoritatively from the submitted artifacts. Every state transition is
append-logged; replaying the event log reconstructs the session.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import torch
from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from .costs import CostLedger, FeedbackType
from .data import load_parallel, load_vocabulary, tokenize
from .decoding import Hypothesis
from .feedback import char_edit_cost, load_pregenerated, pregenerate_targets
from .learner import (
    OptimizerState,
    TokenWeights,
    accumulate_and_update,
    mean_weighted_gradient,
    prepare_item,
)
from .loop import StreamItem
from .metrics import evaluate
from .persist import load_learner, load_regulator
from .policies import EpsilonGreedyPolicy, FixedPolicy, parse_action_set
from .regulator import RegulatorConfig, RegulatorModel, RegulatorPolicy
from .rng import substream
from .runlog import RunRecord


class SessionConfig(BaseModel):
    data_dir: str
    learner_checkpoint: str
    domain_id: int = 1
    split: str = "train"
    regulator_checkpoint: str | None = None
    action_set: str = "reg3"
    policy: str | None = None  # fixed-* or epsilon-greedy; overrides the regulator
    epsilon: float = 0.1
    batch_size: int = 8
    alpha: float = 1.0
    learner_lr: float = 5e-4
    seed: int = 0
    n_items: int | None = None  # cap the stream, mainly for tests
    pregen: str | None = None
    mode: Literal["simulated", "human"] = "human"


class CreateSessionRequest(BaseModel):
    config: SessionConfig
    client_token: str | None = None


class FeedbackSubmission(BaseModel):
    session_id: str
    item_id: int
    kind: Literal["marking", "correction", "skip"]
    marking: list[bool] | None = None
    corrected_text: str | None = None
    client_edit_count: int | None = None


KIND_FOR_ACTION = {
    FeedbackType.FULL: "correction",
    FeedbackType.WEAK: "marking",
    FeedbackType.SELF: "skip",
    FeedbackType.NONE: "skip",
}


@dataclass
class PendingItem:
    item_id: int
    example_index: int
    action: FeedbackType
    distribution: tuple[float, ...]
    hyp: Hypothesis


@dataclass
class Session:
    session_id: str
    config: SessionConfig
    vocab: object
    stream: list
    pregen: dict[int, Hypothesis]
    dev: list
    model: object
    policy: object
    opt_state: OptimizerState
    lock: threading.Lock = field(default_factory=threading.Lock)
    cursor: int = 0
    pending: PendingItem | None = None
    ledger: CostLedger = field(default_factory=CostLedger)
    records: list[RunRecord] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    batch_actions: list[FeedbackType] = field(default_factory=list)
    batch_costs: list[float] = field(default_factory=list)
    batch_responses: list = field(default_factory=list)
    batch_items: list = field(default_factory=list)
    val_before: float = 0.0
    iteration: int = 0

    def log(self, event: dict) -> None:
        self.events.append(event)


def _build_session(session_id: str, config: SessionConfig) -> Session:
    torch.set_num_threads(1)
    data_dir = Path(config.data_dir)
    vocab_path = data_dir / "vocab.txt"
    if not vocab_path.exists():
        raise HTTPException(status_code=400, detail=f"config.data_dir: missing {vocab_path}")
    vocab = load_vocabulary(vocab_path)

    def domain(split: str):
        src = data_dir / f"domain{config.domain_id}.{split}.src"
        trg = data_dir / f"domain{config.domain_id}.{split}.trg"
        if not src.exists() or not trg.exists():
            raise HTTPException(status_code=400, detail=f"config.domain_id: missing {src}")
        examples, _ = load_parallel(src, trg, "whitespace", vocab)
        return examples

    try:
        model = load_learner(config.learner_checkpoint)
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"config.learner_checkpoint: {exc}") from exc

    stream = domain(config.split)
    if config.n_items is not None:
        stream = stream[: config.n_items]
    dev = domain("dev")
    if config.pregen and Path(config.pregen).exists():
        pregen = load_pregenerated(config.pregen)
    else:
        pregen = pregenerate_targets(model, stream)

    rng = substream(config.seed, "action-sampling")
    if config.policy:
        if config.policy.startswith("fixed-"):
            policy = FixedPolicy(FeedbackType.from_name(config.policy[len("fixed-"):]))
        elif config.policy == "epsilon-greedy":
            policy = EpsilonGreedyPolicy(parse_action_set(config.action_set), config.epsilon, rng)
        else:
            raise HTTPException(status_code=400, detail=f"config.policy: unknown {config.policy!r}")
    elif config.regulator_checkpoint:
        try:
            regulator = load_regulator(config.regulator_checkpoint)
        except Exception as exc:
            raise HTTPException(
                status_code=400, detail=f"config.regulator_checkpoint: {exc}"
            ) from exc
        regulator.reset_state()
        policy = RegulatorPolicy(regulator, rng)
    else:
        regulator = RegulatorModel(
            RegulatorConfig(
                action_set=parse_action_set(config.action_set),
                alpha=config.alpha,
            ),
            embed_init=model.params["src_embed"],
            seed=config.seed,
        )
        policy = RegulatorPolicy(regulator, rng)

    session = Session(
        session_id=session_id,
        config=config,
        vocab=vocab,
        stream=stream,
        pregen=pregen,
        dev=dev,
        model=model,
        policy=policy,
        opt_state=OptimizerState.fresh(model, config.learner_lr),
    )
    session.val_before = evaluate(model, dev, "greedy").bleu
    session.log({"type": "session_created", "config": config.model_dump()})
    return session


def _serve_next(session: Session) -> dict:
    if session.pending is not None:
        raise HTTPException(status_code=409, detail="pending item awaits feedback")
    if session.cursor >= len(session.stream):
        return {"end_of_stream": True}
    example = session.stream[session.cursor]
    hyp = session.pregen[example.id]
    item = StreamItem(example=example, hyp=hyp)
    actions = session.policy.choose([item], session.model)
    action = actions[0]
    # after a regulator decision, prev_dist is the softmax it was sampled from;
    # baseline policies have no distribution to report
    distribution: tuple[float, ...] = ()
    if hasattr(session.policy, "model") and hasattr(session.policy.model, "prev_dist"):
        distribution = tuple(session.policy.model.prev_dist)
    session.pending = PendingItem(
        item_id=example.id,
        example_index=session.cursor,
        action=action,
        distribution=distribution,
        hyp=hyp,
    )
    hyp_seq = hyp.to_sequence(session.vocab)
    payload = {
        "item_id": example.id,
        "source_tokens": example.source.surface.split(),
        "hypothesis_tokens": hyp_seq.surface.split() if hyp_seq.surface else [],
        "requested": action.value,
        "distribution": list(distribution),
    }
    session.log({"type": "item_served", "item_id": example.id, "action": action.value})
    return payload


def _apply_submission(session: Session, submission: FeedbackSubmission) -> dict:
    pending = session.pending
    if pending is None:
        raise HTTPException(status_code=409, detail="no pending item")
    if submission.item_id != pending.item_id:
        raise HTTPException(
            status_code=422,
            detail=f"unknown item {submission.item_id}; pending item is {pending.item_id}",
        )
    expected_kind = KIND_FOR_ACTION[pending.action]
    if submission.kind != expected_kind:
        raise HTTPException(
            status_code=422,
            detail=f"kind mismatch: requested {pending.action.value} needs {expected_kind}",
        )

    example = session.stream[pending.example_index]
    hyp_seq = pending.hyp.to_sequence(session.vocab)
    n_hyp = len(hyp_seq.ids)

    if submission.kind == "marking":
        if submission.marking is None or len(submission.marking) != n_hyp:
            got = 0 if submission.marking is None else len(submission.marking)
            raise HTTPException(
                status_code=422,
                detail=f"marking length mismatch: expected {n_hyp}, got {got}",
            )
        cost = float(sum(submission.marking))
        target = hyp_seq
        weights = TokenWeights(values=tuple(1.0 if m else 0.0 for m in submission.marking))
        dropout = None
    elif submission.kind == "correction":
        if submission.corrected_text is None or not submission.corrected_text.split():
            raise HTTPException(status_code=422, detail="correction needs corrected_text")
        cost = float(char_edit_cost(hyp_seq.surface, submission.corrected_text))
        target = tokenize(submission.corrected_text, "whitespace", session.vocab)
        weights = TokenWeights.ones(len(target.ids))
        dropout = None
    else:  # skip
        cost = 0.0
        target = hyp_seq
        if pending.action is FeedbackType.SELF:
            weights = TokenWeights.ones(n_hyp)
            dropout = session.model.config.p_att
        else:
            weights = TokenWeights.zeros(n_hyp)
            dropout = None

    # all validation passed; mutate state now
    session.ledger.add(pending.action, cost)
    session.batch_actions.append(pending.action)
    session.batch_costs.append(cost)
    session.batch_responses.append((target, weights, dropout))
    session.batch_items.append(example)
    session.log(
        {
            "type": "feedback_accepted",
            "item_id": pending.item_id,
            "kind": submission.kind,
            "cost": cost,
            "marking": submission.marking,
            "corrected_text": submission.corrected_text,
            "client_edit_count": submission.client_edit_count,
        }
    )
    session.pending = None
    session.cursor += 1

    result = {
        "accepted": True,
        "cost": cost,
        "cumulative_cost": session.ledger.total,
    }
    stream_done = session.cursor >= len(session.stream)
    if len(session.batch_actions) >= session.config.batch_size or (
        stream_done and session.batch_actions
    ):
        result["val_bleu"] = _run_batch_update(session)
    return result


def _run_batch_update(session: Session) -> float:
    session.iteration += 1
    items = []
    for example, (target, weights, dropout) in zip(session.batch_items, session.batch_responses):
        drop = None
        if dropout is not None and dropout > 0.0:
            from .rng import stream_key

            drop = (dropout, stream_key(f"drop/{session.config.seed}/{session.iteration}/{example.id}"))
        items.append(
            prepare_item(session.model, example.source.ids, target.ids, weights.values, drop)
        )
    grad = mean_weighted_gradient(session.model, items)
    accumulate_and_update(
        session.model,
        session.opt_state,
        [grad],
        optimizer="adam",
        betas=(session.model.config.adam_beta1, session.model.config.adam_beta2),
        eps=session.model.config.adam_eps,
    )
    val_after = evaluate(session.model, session.dev, "greedy").bleu
    delta = val_after - session.val_before
    session.policy.observe(
        session.batch_actions, session.batch_costs, delta, session.config.alpha
    )
    counts: dict[str, int] = {}
    for action in session.batch_actions:
        counts[action.value] = counts.get(action.value, 0) + 1
    session.records.append(
        RunRecord(
            j=session.iteration,
            cumulative_cost=session.ledger.total,
            val_bleu=val_after,
            delta=delta,
            action_counts=counts,
            wall_time=0.0,
        )
    )
    session.log(
        {
            "type": "batch_update",
            "j": session.iteration,
            "val_bleu": val_after,
            "delta": delta,
            "cumulative_cost": session.ledger.total,
        }
    )
    session.val_before = val_after
    session.batch_actions = []
    session.batch_costs = []
    session.batch_responses = []
    session.batch_items = []
    return val_after


def create_app() -> FastAPI:
    app = FastAPI(title="selfreg session service")
    app.state.sessions = {}
    app.state.tokens = {}
    app.state.counter = 0
    app.state.registry_lock = threading.Lock()

    def get_session(session_id: str) -> Session:
        session = app.state.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return session

    @app.post("/sessions")
    def create_session(request: CreateSessionRequest):
        with app.state.registry_lock:
            if request.client_token and request.client_token in app.state.tokens:
                session_id = app.state.tokens[request.client_token]
                return {"session_id": session_id, "cursor": app.state.sessions[session_id].cursor}
            app.state.counter += 1
            session_id = f"s{app.state.counter:04d}"
        session = _build_session(session_id, request.config)
        with app.state.registry_lock:
            app.state.sessions[session_id] = session
            if request.client_token:
                app.state.tokens[request.client_token] = session_id
        return {"session_id": session_id, "cursor": session.cursor}

    @app.get("/sessions/{session_id}/next")
    def next_item(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return _serve_next(session)

    @app.post("/sessions/{session_id}/feedback")
    def submit_feedback(session_id: str, submission: FeedbackSubmission):
        session = get_session(session_id)
        if submission.session_id != session_id:
            raise HTTPException(status_code=422, detail="session id mismatch")
        with session.lock:
            return _apply_submission(session, submission)

    @app.get("/sessions/{session_id}/metrics")
    def get_metrics(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return {
                "records": [json.loads(rec.to_json()) for rec in session.records],
                "ledger": {
                    "total": session.ledger.total,
                    "per_type": session.ledger.costs_by_name(),
                    "per_type_counts": session.ledger.counts_by_name(),
                },
                "cursor": session.cursor,
                "pending_item": session.pending.item_id if session.pending else None,
                "val_bleu": session.val_before,
            }

    @app.get("/sessions/{session_id}/export")
    def export_events(session_id: str):
        session = get_session(session_id)
        with session.lock:
            body = "".join(json.dumps(e, sort_keys=True) + "\n" for e in session.events)
        return PlainTextResponse(body, media_type="application/jsonl")

    return app


# --------------------------------------------------------------------------
# Simulated teacher and event replay
# --------------------------------------------------------------------------

class SimulatedTeacher:
    """Builds submissions from references, driving the same endpoints a
    human client would."""

    def __init__(self, examples: list, vocab):
        self.references = {ex.id: ex.reference for ex in examples}
        self.vocab = vocab

    def respond(self, session_id: str, payload: dict) -> dict:
        from .feedback import mark_correct

        item_id = payload["item_id"]
        requested = payload["requested"]
        hyp_tokens = payload["hypothesis_tokens"]
        ref = self.references[item_id]
        if requested == "full":
            return {
                "session_id": session_id,
                "item_id": item_id,
                "kind": "correction",
                "corrected_text": ref.surface,
                "client_edit_count": char_edit_cost(" ".join(hyp_tokens), ref.surface),
            }
        if requested == "weak":
            marking = (
                list(mark_correct(hyp_tokens, ref.surface.split()).marked) if hyp_tokens else []
            )
            return {
                "session_id": session_id,
                "item_id": item_id,
                "kind": "marking",
                "marking": marking,
            }
        return {"session_id": session_id, "item_id": item_id, "kind": "skip"}


def replay_events(events: list[dict]) -> Session:
    """Rebuild a session by replaying its event log through the same
    transition logic; raises if the log diverges from what the handlers do."""
    if not events or events[0]["type"] != "session_created":
        raise ValueError("event log must start with session_created")
    session = _build_session("replay", SessionConfig(**events[0]["config"]))
    for event in events[1:]:
        if event["type"] == "item_served":
            payload = _serve_next(session)
            if payload.get("item_id") != event["item_id"]:
                raise ValueError(
                    f"replay divergence: served {payload.get('item_id')}, log has {event['item_id']}"
                )
        elif event["type"] == "feedback_accepted":
            submission = FeedbackSubmission(
                session_id="replay",
                item_id=event["item_id"],
                kind=event["kind"],
                marking=event.get("marking"),
                corrected_text=event.get("corrected_text"),
                client_edit_count=event.get("client_edit_count"),
            )
            _apply_submission(session, submission)
        elif event["type"] == "batch_update":
            continue  # implied by feedback_accepted
        elif event["type"] == "session_created":
            raise ValueError("duplicate session_created event")
    return session
