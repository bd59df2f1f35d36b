"""Save/load learner and regulator models through the checkpoint container."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch

from . import checkpoint
from .costs import FeedbackType
from .learner import LearnerConfig, Seq2SeqModel
from .regulator import RegulatorConfig, RegulatorModel


def save_learner(path: str | Path, model: Seq2SeqModel, extra: dict | None = None) -> None:
    checkpoint.save(path, "learner", asdict(model.config), model.named_tensors(), extra)


def load_learner(path: str | Path) -> Seq2SeqModel:
    kind, config, tensors, _ = checkpoint.load(path)
    if kind != "learner":
        raise checkpoint.CheckpointError(f"expected a learner checkpoint, found {kind!r}: {path}")
    model = Seq2SeqModel(LearnerConfig(**config), seed=0)
    model.restore(tensors)
    return model


def save_regulator(path: str | Path, model: RegulatorModel, extra: dict | None = None) -> None:
    config = asdict(model.config)
    config["action_set"] = [a.value for a in model.config.action_set]
    tensors = dict(model.named_tensors())
    tensors["state"] = model.state
    payload = dict(extra or {})
    payload["prev_dist"] = list(model.prev_dist)
    checkpoint.save(path, "regulator", config, tensors, payload)


def load_regulator(path: str | Path) -> RegulatorModel:
    kind, config, tensors, extra = checkpoint.load(path)
    if kind != "regulator":
        raise checkpoint.CheckpointError(f"expected a regulator checkpoint, found {kind!r}: {path}")
    config = dict(config)
    config["action_set"] = tuple(FeedbackType(v) for v in config["action_set"])
    state = tensors.pop("state")
    embed = tensors["embed"]
    model = RegulatorModel(RegulatorConfig(**config), embed_init=torch.zeros_like(embed), seed=0)
    model.restore(tensors)
    model.state = state.clone()
    model.prev_dist = tuple(extra["prev_dist"])
    return model
