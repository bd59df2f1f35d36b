"""Command-line entry points.

Every command takes a flat key=value config file plus --set overrides,
rejects unknown keys, and echoes the resolved config into its output
directory so a run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import torch

from .costs import FeedbackType
from .data import (
    Vocabulary,
    family_vocabulary,
    gen_synthetic,
    load_parallel,
    load_vocabulary,
    make_task_family,
    save_vocabulary,
    write_parallel,
)
from .feedback import load_pregenerated, pregenerate_targets, save_pregenerated
from .learner import LearnerConfig, Seq2SeqModel
from .loop import PretrainConfig, TrainConfig, pretrain, run_baseline, run_regulated, run_transfer
from .metrics import evaluate
from .persist import load_learner, load_regulator, save_learner, save_regulator
from .policies import ActiveLearningPolicy, EpsilonGreedyPolicy, FixedPolicy, parse_action_set
from .regulator import RegulatorConfig, RegulatorModel, RegulatorPolicy
from .rng import substream
from .runlog import export_curve_csv, read_records, write_item_log


class ConfigError(ValueError):
    pass


REQUIRED = object()


def _bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.lower() in ("none", "") else float(text)


@dataclass(frozen=True)
class Key:
    cast: Callable[[str], Any]
    default: Any


def parse_kv_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def resolve_config(schema: dict[str, Key], file_values: dict[str, str], overrides: dict[str, str]) -> dict:
    merged = dict(file_values)
    merged.update(overrides)
    unknown = sorted(set(merged) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    resolved: dict[str, Any] = {}
    for name, key in schema.items():
        if name in merged:
            resolved[name] = key.cast(merged[name])
        elif key.default is REQUIRED:
            raise ConfigError(f"missing required config key: {name}")
        else:
            resolved[name] = key.default
    return resolved


def echo_config(cfg: dict, out_dir: Path) -> None:
    lines = [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    (out_dir / "resolved.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_domain(data_dir: Path, domain_id: int, split: str, vocab: Vocabulary):
    src = data_dir / f"domain{domain_id}.{split}.src"
    trg = data_dir / f"domain{domain_id}.{split}.trg"
    for p in (src, trg):
        if not p.exists():
            raise ConfigError(f"missing input artifact: {p}")
    examples, _ = load_parallel(src, trg, "whitespace", vocab)
    return examples


def _load_vocab(data_dir: Path) -> Vocabulary:
    path = data_dir / "vocab.txt"
    if not path.exists():
        raise ConfigError(f"missing input artifact: {path}")
    return load_vocabulary(path)


def _stream_order(examples, seed: int):
    import numpy as np

    order = np.arange(len(examples))
    substream(seed, "stream-order").shuffle(order)
    return [examples[int(i)] for i in order]


def _pregen(model, stream, vocab, out_dir: Path, path_key):
    cache = Path(path_key) if path_key else out_dir / "pregen.jsonl"
    if cache.exists():
        pregen = load_pregenerated(cache)
        missing = [ex.id for ex in stream if ex.id not in pregen]
        if not missing:
            return pregen
    pregen = pregenerate_targets(model, stream)
    save_pregenerated(pregen, vocab, cache)
    return pregen


def _write_run_outputs(out_dir: Path, result, policy, learner_model) -> None:
    result.runlog.config_hash = ""
    result.runlog.write(out_dir / "runlog.jsonl")
    write_item_log(result.item_log, out_dir / "items.jsonl")
    export_curve_csv(result.runlog.records, out_dir / "curve.csv")
    save_learner(out_dir / "learner_final.json", learner_model)
    learner_model.restore(result.best_params)
    save_learner(out_dir / "learner_best.json", learner_model, extra={"best_iteration": result.best_iteration, "best_val": result.best_val})
    (out_dir / "policy_state.json").write_text(
        json.dumps(policy.state_dict(), sort_keys=True), encoding="utf-8"
    )


# --------------------------------------------------------------------------
# Command schemas and runners
# --------------------------------------------------------------------------

GEN_DATA_SCHEMA = {
    "lexicon_size": Key(int, 200),
    "reorder_window": Key(int, 1),
    "domain_id": Key(str, "all"),
    "seed": Key(int, 0),
    "n_domains": Key(int, 3),
    "shift_fraction": Key(float, 0.3),
    "n_train": Key(int, 5000),
    "n_dev": Key(int, 500),
    "n_test": Key(int, 500),
    "src_len_min": Key(int, 3),
    "src_len_max": Key(int, 9),
}


def cmd_gen_data(cfg: dict, out_dir: Path) -> None:
    specs = make_task_family(
        lexicon_size=cfg["lexicon_size"],
        reorder_window=cfg["reorder_window"],
        seed=cfg["seed"],
        n_domains=cfg["n_domains"],
        shift_fraction=cfg["shift_fraction"],
        src_len_range=(cfg["src_len_min"], cfg["src_len_max"]),
    )
    vocab = family_vocabulary(specs)
    save_vocabulary(vocab, out_dir / "vocab.txt")
    domains = range(cfg["n_domains"]) if cfg["domain_id"] == "all" else [int(cfg["domain_id"])]
    for d in domains:
        for split, n in (("train", cfg["n_train"]), ("dev", cfg["n_dev"]), ("test", cfg["n_test"])):
            examples = gen_synthetic(specs[d], n, vocab, stream_name=split)
            write_parallel(
                examples, out_dir / f"domain{d}.{split}.src", out_dir / f"domain{d}.{split}.trg"
            )


PRETRAIN_SCHEMA = {
    "data_dir": Key(str, REQUIRED),
    "domain_id": Key(int, 0),
    "embed_dim": Key(int, 32),
    "hidden_dim": Key(int, 64),
    "p_att": Key(float, 0.1),
    "max_decode_len": Key(int, 20),
    "beam_width": Key(int, 5),
    "batch_size": Key(int, 64),
    "learning_rate": Key(float, 2e-3),
    "max_epochs": Key(int, 40),
    "halve_patience": Key(int, 3),
    "stop_patience": Key(int, 6),
    "optimizer": Key(str, "adam"),
    "seed": Key(int, 0),
}


def cmd_pretrain(cfg: dict, out_dir: Path) -> None:
    data_dir = Path(cfg["data_dir"])
    vocab = _load_vocab(data_dir)
    train = _load_domain(data_dir, cfg["domain_id"], "train", vocab)
    dev = _load_domain(data_dir, cfg["domain_id"], "dev", vocab)
    model = Seq2SeqModel(
        LearnerConfig(
            src_vocab_size=vocab.size,
            trg_vocab_size=vocab.size,
            embed_dim=cfg["embed_dim"],
            hidden_dim=cfg["hidden_dim"],
            p_att=cfg["p_att"],
            max_decode_len=cfg["max_decode_len"],
            beam_width=cfg["beam_width"],
            learning_rate=cfg["learning_rate"],
            optimizer=cfg["optimizer"],
        ),
        seed=cfg["seed"],
    )
    _, history = pretrain(
        model,
        train,
        dev,
        PretrainConfig(
            batch_size=cfg["batch_size"],
            learning_rate=cfg["learning_rate"],
            max_epochs=cfg["max_epochs"],
            halve_patience=cfg["halve_patience"],
            stop_patience=cfg["stop_patience"],
            seed=cfg["seed"],
            optimizer=cfg["optimizer"],
        ),
    )
    save_learner(out_dir / "learner.json", model, extra={"seed": cfg["seed"]})
    with open(out_dir / "pretrain_history.jsonl", "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


_RUN_COMMON = {
    "data_dir": Key(str, REQUIRED),
    "learner_checkpoint": Key(str, REQUIRED),
    "domain_id": Key(int, 1),
    "alpha": Key(float, 1.0),
    "batch_size": Key(int, 32),
    "learner_lr": Key(float, 5e-4),
    "max_epochs": Key(int, 1),
    "eval_cadence": Key(int, 1),
    "budget_cap": Key(_opt_float, None),
    "optimizer": Key(str, "adam"),
    "pregen": Key(str, ""),
    "seed": Key(int, 0),
}

REGULATE_SCHEMA = {
    **_RUN_COMMON,
    "action_set": Key(str, "reg3"),
    "regulator_enc_hidden": Key(int, 32),
    "regulator_state_hidden": Key(int, 32),
    "regulator_lr": Key(float, 1e-3),
}


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["batch_size"],
        alpha=cfg["alpha"],
        learner_lr=cfg["learner_lr"],
        max_epochs=cfg["max_epochs"],
        eval_cadence=cfg["eval_cadence"],
        budget_cap=cfg["budget_cap"],
        seed=cfg["seed"],
        optimizer=cfg["optimizer"],
    )


def cmd_regulate(cfg: dict, out_dir: Path) -> None:
    data_dir = Path(cfg["data_dir"])
    vocab = _load_vocab(data_dir)
    model = load_learner(cfg["learner_checkpoint"])
    train = _load_domain(data_dir, cfg["domain_id"], "train", vocab)
    dev = _load_domain(data_dir, cfg["domain_id"], "dev", vocab)
    stream = _stream_order(train, cfg["seed"])
    pregen = _pregen(model, stream, vocab, out_dir, cfg["pregen"])
    regulator = RegulatorModel(
        RegulatorConfig(
            encoder_hidden=cfg["regulator_enc_hidden"],
            state_hidden=cfg["regulator_state_hidden"],
            action_set=parse_action_set(cfg["action_set"]),
            alpha=cfg["alpha"],
            learning_rate=cfg["regulator_lr"],
        ),
        embed_init=model.params["src_embed"],
        seed=cfg["seed"],
    )
    policy = RegulatorPolicy(regulator, substream(cfg["seed"], "action-sampling"))
    result = run_regulated(model, policy, stream, pregen, dev, _train_config(cfg), vocab)
    save_regulator(out_dir / "regulator.json", regulator)
    _write_run_outputs(out_dir, result, policy, model)


BASELINE_SCHEMA = {
    **_RUN_COMMON,
    "policy": Key(str, REQUIRED),
    "epsilon": Key(float, 0.1),
    "bandit_arms": Key(str, "reg3"),
    "gamma": Key(float, 0.3),
}


def _baseline_policy(cfg: dict):
    name = cfg["policy"]
    if name.startswith("fixed-"):
        return FixedPolicy(FeedbackType.from_name(name[len("fixed-"):]))
    if name == "epsilon-greedy":
        return EpsilonGreedyPolicy(
            parse_action_set(cfg["bandit_arms"]),
            cfg["epsilon"],
            substream(cfg["seed"], "action-sampling"),
        )
    if name == "active-learning":
        return ActiveLearningPolicy(cfg["gamma"])
    raise ConfigError(f"unknown baseline policy: {name!r}")


def cmd_baseline(cfg: dict, out_dir: Path) -> None:
    data_dir = Path(cfg["data_dir"])
    vocab = _load_vocab(data_dir)
    model = load_learner(cfg["learner_checkpoint"])
    train = _load_domain(data_dir, cfg["domain_id"], "train", vocab)
    dev = _load_domain(data_dir, cfg["domain_id"], "dev", vocab)
    stream = _stream_order(train, cfg["seed"])
    pregen = _pregen(model, stream, vocab, out_dir, cfg["pregen"])
    policy = _baseline_policy(cfg)
    result = run_baseline(model, policy, stream, pregen, dev, _train_config(cfg), vocab)
    _write_run_outputs(out_dir, result, policy, model)


TRANSFER_SCHEMA = {
    **_RUN_COMMON,
    "regulator_checkpoint": Key(str, REQUIRED),
    "domain_id": Key(int, 2),
}


def cmd_transfer(cfg: dict, out_dir: Path) -> None:
    data_dir = Path(cfg["data_dir"])
    vocab = _load_vocab(data_dir)
    model = load_learner(cfg["learner_checkpoint"])
    regulator = load_regulator(cfg["regulator_checkpoint"])
    train = _load_domain(data_dir, cfg["domain_id"], "train", vocab)
    dev = _load_domain(data_dir, cfg["domain_id"], "dev", vocab)
    stream = _stream_order(train, cfg["seed"])
    pregen = _pregen(model, stream, vocab, out_dir, cfg["pregen"])
    policy = RegulatorPolicy(
        regulator, substream(cfg["seed"], "action-sampling"), trainable=False
    )
    result = run_transfer(model, policy, stream, pregen, dev, _train_config(cfg), vocab)
    save_regulator(out_dir / "regulator_after.json", regulator)
    _write_run_outputs(out_dir, result, policy, model)


EVAL_SCHEMA = {
    "data_dir": Key(str, REQUIRED),
    "checkpoint": Key(str, REQUIRED),
    "domain_id": Key(int, 1),
    "split": Key(str, "test"),
    "decode": Key(str, "beam"),
    "beam_width": Key(int, 5),
}


def cmd_eval(cfg: dict, out_dir: Path) -> None:
    data_dir = Path(cfg["data_dir"])
    vocab = _load_vocab(data_dir)
    model = load_learner(cfg["checkpoint"])
    examples = _load_domain(data_dir, cfg["domain_id"], cfg["split"], vocab)
    mode = "greedy" if cfg["decode"] == "greedy" else f"beam{cfg['beam_width']}"
    report = evaluate(model, examples, mode)
    (out_dir / "eval.json").write_text(json.dumps(report.to_dict(), sort_keys=True), encoding="utf-8")
    print(json.dumps(report.to_dict(), sort_keys=True))


EXPORT_SCHEMA = {
    "runlog": Key(str, REQUIRED),
}


def cmd_export_curves(cfg: dict, out_dir: Path) -> None:
    path = Path(cfg["runlog"])
    if not path.exists():
        raise ConfigError(f"missing input artifact: {path}")
    export_curve_csv(read_records(path), out_dir / "curves.csv")


SERVE_SCHEMA = {
    "host": Key(str, "127.0.0.1"),
    "port": Key(int, 8123),
}


def cmd_serve(cfg: dict, out_dir: Path) -> None:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=cfg["host"], port=cfg["port"])


COMMANDS: dict[str, tuple[dict, Callable[[dict, Path], None]]] = {
    "gen-data": (GEN_DATA_SCHEMA, cmd_gen_data),
    "pretrain": (PRETRAIN_SCHEMA, cmd_pretrain),
    "regulate": (REGULATE_SCHEMA, cmd_regulate),
    "baseline": (BASELINE_SCHEMA, cmd_baseline),
    "transfer": (TRANSFER_SCHEMA, cmd_transfer),
    "eval": (EVAL_SCHEMA, cmd_eval),
    "export-curves": (EXPORT_SCHEMA, cmd_export_curves),
    "serve": (SERVE_SCHEMA, cmd_serve),
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="selfreg", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, default=None, help="key=value config file")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--seed", type=int, default=None, help="shorthand for --set seed=N")
    args = parser.parse_args(argv)

    torch.set_num_threads(1)
    try:
        schema, runner = COMMANDS[args.command]
        file_values = parse_kv_file(args.config) if args.config else {}
        overrides: dict[str, str] = {}
        for item in args.overrides:
            if "=" not in item:
                raise ConfigError(f"override must be KEY=VALUE: {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        cfg = resolve_config(schema, file_values, overrides)
        args.out.mkdir(parents=True, exist_ok=True)
        echo_config(cfg, args.out)
        runner(cfg, args.out)
        return 0
    except Exception as exc:  # one-line cause, nonzero exit
        print(f"selfreg {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
