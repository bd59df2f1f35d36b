import json
from pathlib import Path

import pytest

from selfreg.cli import main
from selfreg.runlog import read_item_log, read_records


def _strip_wall_time(path: Path) -> list[dict]:
    records = []
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        rec.pop("wall_time")
        records.append(rec)
    return records


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    rc = main(
        [
            "gen-data",
            "--out", str(data_dir),
            "--set", "lexicon_size=10",
            "--set", "n_train=24",
            "--set", "n_dev=8",
            "--set", "n_test=8",
            "--set", "src_len_min=3",
            "--set", "src_len_max=5",
            "--seed", "3",
        ]
    )
    assert rc == 0
    pre_dir = root / "pretrain"
    rc = main(
        [
            "pretrain",
            "--out", str(pre_dir),
            "--set", f"data_dir={data_dir}",
            "--set", "embed_dim=8",
            "--set", "hidden_dim=10",
            "--set", "max_decode_len=10",
            "--set", "max_epochs=2",
            "--set", "batch_size=8",
            "--seed", "3",
        ]
    )
    assert rc == 0
    return root, data_dir, pre_dir / "learner.json"


def test_gen_data_writes_all_domains(workspace):
    _, data_dir, _ = workspace
    for d in range(3):
        for split in ("train", "dev", "test"):
            assert (data_dir / f"domain{d}.{split}.src").exists()
            assert (data_dir / f"domain{d}.{split}.trg").exists()
    assert (data_dir / "vocab.txt").exists()
    assert (data_dir / "resolved.cfg").exists()


def test_regulate_runs_deterministically(workspace, tmp_path):
    root, data_dir, learner = workspace
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        rc = main(
            [
                "regulate",
                "--out", str(out),
                "--set", f"data_dir={data_dir}",
                "--set", f"learner_checkpoint={learner}",
                "--set", "action_set=Reg3",
                "--set", "batch_size=8",
                "--set", "regulator_enc_hidden=6",
                "--set", "regulator_state_hidden=6",
                "--seed", "11",
            ]
        )
        assert rc == 0
        outs.append(out)
    a, b = outs
    assert _strip_wall_time(a / "runlog.jsonl") == _strip_wall_time(b / "runlog.jsonl")
    for artifact in ("learner_best.json", "learner_final.json", "regulator.json", "items.jsonl", "curve.csv"):
        assert (a / artifact).read_bytes() == (b / artifact).read_bytes()


def test_export_curves_row_count(workspace, tmp_path):
    root, data_dir, learner = workspace
    run_dir = tmp_path / "run"
    rc = main(
        [
            "baseline",
            "--out", str(run_dir),
            "--set", f"data_dir={data_dir}",
            "--set", f"learner_checkpoint={learner}",
            "--set", "policy=fixed-self",
            "--set", "batch_size=8",
            "--seed", "4",
        ]
    )
    assert rc == 0
    out = tmp_path / "curves"
    rc = main(
        ["export-curves", "--out", str(out), "--set", f"runlog={run_dir / 'runlog.jsonl'}"]
    )
    assert rc == 0
    csv_lines = (out / "curves.csv").read_text().splitlines()
    records = read_records(run_dir / "runlog.jsonl")
    assert len(csv_lines) == len(records) + 1
    assert csv_lines[0] == "iteration,cumulative_cost,val_bleu,delta,full,weak,self,none"


def test_baseline_metadata_records_policy(workspace, tmp_path):
    root, data_dir, learner = workspace
    out = tmp_path / "eps"
    rc = main(
        [
            "baseline",
            "--out", str(out),
            "--set", f"data_dir={data_dir}",
            "--set", f"learner_checkpoint={learner}",
            "--set", "policy=epsilon-greedy",
            "--set", "epsilon=0.25",
            "--set", "batch_size=8",
            "--seed", "4",
        ]
    )
    assert rc == 0
    meta = json.loads((out / "runlog_meta.json").read_text())
    assert meta["policy"] == "epsilon-greedy-0.25"
    assert meta["seed"] == 4
    state = json.loads((out / "policy_state.json").read_text())
    assert state["epsilon"] == 0.25


def test_unknown_config_key_rejected(workspace, tmp_path, capsys):
    _, data_dir, _ = workspace
    rc = main(
        ["gen-data", "--out", str(tmp_path / "x"), "--set", "bogus_key=1"]
    )
    assert rc == 1
    assert "bogus_key" in capsys.readouterr().err


def test_baseline_rejects_action_set_key(workspace, tmp_path, capsys):
    root, data_dir, learner = workspace
    rc = main(
        [
            "baseline",
            "--out", str(tmp_path / "x"),
            "--set", f"data_dir={data_dir}",
            "--set", f"learner_checkpoint={learner}",
            "--set", "policy=fixed-full",
            "--set", "action_set=Reg3",
        ]
    )
    assert rc == 1
    assert "action_set" in capsys.readouterr().err


def test_missing_artifact_names_path(workspace, tmp_path, capsys):
    _, data_dir, _ = workspace
    rc = main(
        [
            "pretrain",
            "--out", str(tmp_path / "x"),
            "--set", "data_dir=/nonexistent/place",
        ]
    )
    assert rc == 1
    assert "/nonexistent/place" in capsys.readouterr().err


def test_eval_command_writes_report(workspace, tmp_path):
    root, data_dir, learner = workspace
    out = tmp_path / "eval"
    rc = main(
        [
            "eval",
            "--out", str(out),
            "--set", f"data_dir={data_dir}",
            "--set", f"checkpoint={learner}",
            "--set", "domain_id=0",
            "--set", "split=test",
            "--set", "decode=beam",
            "--set", "beam_width=3",
        ]
    )
    assert rc == 0
    report = json.loads((out / "eval.json").read_text())
    assert report["decode_mode"] == "beam3"
    assert report["n_sentences"] == 8


def test_transfer_freezes_regulator(workspace, tmp_path):
    root, data_dir, learner = workspace
    reg_dir = tmp_path / "reg"
    rc = main(
        [
            "regulate",
            "--out", str(reg_dir),
            "--set", f"data_dir={data_dir}",
            "--set", f"learner_checkpoint={learner}",
            "--set", "batch_size=8",
            "--set", "regulator_enc_hidden=6",
            "--set", "regulator_state_hidden=6",
            "--seed", "7",
        ]
    )
    assert rc == 0
    out = tmp_path / "transfer"
    rc = main(
        [
            "transfer",
            "--out", str(out),
            "--set", f"data_dir={data_dir}",
            "--set", f"learner_checkpoint={learner}",
            "--set", f"regulator_checkpoint={reg_dir / 'regulator.json'}",
            "--set", "domain_id=2",
            "--set", "batch_size=8",
            "--seed", "7",
        ]
    )
    assert rc == 0
    from selfreg.checkpoint import load

    _, _, before, _ = load(reg_dir / "regulator.json")
    _, _, after, _ = load(out / "regulator_after.json")
    import torch

    for name in before:
        if name == "state":
            continue  # recurrent state advances during the frozen run
        assert torch.equal(before[name], after[name])


def test_resolved_config_reproduces_run(workspace, tmp_path):
    root, data_dir, learner = workspace
    first = tmp_path / "first"
    rc = main(
        [
            "baseline",
            "--out", str(first),
            "--set", f"data_dir={data_dir}",
            "--set", f"learner_checkpoint={learner}",
            "--set", "policy=fixed-weak",
            "--set", "batch_size=8",
            "--seed", "9",
        ]
    )
    assert rc == 0
    second = tmp_path / "second"
    rc = main(["baseline", "--config", str(first / "resolved.cfg"), "--out", str(second)])
    assert rc == 0
    assert _strip_wall_time(first / "runlog.jsonl") == _strip_wall_time(second / "runlog.jsonl")
    assert (first / "learner_best.json").read_bytes() == (second / "learner_best.json").read_bytes()
