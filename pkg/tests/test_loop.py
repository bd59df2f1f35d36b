import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from selfreg import data
from selfreg.costs import FeedbackType
from selfreg.feedback import pregenerate_targets
from selfreg.loop import (
    LoopError,
    PretrainConfig,
    TrainConfig,
    load_run_checkpoint,
    pretrain,
    run_baseline,
    run_regulated,
    run_stream,
    run_transfer,
    save_run_checkpoint,
)
from selfreg.metrics import evaluate
from selfreg.policies import ActiveLearningPolicy, EpsilonGreedyPolicy, FixedPolicy, reward
from selfreg.regulator import RegulatorConfig, RegulatorModel, RegulatorPolicy
from selfreg.rng import substream

from conftest import make_model

ARMS3 = (FeedbackType.FULL, FeedbackType.WEAK, FeedbackType.SELF)


@pytest.fixture(scope="module")
def env(tiny_family):
    vocab = data.family_vocabulary(tiny_family)
    stream = data.gen_synthetic(tiny_family[1], 40, vocab, stream_name="train")
    dev = data.gen_synthetic(tiny_family[1], 12, vocab, stream_name="dev")
    return vocab, stream, dev


def fresh_model(env, seed=21):
    vocab, _, _ = env
    return make_model(vocab.size, embed=8, hidden=12, seed=seed, max_decode_len=12)


def fresh_pregen(env, model):
    _, stream, _ = env
    return pregenerate_targets(model, stream, width=3)


def config(**kw):
    defaults = dict(batch_size=8, alpha=1.0, learner_lr=1e-3, seed=5)
    defaults.update(kw)
    return TrainConfig(**defaults)


def fresh_regulator(model, action_set=ARMS3, seed=2):
    return RegulatorModel(
        RegulatorConfig(encoder_hidden=6, state_hidden=6, action_set=action_set),
        embed_init=model.params["src_embed"],
        seed=seed,
    )


def test_none_only_policy_changes_nothing(env):
    vocab, stream, dev = env
    model = fresh_model(env)
    pregen = fresh_pregen(env, model)
    before = model.snapshot()
    val0 = evaluate(model, dev, "greedy").bleu
    result = run_baseline(model, FixedPolicy(FeedbackType.NONE), stream, pregen, dev, config(), vocab)
    assert result.ledger.total == 0
    assert all(rec.val_bleu == val0 for rec in result.runlog.records)
    for name in before:
        assert torch.equal(model.params[name], before[name])


def test_accounting_identity(env):
    vocab, stream, dev = env
    model = fresh_model(env)
    pregen = fresh_pregen(env, model)
    policy = EpsilonGreedyPolicy(ARMS3, 0.3, substream(5, "action-sampling"))
    result = run_baseline(model, policy, stream, pregen, dev, config(), vocab)
    running = 0.0
    by_iteration = {}
    for item in result.item_log:
        running += item["cost"]
        by_iteration[item["j"]] = running
    for rec in result.runlog.records:
        assert rec.cumulative_cost == pytest.approx(by_iteration[rec.j])
    assert result.ledger.total == pytest.approx(running)


def test_delta_matches_val_bleu_differences(env):
    vocab, stream, dev = env
    model = fresh_model(env)
    pregen = fresh_pregen(env, model)
    val0 = evaluate(model, dev, "greedy").bleu
    policy = FixedPolicy(FeedbackType.FULL)
    result = run_baseline(model, policy, stream, pregen, dev, config(), vocab)
    prev = val0
    for rec in result.runlog.records:
        assert rec.delta == pytest.approx(rec.val_bleu - prev, abs=1e-12)
        prev = rec.val_bleu


def test_full_policy_costs_char_edits_and_all_one_weights(env):
    vocab, stream, dev = env
    model = fresh_model(env)
    pregen = fresh_pregen(env, model)
    from selfreg.feedback import char_edit_cost

    result = run_baseline(
        model, FixedPolicy(FeedbackType.FULL), stream, pregen, dev, config(), vocab
    )
    by_id = {ex.id: ex for ex in stream}
    for item in result.item_log:
        ex = by_id[item["id"]]
        hyp_surface = pregen[ex.id].to_sequence(vocab).surface
        assert item["action"] == "full"
        assert item["cost"] == char_edit_cost(hyp_surface, ex.reference.surface)


def test_single_epoch_consumes_each_example_once(env):
    vocab, stream, dev = env
    model = fresh_model(env)
    pregen = fresh_pregen(env, model)
    result = run_baseline(
        model, FixedPolicy(FeedbackType.SELF), stream, pregen, dev, config(), vocab
    )
    ids = [item["id"] for item in result.item_log]
    assert len(ids) == len(stream)
    assert len(set(ids)) == len(ids)


def test_budget_cap_stops_run(env):
    vocab, stream, dev = env
    model = fresh_model(env)
    pregen = fresh_pregen(env, model)
    capped = run_baseline(
        model,
        FixedPolicy(FeedbackType.FULL),
        stream,
        pregen,
        dev,
        config(budget_cap=50.0),
        vocab,
    )
    assert capped.ledger.total >= 50.0
    assert len(capped.runlog.records) < len(stream) // 8 + 1


def test_deterministic_reruns_are_identical(env):
    vocab, stream, dev = env

    def one_run():
        model = fresh_model(env)
        pregen = fresh_pregen(env, model)
        regulator = fresh_regulator(model)
        policy = RegulatorPolicy(regulator, substream(5, "action-sampling"))
        result = run_regulated(model, policy, stream, pregen, dev, config(), vocab)
        records = [
            {k: v for k, v in json.loads(rec.to_json()).items() if k != "wall_time"}
            for rec in result.runlog.records
        ]
        return records, model.snapshot(), regulator.snapshot(), result.item_log

    rec1, params1, reg1, items1 = one_run()
    rec2, params2, reg2, items2 = one_run()
    assert rec1 == rec2
    assert items1 == items2
    for name in params1:
        assert torch.equal(params1[name], params2[name])
    for name in reg1:
        assert torch.equal(reg1[name], reg2[name])


def test_pregen_miss_names_the_example(env):
    vocab, stream, dev = env
    model = fresh_model(env)
    pregen = fresh_pregen(env, model)
    del pregen[stream[3].id]
    with pytest.raises(LoopError, match=str(stream[3].id)):
        run_baseline(model, FixedPolicy(FeedbackType.SELF), stream, pregen, dev, config(), vocab)


def test_empty_stream_rejected(env):
    vocab, _, dev = env
    model = fresh_model(env)
    with pytest.raises(LoopError, match="empty stream"):
        run_baseline(model, FixedPolicy(FeedbackType.SELF), [], {}, dev, config(), vocab)


def test_transfer_never_touches_regulator(env):
    vocab, stream, dev = env
    model = fresh_model(env)
    pregen = fresh_pregen(env, model)
    regulator = fresh_regulator(model)
    from selfreg.checkpoint import sha256_of_tensors

    before = sha256_of_tensors(regulator.named_tensors())
    policy = RegulatorPolicy(regulator, substream(6, "action-sampling"), trainable=False)
    result = run_transfer(model, policy, stream, pregen, dev, config(), vocab)
    assert sha256_of_tensors(regulator.named_tensors()) == before
    assert result.runlog.records  # same RunLog schema as regulated runs


def test_transfer_requires_frozen_policy(env):
    vocab, stream, dev = env
    model = fresh_model(env)
    pregen = fresh_pregen(env, model)
    policy = RegulatorPolicy(fresh_regulator(model), substream(6, "s"))
    with pytest.raises(LoopError, match="frozen"):
        run_transfer(model, policy, stream, pregen, dev, config(), vocab)


def test_self_only_regulator_run_is_free(env):
    vocab, stream, dev = env
    model = fresh_model(env)
    pregen = fresh_pregen(env, model)
    regulator = fresh_regulator(model, action_set=(FeedbackType.SELF,))
    policy = RegulatorPolicy(regulator, substream(7, "s"), trainable=False)
    result = run_transfer(model, policy, stream, pregen, dev, config(), vocab)
    assert result.ledger.total == 0.0


def test_epsilon_greedy_q_matches_offline_replay(env):
    vocab, stream, dev = env
    model = fresh_model(env)
    pregen = fresh_pregen(env, model)
    policy = EpsilonGreedyPolicy(ARMS3, 0.25, substream(8, "action-sampling"))
    result = run_baseline(model, policy, stream, pregen, dev, config(), vocab)

    from selfreg.policies import BanditState, bandit_update

    replayed = BanditState(arms=ARMS3, epsilon=0.25)
    deltas = {rec.j: rec.delta for rec in result.runlog.records}
    for item in result.item_log:
        bandit_update(
            replayed,
            FeedbackType(item["action"]),
            reward(deltas[item["j"]], item["cost"], 1.0),
        )
    assert replayed.means == policy.state.means
    assert replayed.counts == policy.state.counts


def test_active_learning_gamma_zero_equals_none_only(env):
    vocab, stream, dev = env

    def run(policy, seed):
        model = fresh_model(env, seed=31)
        pregen = fresh_pregen(env, model)
        result = run_baseline(model, policy, stream, pregen, dev, config(), vocab)
        return [rec.val_bleu for rec in result.runlog.records], model.snapshot()

    al_vals, al_params = run(ActiveLearningPolicy(0.0), 0)
    none_vals, none_params = run(FixedPolicy(FeedbackType.NONE), 0)
    assert al_vals == none_vals
    for name in al_params:
        assert torch.equal(al_params[name], none_params[name])


def test_resume_reproduces_uninterrupted_run(env, tmp_path):
    vocab, stream, dev = env

    def fresh_setup():
        model = fresh_model(env, seed=33)
        pregen = fresh_pregen(env, model)
        regulator = fresh_regulator(model, seed=4)
        policy = RegulatorPolicy(regulator, substream(9, "action-sampling"))
        regulator.reset_state()
        return model, pregen, policy

    model_a, pregen_a, policy_a = fresh_setup()
    straight = run_stream(model_a, policy_a, stream, pregen_a, dev, config(), vocab)

    model_b, pregen_b, policy_b = fresh_setup()
    first_half = run_stream(
        model_b, policy_b, stream, pregen_b, dev, config(), vocab, max_batches=2
    )
    save_run_checkpoint(tmp_path / "mid.json", model_b, policy_b, first_half)

    model_c, pregen_c, policy_c = fresh_setup()
    restored = load_run_checkpoint(tmp_path / "mid.json", model_c, policy_c)
    resumed = run_stream(
        model_c, policy_c, stream, pregen_c, dev, config(), vocab, resume=restored
    )

    straight_recs = [json.loads(r.to_json()) for r in straight.runlog.records]
    resumed_recs = [json.loads(r.to_json()) for r in resumed.runlog.records]
    for a, b in zip(straight_recs, resumed_recs):
        a.pop("wall_time")
        b.pop("wall_time")
    assert straight_recs == resumed_recs
    for name in model_a.params:
        assert torch.equal(model_a.params[name], model_c.params[name])
    for name in policy_a.model.params:
        assert torch.equal(policy_a.model.params[name], policy_c.model.params[name])


# -- pretraining --------------------------------------------------------------

def test_pretrain_improves_on_copy_task(tiny_vocab, tiny_corpus):
    copy_corpus = [replace(ex, reference=ex.source) for ex in tiny_corpus]
    train, dev = copy_corpus[:30], copy_corpus[30:]
    model = make_model(tiny_vocab.size, embed=12, hidden=16, seed=40, max_decode_len=12)
    untrained = evaluate(model, dev, "greedy").bleu
    _, history = pretrain(
        model,
        train,
        dev,
        PretrainConfig(batch_size=10, learning_rate=5e-3, max_epochs=12, seed=1),
    )
    best = max(h["val_bleu"] for h in history)
    assert best > untrained
    # best checkpoint's score is at least the final checkpoint's
    assert best >= history[-1]["val_bleu"]
    assert evaluate(model, dev, "greedy").bleu == pytest.approx(best)


def test_learning_rate_halves_after_three_flat_validations(tiny_vocab, tiny_corpus):
    train = tiny_corpus[:16]
    dev = tiny_corpus[16:24]
    model = make_model(tiny_vocab.size, seed=41)
    lr0 = 1e-12  # updates too small to move the validation score
    _, history = pretrain(
        model,
        train,
        dev,
        PretrainConfig(batch_size=8, learning_rate=lr0, max_epochs=4, stop_patience=10, seed=2),
    )
    assert history[2]["learning_rate"] == lr0
    assert history[3]["learning_rate"] == lr0 / 2
