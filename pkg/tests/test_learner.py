import math

import numpy as np
import pytest
import torch

from selfreg.data import EOS
from selfreg.learner import (
    GradItem,
    LearnerConfig,
    LearnerError,
    OptimizerState,
    Seq2SeqModel,
    TokenWeights,
    accumulate_and_update,
    avg_token_entropy,
    batch_position_logprobs,
    dropout_keep_mask,
    grad_supervised,
    mean_weighted_gradient,
    prepare_item,
    token_logprobs,
    weighted_batch_loss,
)

from conftest import make_model

X = (4, 5, 6)
Y = (7, 5, 4)


@pytest.fixture
def model():
    return make_model(vocab_size=16, embed=8, hidden=8, seed=9)


def test_position_distributions_normalize(model):
    src = torch.tensor([list(X)])
    mask = torch.ones_like(src, dtype=torch.bool)
    keys = model.encode(src, mask)
    h = keys.new_zeros(1, model.config.hidden_dim)
    h, logprobs = model.decode_step(keys, mask, h, torch.tensor([1]))
    assert float(logprobs.exp().sum()) == pytest.approx(1.0, abs=1e-6)


def test_dropout_prob_zero_equals_no_dropout(model):
    assert token_logprobs(model, X, Y, None) == token_logprobs(model, X, Y, (0.0, 123))


def test_dropout_fixed_seed_is_deterministic(model):
    a = token_logprobs(model, X, Y, (0.4, 7))
    b = token_logprobs(model, X, Y, (0.4, 7))
    assert a == b
    c = token_logprobs(model, X, Y, (0.4, 8))
    assert a != c  # different mask, different values


def test_token_logprobs_cover_target_plus_eos(model):
    assert len(token_logprobs(model, X, Y)) == len(Y) + 1


def test_out_of_range_token_id_rejected(model):
    with pytest.raises(LearnerError, match="out of range"):
        token_logprobs(model, (99,), Y)


def test_zero_weights_give_zero_gradient(model):
    grads = grad_supervised(model, X, Y, TokenWeights.zeros(len(Y)))
    assert all(float(g.abs().max()) == 0.0 for g in grads.values())


def test_all_one_weights_equal_plain_nll_gradient(model):
    weighted = grad_supervised(model, X, Y, TokenWeights.ones(len(Y)))
    item = prepare_item(model, X, Y, None, None)
    loss = weighted_batch_loss(model, [item])
    names = list(model.params.keys())
    plain = torch.autograd.grad(loss, [model.params[n] for n in names], allow_unused=True)
    for name, ref in zip(names, plain):
        if ref is None:
            assert float(weighted[name].abs().max()) == 0.0
        else:
            assert torch.equal(weighted[name], ref)


def _fd_gradient(model, item, h=1e-5):
    """Central finite differences of the weighted loss, coordinate by coordinate."""
    out = {}
    with torch.no_grad():
        for name, p in model.params.items():
            g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            for idx in range(flat.numel()):
                orig = float(flat[idx])
                flat[idx] = orig + h
                up = float(weighted_batch_loss(model, [item]))
                flat[idx] = orig - h
                down = float(weighted_batch_loss(model, [item]))
                flat[idx] = orig
                gflat[idx] = (up - down) / (2 * h)
            out[name] = g
    return out


def _assert_close_to_fd(analytic, numeric, rel=1e-4, floor=1e-4):
    # denominator floored at 1e-4: coordinates below that are dominated by
    # FD roundoff, so the bound degrades to |a-n| < 1e-8 absolute there
    for name in analytic:
        a = analytic[name].reshape(-1)
        n = numeric[name].reshape(-1)
        denom = torch.maximum(n.abs(), torch.full_like(n, floor))
        err = ((a - n).abs() / denom).max()
        assert float(err) < rel, f"{name}: rel err {float(err):.3e}"


@pytest.mark.parametrize(
    "mode,weights,dropout",
    [
        ("full", (1.0, 1.0, 1.0), None),
        ("weak", (1.0, 0.0, 1.0), None),
        ("self", (1.0, 1.0, 1.0), (0.5, 21)),
        ("mixed-drop", (0.0, 1.0, 1.0), (0.3, 5)),
    ],
)
def test_gradient_matches_finite_differences(mode, weights, dropout):
    model = make_model(vocab_size=8, embed=4, hidden=4, seed=2)
    item = prepare_item(model, (4, 5), (6, 7, 5), weights, dropout)
    analytic = mean_weighted_gradient(model, [item])
    numeric = _fd_gradient(model, item)
    _assert_close_to_fd(analytic, numeric)


def test_weak_with_all_marks_equals_full_on_same_target(model):
    weak = grad_supervised(model, X, Y, TokenWeights.ones(len(Y)))
    full = grad_supervised(model, X, Y, TokenWeights.ones(len(Y)))
    for name in weak:
        assert torch.equal(weak[name], full[name])


def test_self_without_dropout_equals_full_on_hypothesis(model):
    hyp = (6, 8, 9)
    self_sup = grad_supervised(model, X, hyp, TokenWeights.ones(3), dropout=(0.0, 5))
    full = grad_supervised(model, X, hyp, TokenWeights.ones(3), dropout=None)
    for name in self_sup:
        assert torch.equal(self_sup[name], full[name])


def test_batched_mean_matches_mean_of_singles(model):
    items = [
        prepare_item(model, (4, 5, 6), (7, 8), (1.0, 1.0), None),
        prepare_item(model, (7, 8), (4, 5, 6), (1.0, 0.0, 1.0), (0.4, 3)),
        prepare_item(model, (9, 10, 11, 12), (13,), (0.0,), None),
    ]
    batched = mean_weighted_gradient(model, items)
    singles = [mean_weighted_gradient(model, [item]) for item in items]
    for name in batched:
        mean = torch.stack([s[name] for s in singles]).mean(dim=0)
        assert torch.allclose(batched[name], mean, atol=1e-12)


def test_identical_gradients_step_like_single(model):
    g = grad_supervised(model, X, Y, TokenWeights.ones(len(Y)))
    m1 = make_model(vocab_size=16, embed=8, hidden=8, seed=9)
    m2 = make_model(vocab_size=16, embed=8, hidden=8, seed=9)
    s1 = OptimizerState.fresh(m1, 0.1)
    s2 = OptimizerState.fresh(m2, 0.1)
    accumulate_and_update(m1, s1, [g, g, g, g], optimizer="sgd")
    accumulate_and_update(m2, s2, [g], optimizer="sgd")
    for name in m1.params:
        assert torch.allclose(m1.params[name], m2.params[name], rtol=0, atol=1e-15)


def test_zero_mean_gradients_leave_sgd_params_unchanged(model):
    g = grad_supervised(model, X, Y, TokenWeights.ones(len(Y)))
    neg = {k: -v for k, v in g.items()}
    before = model.snapshot()
    state = OptimizerState.fresh(model, 0.5)
    accumulate_and_update(model, state, [g, neg], optimizer="sgd")
    for name in before:
        assert torch.equal(model.params[name], before[name])


def test_nonfinite_gradient_names_block(model):
    g = grad_supervised(model, X, Y, TokenWeights.ones(len(Y)))
    g["out_proj/bias"][0] = float("nan")
    state = OptimizerState.fresh(model, 0.1)
    with pytest.raises(LearnerError, match="out_proj/bias"):
        accumulate_and_update(model, state, [g])


def test_descent_reduces_weighted_loss(model):
    item = prepare_item(model, X, Y, None, None)
    before = float(weighted_batch_loss(model, [item]))
    state = OptimizerState.fresh(model, 1e-2)
    for _ in range(5):
        grad = mean_weighted_gradient(model, [item])
        accumulate_and_update(model, state, [grad], optimizer="sgd")
    after = float(weighted_batch_loss(model, [item]))
    assert after < before


def test_entropy_zero_for_deterministic_outputs(model):
    with torch.no_grad():
        model.params["out_proj/weight"].zero_()
        model.params["out_proj/bias"].zero_()
        model.params["out_proj/bias"][5] = 1e4  # one-hot distribution
    assert avg_token_entropy(model, X, (5, 5)) == pytest.approx(0.0, abs=1e-8)


def test_entropy_log_v_for_uniform_outputs(model):
    with torch.no_grad():
        model.params["out_proj/weight"].zero_()
        model.params["out_proj/bias"].zero_()
    v = model.config.trg_vocab_size
    assert avg_token_entropy(model, X, (5, 6, 7)) == pytest.approx(math.log(v), abs=1e-9)


def test_entropy_within_bounds(model):
    v = model.config.trg_vocab_size
    value = avg_token_entropy(model, X, (5, 6))
    assert 0.0 <= value <= math.log(v) + 1e-9


def test_dropout_mask_respects_probability():
    mask = dropout_keep_mask(0.0, 1, 4, 6)
    assert mask.min() == 1.0
    mask = dropout_keep_mask(0.5, 1, 200, 50)
    assert 0.4 < mask.mean() < 0.6


def test_weights_must_match_target_length(model):
    with pytest.raises(LearnerError, match="length"):
        grad_supervised(model, X, Y, TokenWeights.ones(5))


def test_token_weights_binary_only():
    with pytest.raises(LearnerError):
        TokenWeights(values=(0.5,))
