import pytest
import torch

from selfreg import data
from selfreg.learner import LearnerConfig, Seq2SeqModel

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_family():
    return data.make_task_family(
        lexicon_size=12, reorder_window=1, seed=11, n_domains=3, shift_fraction=0.5,
        src_len_range=(3, 6),
    )


@pytest.fixture(scope="session")
def tiny_vocab(tiny_family):
    return data.family_vocabulary(tiny_family)


@pytest.fixture(scope="session")
def tiny_corpus(tiny_family, tiny_vocab):
    return data.gen_synthetic(tiny_family[0], 40, tiny_vocab)


def make_model(vocab_size, embed=8, hidden=8, seed=3, max_decode_len=10, **kw):
    cfg = LearnerConfig(
        src_vocab_size=vocab_size, trg_vocab_size=vocab_size,
        embed_dim=embed, hidden_dim=hidden, max_decode_len=max_decode_len, **kw,
    )
    return Seq2SeqModel(cfg, seed=seed)


@pytest.fixture
def tiny_model(tiny_vocab):
    return make_model(tiny_vocab.size)
