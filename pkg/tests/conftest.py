import pytest
import torch

from idiomdet.corpus import Dataset, Instance
from idiomdet.encoder import EncoderClassifier, EncoderConfig, collate
from idiomdet.tokenizer import Vocab, tokenize

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_instance(id="r1", target="a big fish here", mwe="big fish", label=1, setting="zero_shot",
                  language="EN", previous="", next=""):
    return Instance(id, language, mwe, setting, previous, target, next, label)


@pytest.fixture
def tiny_vocab():
    return Vocab(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "b", "c", "d", "e", "f"])


@pytest.fixture
def tiny_batch(tiny_vocab):
    texts = ["a [SEP]b c[SEP] d", "e f", "a b c d e f"]
    return collate([tokenize(t, tiny_vocab, 16) for t in texts])


def tiny_model(vocab_size=10, pooling="cls", dim=16, seed=0, dropout_rate=0.1, **kw):
    cfg = EncoderConfig(vocab_size=vocab_size, dim=dim, layers=2, heads=2, ffn_dim=32,
                        dropout_rate=dropout_rate, max_position=16, pooling=pooling, **kw)
    return EncoderClassifier(cfg, torch.Generator().manual_seed(seed))


@pytest.fixture
def small_dataset():
    rows = [
        make_instance("a1", "they caught some big fish along the way", "big fish", 0, "one_shot"),
        make_instance("a2", "removing a big fish from a net", "big fish", 1, "one_shot", "PT"),
        make_instance("a3", "Her pamphlet Milk Tooth was published", "milk tooth", 1, "zero_shot"),
    ]
    return Dataset(tuple(rows), "fixture")
