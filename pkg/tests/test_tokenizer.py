import random

import pytest
from hypothesis import given, settings, strategies as st

from idiomdet.corpus import Dataset
from idiomdet.tokenizer import (
    MarkerError, PretrainedTokenizerAdapter, Vocab, WordTokenizer, build_vocab, detokenize_ids, tokenize, words,
)

from conftest import make_instance


def test_build_vocab_small():
    v = build_vocab(["a b a"])
    assert v.itos == ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "b"]
    assert build_vocab(["a b a"], min_freq=5).itos == ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    assert build_vocab(["a b a"]) == build_vocab(["a b a"])


def test_build_vocab_from_dataset(small_dataset):
    v = build_vocab(small_dataset)
    assert "fish" in v.stoi and "milk" in v.stoi
    assert len(set(v.stoi.values())) == len(v) and sorted(v.stoi.values()) == list(range(len(v)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(alphabet="abc ,.", max_size=15), min_size=1, max_size=10), st.randoms())
def test_build_vocab_permutation_invariant(texts, rnd):
    shuffled = list(texts)
    rnd.shuffle(shuffled)
    assert build_vocab(texts) == build_vocab(shuffled)


def test_tokenize_marked(tiny_vocab):
    t = tokenize("a [SEP]b c[SEP] d", tiny_vocab, 128)
    v = tiny_vocab.stoi
    assert list(t.ids) == [v["[CLS]"], v["a"], v["[SEP]"], v["b"], v["c"], v["[SEP]"], v["d"]]
    assert t.mwe_token_range == (3, 4)
    assert t.attention_mask == (1,) * 7


def test_tokenize_truncates():
    v = build_vocab(["w"])
    t = tokenize(" ".join(["w"] * 200), v, 128)
    assert len(t.ids) == 128 and t.ids[0] == v.cls_id


def test_unmarked_has_no_range(tiny_vocab):
    assert tokenize("a b c", tiny_vocab).mwe_token_range is None


def test_oov_maps_to_unk(tiny_vocab):
    assert tokenize("zebra", tiny_vocab).ids[1] == tiny_vocab.unk_id


def test_unbalanced_markers(tiny_vocab):
    with pytest.raises(MarkerError):
        tokenize("a [SEP]b c", tiny_vocab)


def test_truncation_clamps_range(tiny_vocab):
    # [CLS] a [SEP] b c d [SEP]
    assert tokenize("a [SEP]b c d[SEP]", tiny_vocab, 5).mwe_token_range == (3, 4)
    # opening marker is the last surviving token
    assert tokenize("a b [SEP]c d[SEP]", tiny_vocab, 4).mwe_token_range is None
    assert tokenize("a b [SEP]c d[SEP]", tiny_vocab, 3).mwe_token_range is None


def test_detokenize(tiny_vocab):
    assert detokenize_ids([2, 4], tiny_vocab) == ["[CLS]", "a"]
    with pytest.raises(IndexError):
        detokenize_ids([len(tiny_vocab)], tiny_vocab)


def test_round_trip(tiny_vocab):
    text = "a [SEP]b c[SEP] d e"
    toks = WordTokenizer(tiny_vocab).detokenize_ids(tokenize(text, tiny_vocab).ids)
    assert toks == ["[CLS]", "a", "[SEP]", "b", "c", "[SEP]", "d", "e"]


_w = st.text(alphabet="abcdef", min_size=1, max_size=4)


@settings(max_examples=200, deadline=None)
@given(st.lists(_w, max_size=30), st.lists(_w, min_size=1, max_size=3), st.lists(_w, max_size=30),
       st.integers(2, 40))
def test_length_bound_and_mwe_tokens(pre, mwe, post, max_tokens):
    v = build_vocab([" ".join(pre + mwe + post)])
    text = " ".join(pre + ["[SEP]" + " ".join(mwe) + "[SEP]"] + post)
    t = tokenize(text, v, max_tokens)
    assert len(t.ids) <= max_tokens
    assert t == tokenize(text, v, max_tokens)
    full = 1 + len(pre) + 1 + len(mwe) + 1
    if len(t.ids) >= full:
        a, b = t.mwe_token_range
        assert detokenize_ids(t.ids[a:b + 1], v) == mwe
    if t.mwe_token_range is not None:
        assert t.mwe_token_range[1] < len(t.ids)


def test_vocab_file_format(tmp_path, tiny_vocab):
    path = tmp_path / "vocab.txt"
    tiny_vocab.save(path)
    lines = path.read_text().splitlines()
    assert lines[:4] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    assert Vocab.load(path) == tiny_vocab


def _bert_dir(tmp_path):
    from transformers import BertTokenizer

    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "big", "fish", "a", "here", "##s", "caught", "some"]
    out = tmp_path / "bert"
    BertTokenizer(vocab={w: i for i, w in enumerate(vocab)}).save_pretrained(out)
    return out


def test_pretrained_adapter_locates_mwe(tmp_path):
    pytest.importorskip("transformers")
    tok = PretrainedTokenizerAdapter.from_pretrained(str(_bert_dir(tmp_path)))
    t = tok.tokenize("caught a [SEP]big fishs[SEP] here", 16)
    assert t.ids[0] == tok.cls_id
    a, b = t.mwe_token_range
    assert tok.hf.convert_ids_to_tokens(list(t.ids[a:b + 1])) == ["big", "fish", "##s"]
    assert t.ids[a - 1] == tok.sep_id and t.ids[b + 1] == tok.sep_id
