"""Word-level tokenizer with MWE-marker localisation, plus an adapter for
pre-trained (Hugging Face) tokenizers behind the same interface."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

from .preprocess import DEFAULT_SEP

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)

_WORD = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class MarkerError(ValueError):
    """Unbalanced MWE separator markers."""


@dataclass(frozen=True)
class TokenizedInput:
    ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    mwe_token_range: Optional[tuple[int, int]] = None

    def __len__(self) -> int:
        return len(self.ids)


def _mwe_range(sep_positions: list[int], n_ids: int) -> Optional[tuple[int, int]]:
    # clamp to the surviving prefix; None when the opening marker or every inner token was cut
    if not sep_positions:
        return None
    open_, close = sep_positions[0], sep_positions[1]
    last = min(close - 1, n_ids - 1)
    if last > open_:
        return open_ + 1, last
    return None


class Tokenizer(Protocol):
    """What the encoder and statistics code need from any tokenizer."""

    vocab_size: int
    pad_id: int
    cls_id: int
    sep_id: int

    def tokens(self, text: str) -> list[str]: ...

    def tokenize(self, text: str, max_tokens: int) -> TokenizedInput: ...


def words(text: str) -> list[str]:
    """Lower-cased word and punctuation tokens."""
    return _WORD.findall(text.lower())


class Vocab:
    """Dense token ids; the four specials occupy ids 0..3."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError(f"vocab must start with {SPECIALS}")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocab")
        self.pad_id, self.unk_id, self.cls_id, self.sep_id = range(4)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def build_vocab(texts: Iterable[str], min_freq: int = 1) -> Vocab:
    """Vocabulary ordered by frequency (desc) then lexicographically.

    ``texts`` is a Dataset (previous, target and next columns are counted) or
    any iterable of strings.
    """
    if hasattr(texts, "instances"):
        texts = corpus_texts(texts)
    counts = Counter()
    for t in texts:
        counts.update(w for w in words(t) if w not in SPECIALS)
    kept = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
    return Vocab(list(SPECIALS) + [w for w in kept if w not in SPECIALS])


def corpus_texts(dataset) -> Iterable[str]:
    for inst in dataset:
        yield from (inst.previous, inst.target, inst.next)


class WordTokenizer:
    """The built-in tokenizer: lower-cased words and punctuation, ``[CLS]`` prefix.

    Occurrences of the ``sep`` marker string in the input become the sep
    token; the tokens strictly between the first two markers form the MWE
    token range.
    """

    def __init__(self, vocab: Vocab, sep: str = DEFAULT_SEP):
        self.vocab = vocab
        self.sep = sep
        self.vocab_size = len(vocab)
        self.pad_id, self.unk_id, self.cls_id, self.sep_id = vocab.pad_id, vocab.unk_id, vocab.cls_id, vocab.sep_id

    def tokens(self, text: str) -> list[str]:
        out = []
        for i, chunk in enumerate(text.split(self.sep)):
            if i:
                out.append(SEP)
            out.extend(words(chunk))
        return out

    def tokenize(self, text: str, max_tokens: int = 128) -> TokenizedInput:
        if max_tokens < 2:
            raise ValueError("max_tokens must be at least 2")
        toks = [CLS] + self.tokens(text)
        sep_positions = [i for i, t in enumerate(toks) if t == SEP]
        if len(sep_positions) % 2:
            raise MarkerError(f"unbalanced {self.sep!r} markers in {text!r}")
        ids = [self.vocab.stoi.get(t, self.unk_id) for t in toks][:max_tokens]
        return TokenizedInput(tuple(ids), (1,) * len(ids), _mwe_range(sep_positions, len(ids)))

    def detokenize_ids(self, ids: Sequence[int]) -> list[str]:
        return detokenize_ids(ids, self.vocab)


def tokenize(text: str, v: Vocab, max_tokens: int = 128, sep: str = DEFAULT_SEP) -> TokenizedInput:
    return WordTokenizer(v, sep).tokenize(text, max_tokens)


def detokenize_ids(ids: Sequence[int], v: Vocab) -> list[str]:
    out = []
    for i in ids:
        if not 0 <= i < len(v):
            raise IndexError(f"token id {i} outside vocab of size {len(v)}")
        out.append(v.itos[i])
    return out


class PretrainedTokenizerAdapter:
    """Wraps a Hugging Face tokenizer so it satisfies :class:`Tokenizer`.

    The tokenizer's own separator token replaces the marker string, so the
    MWE range is located on the tokenizer's native ``sep_token_id``.
    """

    def __init__(self, hf_tokenizer, sep: str = DEFAULT_SEP):
        self.hf = hf_tokenizer
        self.sep = sep
        self.vocab_size = len(hf_tokenizer)
        self.pad_id = hf_tokenizer.pad_token_id
        self.cls_id = hf_tokenizer.cls_token_id
        self.sep_id = hf_tokenizer.sep_token_id

    @classmethod
    def from_pretrained(cls, name_or_path: str, **kwargs) -> "PretrainedTokenizerAdapter":
        from transformers import AutoTokenizer

        return cls(AutoTokenizer.from_pretrained(name_or_path), **kwargs)

    def tokens(self, text: str) -> list[str]:
        out = []
        for i, chunk in enumerate(text.split(self.sep)):
            if i:
                out.append(self.hf.sep_token)
            if chunk.strip():
                out.extend(self.hf.tokenize(chunk))
        return out

    def tokenize(self, text: str, max_tokens: int = 128) -> TokenizedInput:
        toks = self.tokens(text)
        sep_positions = [i + 1 for i, t in enumerate(toks) if t == self.hf.sep_token]
        if len(sep_positions) % 2:
            raise MarkerError(f"unbalanced {self.sep!r} markers in {text!r}")
        ids = [self.cls_id] + self.hf.convert_tokens_to_ids(toks)
        ids = ids[:max_tokens]
        return TokenizedInput(tuple(ids), (1,) * len(ids), _mwe_range(sep_positions, len(ids)))


def load_tokenizer(spec: str, vocab: Optional[Vocab] = None, sep: str = DEFAULT_SEP):
    """``builtin`` (requires ``vocab``) or ``hf:<name-or-path>``."""
    if spec == "builtin":
        if vocab is None:
            raise ValueError("builtin tokenizer needs a vocab")
        return WordTokenizer(vocab, sep)
    if spec.startswith("hf:"):
        return PretrainedTokenizerAdapter.from_pretrained(spec[3:], sep=sep)
    raise ValueError(f"unknown tokenizer {spec!r}")
