"""Model input construction: MWE localisation and marking, context handling, AEDA."""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Optional

from .corpus import Instance

DEFAULT_SEP = "[SEP]"
AEDA_MARKS = (".", ";", "?", ":", "!", ",")


@dataclass(frozen=True)
class MweSpan:
    start: Optional[int]
    end: Optional[int]
    deformed: bool

    def __post_init__(self):
        if self.start is None or self.end is None:
            if not self.deformed:
                raise ValueError("an undeformed span needs offsets")
        elif not 0 <= self.start < self.end:
            raise ValueError(f"bad span [{self.start}, {self.end})")


@dataclass(frozen=True)
class BuildPolicy:
    include_context: bool = False
    mark_idiom: bool = True
    marking_mode: str = "undeformed_only"  # or "always"
    max_tokens: int = 128
    sep: str = DEFAULT_SEP

    def __post_init__(self):
        if self.marking_mode not in ("always", "undeformed_only"):
            raise ValueError(f"unknown marking_mode {self.marking_mode!r}")
        if self.max_tokens < 16:
            raise ValueError("max_tokens must be at least 16")


def _at_boundary(text: str, start: int, end: int) -> bool:
    before = text[start - 1] if start > 0 else ""
    after = text[end] if end < len(text) else ""
    return not before.isalnum() and not after.isalnum()


def _first_match(target: str, pattern: re.Pattern) -> Optional[tuple[int, int]]:
    # search from every start, not finditer: a rejected match may overlap the valid one
    m = pattern.search(target)
    while m:
        if _at_boundary(target, m.start(), m.end()):
            return m.start(), m.end()
        m = pattern.search(target, m.start() + 1)
    return None


def find_mwe_span(target: str, mwe: str) -> MweSpan:
    """Locate ``mwe`` in ``target``.

    An exact (case-sensitive, word-bounded, whitespace-collapsed) match is
    undeformed. A match that only exists case-insensitively is reported with
    its offsets but ``deformed=True``; no match at all gives a deformed span
    without offsets.
    """
    words = mwe.split()
    if not words:
        raise ValueError("empty MWE")
    body = r"\s+".join(re.escape(w) for w in words)
    hit = _first_match(target, re.compile(body))
    if hit:
        return MweSpan(hit[0], hit[1], deformed=False)
    hit = _first_match(target, re.compile(body, re.IGNORECASE))
    if hit:
        return MweSpan(hit[0], hit[1], deformed=True)
    return MweSpan(None, None, deformed=True)


def mark_mwe(target: str, span: MweSpan, sep: str = DEFAULT_SEP) -> str:
    if span.deformed or span.start is None:
        raise ValueError("mark_mwe requires an undeformed span with offsets")
    if span.end > len(target):
        raise ValueError("span exceeds target")
    return target[: span.start] + sep + target[span.start : span.end] + sep + target[span.end :]


def mark_target(target: str, mwe: str, policy: BuildPolicy) -> str:
    if not policy.mark_idiom:
        return target
    span = find_mwe_span(target, mwe)
    if span.start is None:
        return target
    if span.deformed:
        if policy.marking_mode != "always":
            return target
        span = MweSpan(span.start, span.end, deformed=False)
    return mark_mwe(target, span, policy.sep)


def build_example(inst: Instance, policy: BuildPolicy = BuildPolicy()) -> str:
    text = mark_target(inst.target, inst.mwe, policy)
    if policy.include_context:
        text = " ".join(part for part in (inst.previous, text, inst.next) if part)
    return text


def _protected_gaps(words: list[str], sep: str) -> set[int]:
    # gap i sits before words[i]; gaps strictly inside a marked span are protected
    protected = set()
    opened = None
    for idx, w in enumerate(words):
        for _ in range(w.count(sep)):
            if opened is None:
                opened = idx
            else:
                protected.update(range(opened + 1, idx + 1))
                opened = None
    return protected


def aeda_augment(sentence: str, seed: int, sep: str = DEFAULT_SEP) -> str:
    """Insert 1..max(1, n//3) random punctuation marks between words.

    Marks become standalone whitespace-separated tokens, so removing them
    restores the word sequence. No mark is placed inside a ``sep``-marked span.
    """
    words = sentence.split()
    if not words:
        raise ValueError("aeda_augment needs at least one word")
    rng = random.Random(seed)
    n = len(words)
    k = rng.randint(1, max(1, n // 3))
    gaps = [g for g in range(n + 1) if g not in _protected_gaps(words, sep)]
    chosen = set(rng.sample(gaps, min(k, len(gaps))))
    out = []
    for g in range(n + 1):
        if g in chosen:
            out.append(rng.choice(AEDA_MARKS))
        if g < n:
            out.append(words[g])
    return " ".join(out)
