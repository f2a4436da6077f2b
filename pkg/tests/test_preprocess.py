import collections
import re

import pytest
from hypothesis import given, settings, strategies as st

from idiomdet.preprocess import (
    AEDA_MARKS, BuildPolicy, MweSpan, aeda_augment, build_example, find_mwe_span, mark_mwe,
)

from conftest import make_instance

MILK = "Her latest pamphlet Milk Tooth, published by Rough Trade Books, is a collection of thwarted escape plans"
FISH = "caught some big fish along the way"


def test_capitalised_mwe_is_deformed():
    span = find_mwe_span(MILK, "milk tooth")
    assert span.deformed
    assert MILK[span.start:span.end] == "Milk Tooth"


def test_exact_mwe_found():
    span = find_mwe_span(FISH, "big fish")
    assert not span.deformed and FISH[span.start:span.end] == "big fish"


def test_absent_mwe():
    assert find_mwe_span("no match here", "big fish") == MweSpan(None, None, True)


def test_word_boundary():
    assert find_mwe_span("a big fishery", "big fish").start is None
    span = find_mwe_span("the big fishery and a big fish.", "big fish")
    assert span.start == 22 and not span.deformed


def test_whitespace_collapse_and_first_occurrence():
    span = find_mwe_span("big  fish then big fish", "big fish")
    assert (span.start, span.end, span.deformed) == (0, 9, False)


def test_exact_match_preferred_over_earlier_case_variant():
    span = find_mwe_span("Big Fish and big fish", "big fish")
    assert span.start == 13 and not span.deformed


def test_mark_mwe():
    t = "a big fish here"
    span = find_mwe_span(t, "big fish")
    assert mark_mwe(t, span, "[SEP]") == "a [SEP]big fish[SEP] here"
    assert mark_mwe("big fish", find_mwe_span("big fish", "big fish")) == "[SEP]big fish[SEP]"


def test_mark_mwe_rejects_deformed():
    with pytest.raises(ValueError):
        mark_mwe(MILK, find_mwe_span(MILK, "milk tooth"))


def test_span_found_after_overlapping_partial_match():
    # "ea e" first matches inside "ea ea" (ending mid-word); the real hit starts at 3
    span = find_mwe_span("ea ea e", "ea e")
    assert (span.start, span.end, span.deformed) == (3, 7, False)


_word = st.text(alphabet="abcdefghij", min_size=1, max_size=5)


@settings(max_examples=200, deadline=None)
@given(st.lists(_word, min_size=0, max_size=6), st.lists(_word, min_size=1, max_size=3),
       st.lists(_word, min_size=0, max_size=6), st.sampled_from(["[SEP]", "<s>", "|"]))
def test_mark_inverse_and_length(pre, mwe_words, post, sep):
    mwe = " ".join(mwe_words)
    target = " ".join(pre + [mwe] + post)
    span = find_mwe_span(target, mwe)
    assert not span.deformed and target[span.start:span.end] == mwe
    marked = mark_mwe(target, span, sep)
    assert len(marked) == len(target) + 2 * len(sep)
    assert marked.count(sep) == 2 + target.count(sep) * 0
    assert marked.replace(sep, "") == target


def test_build_example_policies():
    milk = make_instance(target=MILK, mwe="milk tooth", previous="Before.", next="After.")
    fish = make_instance(target=FISH, mwe="big fish")
    default = BuildPolicy()
    assert build_example(milk, default) == MILK
    assert build_example(fish, default) == "caught some [SEP]big fish[SEP] along the way"
    always = BuildPolicy(marking_mode="always")
    assert "[SEP]Milk Tooth[SEP]" in build_example(milk, always)
    ctx = BuildPolicy(include_context=True)
    assert build_example(milk, ctx) == f"Before. {MILK} After."
    assert build_example(fish, BuildPolicy(include_context=True)) == "caught some [SEP]big fish[SEP] along the way"
    assert "[SEP]" not in build_example(fish, BuildPolicy(mark_idiom=False, marking_mode="always"))


def test_policy_validation():
    with pytest.raises(ValueError):
        BuildPolicy(max_tokens=8)
    with pytest.raises(ValueError):
        BuildPolicy(marking_mode="sometimes")


def _strip_marks(s):
    return [w for w in s.split() if w not in AEDA_MARKS]


def test_aeda_single_word():
    out = aeda_augment("hello", seed=3)
    assert len(out.split()) == 2 and _strip_marks(out) == ["hello"]


def test_aeda_empty_raises():
    with pytest.raises(ValueError):
        aeda_augment("   ", 0)


def test_aeda_deterministic():
    s = "one two three four five six seven"
    assert aeda_augment(s, 11) == aeda_augment(s, 11)


@settings(max_examples=200, deadline=None)
@given(st.lists(_word, min_size=1, max_size=20), st.integers(0, 10**6))
def test_aeda_inverse(words, seed):
    s = " ".join(words)
    out = aeda_augment(s, seed)
    inserted = len(out.split()) - len(words)
    assert 1 <= inserted <= max(1, len(words) // 3)
    assert " ".join(_strip_marks(out)) == s


def test_aeda_count_distribution():
    s = " ".join(f"w{i}" for i in range(9))
    counts = collections.Counter(len(aeda_augment(s, seed).split()) - 9 for seed in range(10_000))
    assert set(counts) == {1, 2, 3}
    for k in (1, 2, 3):
        assert counts[k] / 10_000 == pytest.approx(1 / 3, abs=0.05)


@settings(max_examples=200, deadline=None)
@given(st.lists(_word, min_size=0, max_size=5), st.lists(_word, min_size=2, max_size=4),
       st.lists(_word, min_size=0, max_size=5), st.integers(0, 10**6))
def test_aeda_never_splits_marked_span(pre, mwe, post, seed):
    s = " ".join(pre + ["[SEP]" + " ".join(mwe) + "[SEP]"] + post)
    out = aeda_augment(s, seed)
    inside = re.search(r"\[SEP\](.*?)\[SEP\]", out).group(1)
    assert inside == " ".join(mwe)
