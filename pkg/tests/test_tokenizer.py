import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zsfer.errors import EmptySequence, TruncationWarning, UnknownToken
from zsfer.tokenizer import Tokenizer, split_words


def test_split_words_lowercases_and_drops_punctuation():
    assert split_words("A face, wide-open eyes! person's") == \
        ["a", "face", "wide", "open", "eyes", "person's"]


def test_vocabulary_is_sorted_with_unknown_at_zero():
    tok = Tokenizer.from_texts(["b a", "c a"])
    assert tok.itos == ["<unk>", "a", "b", "c"]
    np.testing.assert_array_equal(tok.encode("c b zzz"), [3, 2, 0])


def test_strict_mode_reports_unknown_words():
    tok = Tokenizer.from_texts(["a b"])
    with pytest.raises(UnknownToken, match="zzz"):
        tok.encode("a zzz", strict=True)


def test_empty_text_raises():
    with pytest.raises(EmptySequence):
        Tokenizer(["a"]).encode(" ,. ")


def test_truncation_warns():
    tok = Tokenizer(["w"], max_len=4)
    with pytest.warns(TruncationWarning):
        ids = tok.encode("w w w w w w")
    assert len(ids) == 4
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        tok.encode("w w w w")


@given(st.lists(st.sampled_from(["anger", "tight", "lips", "frown", "x1"]), min_size=1,
                max_size=30))
def test_round_trip_through_dict(words):
    tok = Tokenizer.from_texts([" ".join(words)])
    again = Tokenizer.from_dict(tok.to_dict())
    np.testing.assert_array_equal(again.encode(" ".join(words)), tok.encode(" ".join(words)))
    assert all(0 < i < tok.vocab_size for i in tok.encode(" ".join(words)))
