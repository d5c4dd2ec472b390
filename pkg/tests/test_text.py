from hypothesis import given
from hypothesis import strategies as st

from todpipe.text import (
    CORRUPT_ID,
    EOS_ID,
    PAD_ID,
    RESERVED_TOKENS,
    UNK_ID,
    Vocab,
    build_vocab,
    detokenize,
    segment,
)


def test_reserved_layout():
    vocab = build_vocab([])
    assert len(vocab) == len(RESERVED_TOKENS)
    assert vocab.token(PAD_ID) == "<pad>"
    assert vocab.token(UNK_ID) == "<unk>"
    assert vocab.token(CORRUPT_ID) == "_"
    assert vocab.token(EOS_ID) == "<eos>"


def test_empty_text():
    vocab = build_vocab(["套餐"])
    assert vocab.encode("") == []


def test_character_level_cjk():
    vocab = build_vocab(["套餐 资费"])
    ids = vocab.encode("套餐 资费")
    assert ids == [vocab.id("套"), vocab.id("餐"), vocab.id("资"), vocab.id("费")]
    assert all(i != UNK_ID for i in ids)


def test_latin_runs_grouped():
    assert segment("流量10GB套餐Plan A") == ["流", "量", "10GB", "套", "餐", "Plan", "A"]


def test_out_of_vocab_maps_to_unk():
    vocab = build_vocab(["甲"])
    assert vocab.encode("乙丙") == [UNK_ID, UNK_ID]


def test_underscore_is_corrupt_token():
    vocab = build_vocab(["a_b"])
    assert vocab.encode("_") == [CORRUPT_ID]
    assert vocab.encode("a_b") == [vocab.id("a"), CORRUPT_ID, vocab.id("b")]


def test_markers_never_produced_by_text():
    vocab = build_vocab(["<ui> x <eos>"])
    ids = vocab.encode("<ui><eos>")
    assert all(vocab.token(i) in ("<", ">", "ui", "eos") for i in ids)


def test_detokenize_spaces_between_word_runs():
    assert detokenize(["Plan", "A"]) == "Plan A"
    assert detokenize(["58", "元", "/", "月"]) == "58元/月"
    assert detokenize([]) == ""


def test_vocab_ids_contiguous_and_sorted():
    vocab = build_vocab(["丙甲乙"])
    tokens = vocab.tokens[len(RESERVED_TOKENS):]
    assert tokens == sorted(tokens)
    assert [vocab.id(t) for t in vocab.tokens] == list(range(len(vocab)))


@given(st.text(alphabet="abc 甲乙丙_01", max_size=30))
def test_segment_detokenize_roundtrip_normalizes_whitespace(text):
    tokens = segment(text)
    assert segment(detokenize(tokens)) == tokens


@given(st.text(alphabet="xy言语 3", max_size=20))
def test_encode_deterministic(text):
    vocab = build_vocab(["xy言语3"])
    assert vocab.encode(text) == vocab.encode(text)
