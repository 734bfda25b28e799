import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import parley.vocab as V
from parley.errors import VocabError
from parley.vocab import Vocabulary, build_vocab, decode, encode


def test_specials_occupy_first_seven_ids():
    vocab = build_vocab(["a b"])
    for idx, tok in enumerate(V.SPECIALS):
        assert vocab.id_of(tok) == idx
    assert (V.PAD, V.CLS, V.MASK, V.SOT, V.BOS, V.EOS, V.UNK) == tuple(range(7))


def test_build_vocab_counts_by_hand():
    vocab = build_vocab(["a b", "a"], min_freq=1)
    assert "a" in vocab and "b" in vocab
    assert len(vocab) == V.NUM_SPECIALS + 2
    # higher frequency gets the lower id
    assert vocab.id_of("a") < vocab.id_of("b")


def test_build_vocab_min_freq_filters():
    vocab = build_vocab(["a b", "a"], min_freq=2)
    assert "a" in vocab and "b" not in vocab


def test_build_vocab_empty_corpus_rejected():
    with pytest.raises(VocabError):
        build_vocab([])


def test_empty_utterances_contribute_nothing():
    vocab = build_vocab(["", "x", ""])
    assert len(vocab) == V.NUM_SPECIALS + 1


def test_build_vocab_tie_break_lexicographic():
    vocab = build_vocab(["b a c", "c b a"], max_size=V.NUM_SPECIALS + 2)
    # all have frequency 2; lexicographic order decides the cut
    assert "a" in vocab and "b" in vocab and "c" not in vocab


def test_build_vocab_max_size_counts_specials():
    vocab = build_vocab(["a b c d"], max_size=V.NUM_SPECIALS + 2)
    assert len(vocab) == V.NUM_SPECIALS + 2


def test_build_vocab_max_size_too_small():
    with pytest.raises(VocabError):
        build_vocab(["a"], max_size=3)


def test_encode_lowercases():
    vocab = build_vocab(["a b"])
    assert encode("A b", vocab) == [vocab.id_of("a"), vocab.id_of("b")]


def test_encode_empty_string():
    assert encode("", build_vocab(["a"])) == []


def test_encode_oov_maps_to_unk():
    assert encode("zzz", build_vocab(["a"])) == [V.UNK]


def test_decode_drops_specials_except_unk():
    vocab = build_vocab(["a b"])
    ids = [V.CLS, vocab.id_of("a"), V.UNK, vocab.id_of("b"), V.EOS, V.PAD]
    assert decode(ids, vocab) == "a [UNK] b"


def test_decode_out_of_range_rejected():
    vocab = build_vocab(["a"])
    with pytest.raises(VocabError):
        decode([len(vocab)], vocab)
    with pytest.raises(VocabError):
        decode([-1], vocab)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["cat", "dog", "Bird", "FISH"]), min_size=0, max_size=8))
def test_round_trip_is_normalized_identity(words):
    vocab = build_vocab(["cat dog bird fish"])
    text = " ".join(words)
    assert decode(encode(text, vocab), vocab) == " ".join(text.lower().split())


def test_specials_never_collide_with_corpus_tokens():
    # corpus tokens are lowercased, the specials are uppercase-bracketed
    vocab = build_vocab(["[pad] [cls] hello"])
    assert vocab.id_of("[pad]") >= V.NUM_SPECIALS
    assert vocab.id_of("[PAD]") == V.PAD


def test_save_load_round_trip(tmp_path):
    vocab = build_vocab(["gamma beta alpha", "beta alpha", "alpha"])
    path = tmp_path / "vocab.txt"
    vocab.save(str(path))
    loaded = Vocabulary.load(str(path))
    assert loaded.id_to_token == vocab.id_to_token
    # line number equals id
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[vocab.id_of("alpha")] == "alpha"


def test_load_rejects_file_without_specials(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("foo\nbar\n", encoding="utf-8")
    with pytest.raises(VocabError):
        Vocabulary.load(str(path))
