import os
import subprocess
import sys

import pytest
from hypothesis import given, strategies as st

from edaregress.errors import UnknownToken
from edaregress.tokenizer import BOS, DIGIT_IDS, EOS, PAD, SYMBOL_IDS, VOCAB, VOCAB_SIZE, TokenSequence, decode, decode_bytes, encode


def test_empty():
    seq = encode("")
    assert seq.ids == [] and seq.loss_mask == []


def test_digits_are_single_tokens():
    seq = encode("12")
    assert len(seq) == 2
    assert all(i in VOCAB.digit_ids for i in seq.ids)


def test_vocabulary_layout():
    assert VOCAB_SIZE == 259
    assert DIGIT_IDS == tuple(range(48, 58))
    assert set(SYMBOL_IDS) == set('.e+-",:{}')
    assert {PAD, BOS, EOS} == {256, 257, 258}


def test_vocab_bijection():
    for i in range(VOCAB_SIZE):
        assert VOCAB.id_of(VOCAB.unit(i)) == i
    with pytest.raises(UnknownToken):
        VOCAB.unit(VOCAB_SIZE)


def test_roundtrip_simple():
    assert decode(encode("cpu_max")) == "cpu_max"
    assert not any(encode("cpu_max").loss_mask)


def test_specials_dropped():
    assert decode([BOS] + encode("{").ids) == "{"
    assert decode(encode("ab").ids + [PAD, PAD, EOS]) == "ab"


def test_unknown_token():
    with pytest.raises(UnknownToken):
        decode([65, 999])


def test_random_kib_roundtrip():
    data = os.urandom(1024)
    assert decode_bytes(encode(data)) == data
    # a decoded str carries undecodable bytes via surrogateescape and re-encodes exactly
    assert decode_bytes(encode(decode(encode(data)))) == data


@given(st.binary(max_size=2048))
def test_roundtrip_property(data):
    assert decode_bytes(encode(data)) == data


@given(st.text())
def test_digit_atomicity(text):
    ids = encode(text).ids
    n_digits = sum(ch.isascii() and ch.isdigit() for ch in text)
    assert sum(i in DIGIT_IDS for i in ids) == n_digits


def test_deterministic_across_processes():
    code = "from edaregress.tokenizer import encode; print(encode('{\"ram_max\": \"1.23e+04\"}').ids)"
    outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout for _ in range(2)}
    assert len(outs) == 1
    assert outs.pop().strip() == str(encode('{"ram_max": "1.23e+04"}').ids)


def test_token_sequence_length_invariant():
    with pytest.raises(ValueError):
        TokenSequence([1, 2], [False])
