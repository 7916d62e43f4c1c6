""" tests the byte-pair tokenizer """
import json

import pytest

import eosedit as ee
from eosedit.constants import EOS_TOKEN, SOS_TOKEN, WORD_END
from eosedit.log import IntegrityError, ParseError, ValidationError, EoseditKeyError

from .utils import VOCAB, TOKEN_TABLE, MERGES_TEXT, clear_tmp, prepend_tmp, token_ids

SOS, EOS = TOKEN_TABLE[SOS_TOKEN], TOKEN_TABLE[EOS_TOKEN]


def test_specials():
    assert VOCAB.sos_id == SOS
    assert VOCAB.eos_id == EOS
    assert VOCAB.vocab_size == len(TOKEN_TABLE)
    assert VOCAB.context_len == 77


def test_layout():
    seq = ee.encode(VOCAB, "a photo of a cat")
    content = token_ids("a</w>", "photo</w>", "of</w>", "a</w>", "cat</w>")
    assert seq.ids[: seq.eos_index] == [SOS] + content
    assert seq.eos_index == 6
    assert seq.content_len == 5
    assert len(seq.ids) == 77
    assert all(token_id == EOS for token_id in seq.ids[6:])
    assert ee.eos_index_of(seq) == seq.eos_index


def test_merges_applied_in_rank_order():
    assert VOCAB.bpe("photo") == ("photo" + WORD_END,)
    assert VOCAB.bpe("dog") == ("dog" + WORD_END,)
    assert VOCAB.bpe("zebra") == ("z", "e", "b", "r", "a" + WORD_END)
    assert VOCAB.bpe("x") == ("x" + WORD_END,)


def test_empty_prompt():
    seq = ee.encode(VOCAB, "")
    assert seq.eos_index == 1
    assert seq.content_len == 0
    assert seq.ids == [SOS] + [EOS] * 76


def test_normalization():
    plain = ee.encode(VOCAB, "a photo of a cat")
    messy = ee.encode(VOCAB, "  A   Photo\tof a CAT \n")
    assert plain.ids == messy.ids
    assert ee.normalize_text("  A&amp;B  ") == "a&b"


def test_truncation():
    seq = ee.encode(VOCAB, "dog " * 100)
    assert seq.content_len == 75
    assert seq.eos_index == 76
    assert seq.ids[-1] == EOS
    assert seq.ids[1:76] == token_ids("dog</w>") * 75


def test_special_text_is_plain_text():
    seq = ee.encode(VOCAB, "a <|endoftext|> dog")
    assert EOS not in seq.content_ids
    assert SOS not in seq.ids[1:]


def test_decode():
    for prompt in ("a photo of a cat", "zebra", "café", ""):
        seq = ee.encode(VOCAB, prompt)
        assert ee.decode(VOCAB, seq) == ee.normalize_text(prompt)


def test_decode_out_of_range():
    seq = ee.TokenSequence(
        ids=[SOS, len(TOKEN_TABLE) + 5, EOS, EOS],
        sos_id=SOS,
        eos_id=EOS,
        eos_index=2,
        content_len=1,
    )
    with pytest.raises(EoseditKeyError):
        ee.decode(VOCAB, seq)


def test_sequence_layout_checked():
    with pytest.raises(ValidationError):
        ee.TokenSequence(ids=[EOS, EOS, EOS], sos_id=SOS, eos_id=EOS, eos_index=1, content_len=0)
    with pytest.raises(ValidationError):
        ee.TokenSequence(ids=[SOS, 3, EOS, 4], sos_id=SOS, eos_id=EOS, eos_index=2, content_len=1)
    with pytest.raises(ValidationError):
        ee.TokenSequence(ids=[SOS, 3, EOS, EOS], sos_id=SOS, eos_id=EOS, eos_index=2, content_len=2)


@clear_tmp
def test_load_from_files():
    vocab_path, merges_path = prepend_tmp("vocab.json"), prepend_tmp("merges.txt")
    with open(vocab_path, "w", encoding="utf-8") as f:
        json.dump(TOKEN_TABLE, f)
    with open(merges_path, "w", encoding="utf-8") as f:
        f.write(MERGES_TEXT)
    vocab = ee.load_vocabulary(vocab_path, merges_path)
    assert vocab == VOCAB

    with open(merges_path, "rb") as merges_file:
        assert ee.load_vocabulary(vocab_path, merges_file) == VOCAB


def test_tab_separated_vocab():
    lines = "".join(f"{token}\t{token_id}\n" for token, token_id in TOKEN_TABLE.items())
    vocab = ee.load_vocabulary(lines.encode("utf-8"), MERGES_TEXT.encode("utf-8"))
    assert vocab.token_to_id == VOCAB.token_to_id


def test_load_errors():
    vocab_bytes = json.dumps(TOKEN_TABLE).encode("utf-8")
    merges_bytes = MERGES_TEXT.encode("utf-8")

    # duplicate token
    duplicated = b'{"a": 0, "a": 1, "' + SOS_TOKEN.encode() + b'": 2}'
    with pytest.raises(IntegrityError):
        ee.load_vocabulary(duplicated, merges_bytes)

    # missing special
    table = {token: token_id for token, token_id in TOKEN_TABLE.items() if token != EOS_TOKEN}
    with pytest.raises(IntegrityError):
        ee.load_vocabulary(json.dumps(table).encode("utf-8"), merges_bytes)

    # ids with a hole
    holed = dict(TOKEN_TABLE)
    holed[EOS_TOKEN] = len(TOKEN_TABLE) + 3
    with pytest.raises(IntegrityError):
        ee.load_vocabulary(json.dumps(holed).encode("utf-8"), merges_bytes)

    # merge line with three symbols, reported on its line
    with pytest.raises(ParseError) as e:
        ee.load_vocabulary(vocab_bytes, b"#version: 0.2\nd o\na b c\n")
    assert e.value.line_number == 3

    # duplicate merge
    with pytest.raises(IntegrityError):
        ee.load_vocabulary(vocab_bytes, b"d o\nd o\n")

    # malformed json
    with pytest.raises(ParseError):
        ee.load_vocabulary(b'{"a": 0,', merges_bytes)

    # bad utf-8
    with pytest.raises(ParseError):
        ee.load_vocabulary(b'{"\xff": 0}', merges_bytes)
