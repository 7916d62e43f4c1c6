""" tests against the frozen SD 1.4 reference, checkpoint tests need EOSEDIT_SD14_DIR """
import os

import numpy as np
import pytest

import eosedit as ee
from eosedit.constants import SD14_EOS_ID, SD14_SOS_ID, SD14_VOCAB_SIZE

from .sd14_reference import (
    HIDDEN_PROMPTS,
    load_corpus,
    load_hidden,
    load_token_ids,
    reference_hidden,
    reference_token_ids,
    reference_tokenizer,
)

SD14_DIR = os.environ.get("EOSEDIT_SD14_DIR")

# largest allowed |difference| between our hidden states and the reference
HIDDEN_ATOL = 1e-4


def sd14_path(*parts) -> str:
    if SD14_DIR is None:
        pytest.skip("EOSEDIT_SD14_DIR not set")
    path = os.path.join(SD14_DIR, *parts)
    if not os.path.exists(path):
        pytest.skip(f"{path} not in the checkpoint")
    return path


@pytest.fixture(scope="module")
def vocab():
    return ee.load_vocabulary(
        sd14_path("tokenizer", "vocab.json"), sd14_path("tokenizer", "merges.txt")
    )


@pytest.fixture(scope="module")
def encoder(vocab):
    config = ee.EncoderConfig.sd14()
    weights = ee.load_weights(sd14_path("text_encoder", "model.safetensors"), config)
    return ee.TextEncoder(vocab=vocab, weights=weights, config=config)


def mismatched_prompts(vocab, expected: dict) -> list:
    return [prompt for prompt, ids in expected.items() if ee.encode(vocab, prompt).ids != ids]


def max_abs_errors(encoder, expected: dict) -> dict:
    return {
        prompt: float(np.max(np.abs(encoder.embed(prompt).hidden - hidden)))
        for prompt, hidden in expected.items()
    }


def test_corpus():
    corpus = load_corpus()
    assert len(corpus) >= 200
    assert len(set(corpus)) == len(corpus)
    for prompt in HIDDEN_PROMPTS:
        assert prompt == "" or prompt in corpus
    for prompt in (
        "a headshot of a woman",
        "a headshot of a man",
        "a nurse, man, glasses",
        "a dog",
        "painting",
        "a person with an eyeglass",
    ):
        assert prompt in corpus


def test_vocabulary(vocab):
    assert vocab.vocab_size == SD14_VOCAB_SIZE
    assert (vocab.sos_id, vocab.eos_id) == (SD14_SOS_ID, SD14_EOS_ID)


def test_token_ids(vocab):
    dog = ee.encode(vocab, "a dog")
    assert dog.ids[:4] == [SD14_SOS_ID, 320, 1929, SD14_EOS_ID]
    assert dog.eos_index == 3
    assert dog.ids[4:] == [SD14_EOS_ID] * 73

    cat = ee.encode(vocab, "a photo of a cat")
    assert cat.ids[:7] == [SD14_SOS_ID, 320, 1125, 539, 320, 2368, SD14_EOS_ID]
    assert cat.eos_index == 6


def test_token_ids_match_frozen_corpus(vocab):
    expected = load_token_ids()
    if not expected:
        pytest.skip("frozen token ids not written, run `python -m tests.sd14_reference`")
    assert set(load_corpus()) <= set(expected)
    assert mismatched_prompts(vocab, expected) == []


def test_token_ids_match_transformers(vocab):
    pytest.importorskip("transformers")
    pytest.importorskip("ftfy")
    expected = reference_token_ids(reference_tokenizer(SD14_DIR), load_corpus() + [""])
    assert mismatched_prompts(vocab, expected) == []


def test_hidden_states_match_frozen(encoder):
    expected = load_hidden()
    if not expected:
        pytest.skip("frozen hidden states not written, run `python -m tests.sd14_reference`")
    assert len(expected) >= 10
    errors = max_abs_errors(encoder, expected)
    assert {prompt: err for prompt, err in errors.items() if err > HIDDEN_ATOL} == {}


def test_hidden_states_match_transformers(encoder):
    pytest.importorskip("transformers")
    pytest.importorskip("torch")
    token_ids = {prompt: encoder.tokenize(prompt).ids for prompt in HIDDEN_PROMPTS}
    expected = reference_hidden(SD14_DIR, token_ids)
    assert len(expected) >= 10
    errors = max_abs_errors(encoder, expected)
    assert {prompt: err for prompt, err in errors.items() if err > HIDDEN_ATOL} == {}
