""" tests the causal text encoder """
import numpy as np
import pytest

import eosedit as ee
from eosedit.components.archive import read_archive, write_archive
from eosedit.components.encoder import FINAL_NORM, LAYER_PREFIX, config_from_archive
from eosedit.log import ArchiveError, InputError, IntegrityError, ValidationError

from .utils import ENCODER, ENCODER_CONFIG, VOCAB, WEIGHTS, clear_tmp, prepend_tmp


def test_config():
    config = ee.EncoderConfig.sd14()
    assert (config.d_model, config.n_layers, config.n_heads) == (768, 12, 12)
    assert config.context_len == 77
    assert config.vocab_size == 49408
    assert config.head_dim == 64
    assert config.digest == ee.EncoderConfig().digest
    assert config.digest != ENCODER_CONFIG.digest

    with pytest.raises(ValidationError):
        ee.EncoderConfig(d_model=64, n_heads=5)


def test_tensor_layout():
    shapes = ENCODER_CONFIG.tensor_shapes()
    assert len(shapes) == 4 + 16 * ENCODER_CONFIG.n_layers
    assert shapes[LAYER_PREFIX.format(index=1) + "mlp.fc1.weight"] == (256, 64)
    assert set(WEIGHTS.to_tensors()) == set(shapes)


def test_embedding_shape():
    emb = ENCODER.embed("a photo of a cat")
    assert emb.hidden.shape == (77, 64)
    assert emb.hidden.dtype == np.float32
    assert np.all(np.isfinite(emb.hidden))
    assert emb.eos_index == 6
    assert emb.prompt_text == "a photo of a cat"
    assert not emb.hidden.flags.writeable


def test_deterministic():
    first = ENCODER.embed("a dog")
    second = ENCODER.embed("a dog")
    assert np.array_equal(first.hidden, second.hidden)
    assert first == second


WORDS = ["a", "dog", "cat", "photo", "of", "zebra", "red", "blue", "in", "the", "snow", "night"]


def test_causal():
    """positions left of the first differing token see bit-identical states."""
    rng = np.random.default_rng(7)
    for _ in range(20):
        prefix = list(rng.choice(WORDS, size=int(rng.integers(0, 6))))
        first_word, second_word = rng.choice(WORDS, size=2, replace=False)
        first = ENCODER.embed(" ".join(prefix + [first_word] + list(rng.choice(WORDS, size=2))))
        second = ENCODER.embed(" ".join(prefix + [second_word] + list(rng.choice(WORDS, size=2))))

        mismatch = np.nonzero(np.asarray(first.tokens.ids) != np.asarray(second.tokens.ids))[0]
        agree = int(mismatch[0])
        assert agree >= 1
        assert np.array_equal(first.hidden[:agree], second.hidden[:agree])
        assert not np.array_equal(first.hidden[agree], second.hidden[agree])

    cat = ENCODER.embed("a photo of a cat")
    dog = ENCODER.embed("a photo of a dog")
    assert np.array_equal(cat.hidden[:5], dog.hidden[:5])
    assert not np.allclose(ee.eos_state(cat), ee.eos_state(dog))



def test_padding_rows_differ_from_eos_row():
    emb = ENCODER.embed("a dog")
    assert not np.array_equal(emb.hidden[emb.eos_index], emb.hidden[emb.eos_index + 1])


def test_eos_state_copy():
    emb = ENCODER.embed("a dog")
    state = ee.eos_state(emb)
    state[:] = 0.0
    assert np.any(emb.hidden[emb.eos_index] != 0.0)


def test_gelu_activation():
    config = ENCODER_CONFIG.copy(update=dict(activation="gelu"))
    seq = ENCODER.tokenize("a dog")
    quick = ee.encode_tokens(WEIGHTS, ENCODER_CONFIG, seq)
    exact = ee.encode_tokens(WEIGHTS, config, seq)
    assert quick.hidden.shape == exact.hidden.shape
    np.testing.assert_allclose(quick.hidden, exact.hidden, atol=0.1)


def test_token_out_of_range():
    small = ENCODER_CONFIG.copy(update=dict(vocab_size=100))
    with pytest.raises(InputError):
        ee.encode_tokens(WEIGHTS, small, ENCODER.tokenize("a dog"))


def test_tokenizer_must_match_encoder():
    with pytest.raises(ValidationError):
        ee.TextEncoder(
            vocab=VOCAB, weights=WEIGHTS, config=ENCODER_CONFIG.copy(update=dict(context_len=16))
        )
    with pytest.raises(ValidationError):
        ee.TextEncoder(
            vocab=VOCAB, weights=WEIGHTS, config=ENCODER_CONFIG.copy(update=dict(vocab_size=10))
        )


@clear_tmp
def test_load_weights():
    path = prepend_tmp("encoder.safetensors")
    WEIGHTS.save(path, ENCODER_CONFIG)
    assert config_from_archive(path) == ENCODER_CONFIG
    weights = ee.load_weights(path, ENCODER_CONFIG)
    assert weights == WEIGHTS

    seq = ENCODER.tokenize("a photo of a cat")
    assert np.array_equal(
        ee.encode_tokens(weights, ENCODER_CONFIG, seq).hidden,
        ee.encode_tokens(WEIGHTS, ENCODER_CONFIG, seq).hidden,
    )


@clear_tmp
def test_load_weights_float16_and_extra():
    path = prepend_tmp("encoder.safetensors")
    tensors = {name: value.astype(np.float16) for name, value in WEIGHTS.to_tensors().items()}
    tensors["text_model.embeddings.position_ids"] = np.arange(77, dtype=np.int64)[None]
    write_archive(path, tensors)
    weights = ee.load_weights(path, ENCODER_CONFIG)
    assert weights.token_embedding.dtype == np.float32
    assert config_from_archive(path) is None


@clear_tmp
def test_load_weights_errors():
    path = prepend_tmp("encoder.safetensors")
    tensors = WEIGHTS.to_tensors()

    # missing final norm
    missing = {name: value for name, value in tensors.items() if not name.startswith(FINAL_NORM)}
    write_archive(path, missing)
    with pytest.raises(ArchiveError):
        ee.load_weights(path, ENCODER_CONFIG)

    # transposed mlp weight
    transposed = dict(tensors)
    fc1 = LAYER_PREFIX.format(index=0) + "mlp.fc1.weight"
    transposed[fc1] = tensors[fc1].T
    write_archive(path, transposed)
    with pytest.raises(ArchiveError):
        ee.load_weights(path, ENCODER_CONFIG)

    # non-finite parameter
    poisoned = dict(tensors)
    bias = LAYER_PREFIX.format(index=1) + "mlp.fc2.bias"
    poisoned[bias] = np.full_like(tensors[bias], np.nan)
    write_archive(path, poisoned)
    with pytest.raises(IntegrityError):
        ee.load_weights(path, ENCODER_CONFIG)

    # not an archive
    with open(path, "wb") as f:
        f.write(b"\x01\x00")
    with pytest.raises(ArchiveError):
        ee.load_weights(path, ENCODER_CONFIG)

    with pytest.raises(ArchiveError):
        ee.load_weights(prepend_tmp("missing.safetensors"), ENCODER_CONFIG)


@clear_tmp
def test_archive_metadata():
    path = prepend_tmp("archive.safetensors")
    write_archive(path, {"x": np.zeros((2, 3), dtype=np.float32)}, metadata={"k": 5})
    tensors, metadata = read_archive(path)
    assert tensors["x"].shape == (2, 3)
    assert metadata == {"k": "5"}
