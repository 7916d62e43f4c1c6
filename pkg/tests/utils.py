import json
import os
import shutil
from functools import wraps

import numpy as np

import eosedit as ee
from eosedit.components.tokenizer import bytes_to_unicode
from eosedit.constants import EOS_TOKEN, SOS_TOKEN, WORD_END

""" utilities shared between all tests """


def clear_dir(path: str):
    """clears a dir"""
    for f in os.listdir(path):
        full_path = os.path.join(path, f)
        if os.path.isdir(full_path):
            shutil.rmtree(full_path)
        else:
            os.remove(full_path)


TMP_DIR = "tests/tmp/"

# decorator that clears the tmp/ directory before test
def clear_tmp(fn):
    if not os.path.exists(TMP_DIR):
        os.mkdir(TMP_DIR)

    @wraps(fn)
    def new_fn(*args, **kwargs):
        clear_dir(TMP_DIR)
        return fn(*args, **kwargs)

    return new_fn


def prepend_tmp(path):
    """prepents "TMP_DIR" to the path"""
    return os.path.join(TMP_DIR, path)


""" a small byte-level vocabulary: every byte, every byte ending a word, a few merges """

MERGES = [
    ("d", "o"),
    ("do", "g" + WORD_END),
    ("c", "a"),
    ("ca", "t" + WORD_END),
    ("p", "h"),
    ("o", "t"),
    ("ph", "ot"),
    ("phot", "o" + WORD_END),
    ("o", "f" + WORD_END),
]


def make_token_table(merges=MERGES) -> dict:
    """token -> id for the byte alphabet, the merge results and the two specials."""
    chars = list(bytes_to_unicode().values())
    tokens = chars + [char + WORD_END for char in chars]
    tokens += [left + right for left, right in merges]
    tokens += [SOS_TOKEN, EOS_TOKEN]
    return {token: token_id for token_id, token in enumerate(tokens)}


TOKEN_TABLE = make_token_table()

MERGES_TEXT = "#version: 0.2\n" + "".join(f"{left} {right}\n" for left, right in MERGES)

VOCAB = ee.load_vocabulary(json.dumps(TOKEN_TABLE).encode("utf-8"), MERGES_TEXT.encode("utf-8"))

ENCODER_CONFIG = ee.EncoderConfig(
    d_model=64, n_layers=2, n_heads=4, context_len=77, vocab_size=len(TOKEN_TABLE)
)

WEIGHTS = ee.EncoderWeights.random(ENCODER_CONFIG, seed=0)

ENCODER = ee.TextEncoder(vocab=VOCAB, weights=WEIGHTS, config=ENCODER_CONFIG)


def token_ids(*tokens) -> list:
    """ids of the given tokens in the test table."""
    return [TOKEN_TABLE[token] for token in tokens]


def write_artifacts(directory: str = TMP_DIR) -> dict:
    """Write vocab.json, merges.txt and the encoder archive, returns their paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {
        "vocab_path": os.path.join(directory, "vocab.json"),
        "merges_path": os.path.join(directory, "merges.txt"),
        "encoder_weights_path": os.path.join(directory, "encoder.safetensors"),
    }
    with open(paths["vocab_path"], "w", encoding="utf-8") as f:
        json.dump(TOKEN_TABLE, f)
    with open(paths["merges_path"], "w", encoding="utf-8") as f:
        f.write(MERGES_TEXT)
    WEIGHTS.save(paths["encoder_weights_path"], ENCODER_CONFIG)
    return paths


def random_embedding(prompt: str, seed: int, d_model: int = 64) -> ee.PromptEmbedding:
    """Embedding with random hidden states laid out on the tokens of ``prompt``."""
    rng = np.random.default_rng(seed)
    tokens = ee.encode(VOCAB, prompt)
    hidden = rng.standard_normal((tokens.context_len, d_model)).astype(np.float32)
    return ee.PromptEmbedding(
        hidden=hidden, tokens=tokens, eos_index=tokens.eos_index, prompt_text=prompt
    )
