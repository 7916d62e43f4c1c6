""" frozen SD 1.4 reference data: the prompt corpus, its token ids and a set of hidden states

The frozen files are written by the ``transformers`` reference from a local checkpoint:

    python -m tests.sd14_reference /path/to/stable-diffusion-v1-4
"""
import json
import os
import sys

import numpy as np

from eosedit.components.archive import read_archive, write_archive

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
CORPUS_PATH = os.path.join(DATA_DIR, "prompt_corpus.txt")
TOKEN_IDS_PATH = os.path.join(DATA_DIR, "sd14_token_ids.json")
HIDDEN_PATH = os.path.join(DATA_DIR, "sd14_hidden.safetensors")

CONTEXT_LEN = 77

# prompts whose final hidden states are frozen
HIDDEN_PROMPTS = [
    "a headshot of a woman",
    "a headshot of a man",
    "a nurse, man, glasses",
    "a dog",
    "painting",
    "a person with an eyeglass",
    "a photo of a cat",
    "eyeglasses",
    "an astronaut riding a horse",
    "A  Photo of a CAT!",
    "café au lait",
    "",
]


def load_corpus() -> list:
    """Prompts of the frozen corpus, one per line, kept verbatim."""
    with open(CORPUS_PATH, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def hidden_key(index: int) -> str:
    return f"hidden_{index:03d}"


def load_token_ids() -> dict:
    """prompt -> reference ids, empty when the frozen ids were never written."""
    if not os.path.exists(TOKEN_IDS_PATH):
        return {}
    with open(TOKEN_IDS_PATH, encoding="utf-8") as f:
        return json.load(f)


def load_hidden() -> dict:
    """prompt -> reference hidden states, empty when the archive was never written."""
    if not os.path.exists(HIDDEN_PATH):
        return {}
    tensors, metadata = read_archive(HIDDEN_PATH)
    prompts = json.loads(metadata["prompts"])
    return {prompt: tensors[hidden_key(index)] for index, prompt in enumerate(prompts)}


def reference_tokenizer(sd14_dir: str):
    """``transformers`` CLIP tokenizer of the checkpoint."""
    import transformers  # pylint:disable=import-outside-toplevel

    return transformers.CLIPTokenizer.from_pretrained(sd14_dir, subfolder="tokenizer")


def reference_token_ids(tokenizer, prompts: list) -> dict:
    """prompt -> padded, truncated ids from the reference tokenizer."""
    return {
        prompt: tokenizer(
            prompt, padding="max_length", max_length=CONTEXT_LEN, truncation=True
        ).input_ids
        for prompt in prompts
    }


def reference_hidden(sd14_dir: str, token_ids: dict) -> dict:
    """prompt -> float32 final hidden states of the reference text encoder."""
    import torch  # pylint:disable=import-outside-toplevel
    import transformers  # pylint:disable=import-outside-toplevel

    model = transformers.CLIPTextModel.from_pretrained(sd14_dir, subfolder="text_encoder")
    model = model.float().eval()
    hidden = {}
    with torch.no_grad():
        for prompt, ids in token_ids.items():
            states = model(torch.tensor([ids])).last_hidden_state[0]
            hidden[prompt] = states.numpy().astype(np.float32)
    return hidden


def write_reference(sd14_dir: str) -> None:
    """Freeze the corpus ids and the hidden states of :data:`HIDDEN_PROMPTS`."""
    tokenizer = reference_tokenizer(sd14_dir)
    token_ids = reference_token_ids(tokenizer, load_corpus() + [""])
    with open(TOKEN_IDS_PATH, "w", encoding="utf-8") as f:
        json.dump(token_ids, f, indent=1, ensure_ascii=False)

    hidden_ids = reference_token_ids(tokenizer, HIDDEN_PROMPTS)
    hidden = reference_hidden(sd14_dir, hidden_ids)
    tensors = {hidden_key(index): hidden[prompt] for index, prompt in enumerate(HIDDEN_PROMPTS)}
    write_archive(HIDDEN_PATH, tensors, metadata={"prompts": json.dumps(HIDDEN_PROMPTS)})


if __name__ == "__main__":
    write_reference(sys.argv[1])
