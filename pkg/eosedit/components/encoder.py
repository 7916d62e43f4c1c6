# pylint: disable=too-many-locals
"""Causal transformer text encoder (CLIP text tower) in float32 numpy.

Maps a :class:`TokenSequence` to the final-layer, post layer-norm hidden states that
Stable Diffusion conditions on. Attention is strictly causal, so the hidden state of the first
``<EOS>`` summarizes the whole prompt to its left.
"""
import hashlib
import os
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pydantic as pd
from scipy import special

from .base import EoseditBaseModel, EoseditDataModel
from .types import Activation, Tensor32, TokenIds
from .validators import assert_finite, assert_ndim
from .tokenizer import TokenSequence, Vocabulary, encode, normalize_text
from .archive import ArchiveSource, read_archive, sidecar_path, write_archive
from ..constants import (
    CONTEXT_LEN,
    SD14_D_MODEL,
    SD14_LAYER_NORM_EPS,
    SD14_N_HEADS,
    SD14_N_LAYERS,
    SD14_VOCAB_SIZE,
)
from ..log import log, ArchiveError, InputError, IntegrityError, ValidationError

# tensor names follow the published SD 1.4 text encoder layout
TENSOR_PREFIX = "text_model."
TOKEN_EMBEDDING = TENSOR_PREFIX + "embeddings.token_embedding.weight"
POSITION_EMBEDDING = TENSOR_PREFIX + "embeddings.position_embedding.weight"
FINAL_NORM = TENSOR_PREFIX + "final_layer_norm"
LAYER_PREFIX = TENSOR_PREFIX + "encoder.layers.{index}."

# archive metadata keys
CONFIG_KEY = "encoder_config"
RECORD_KEY = "record"

# slope of the sigmoid approximation of gelu used by CLIP
QUICK_GELU_SLOPE = np.float32(1.702)


class EncoderConfig(EoseditBaseModel):
    """Architecture of a causal text encoder.

    Example
    -------
    >>> config = EncoderConfig.sd14()
    >>> config.head_dim
    64
    """

    d_model: pd.PositiveInt = pd.Field(
        SD14_D_MODEL, title="Width", description="Hidden state width (embedding dimension)."
    )

    n_layers: pd.PositiveInt = pd.Field(
        SD14_N_LAYERS, title="Layers", description="Number of transformer blocks."
    )

    n_heads: pd.PositiveInt = pd.Field(
        SD14_N_HEADS, title="Heads", description="Attention heads per block."
    )

    context_len: pd.PositiveInt = pd.Field(
        CONTEXT_LEN, title="Context Length", description="Token positions per prompt."
    )

    vocab_size: pd.PositiveInt = pd.Field(
        SD14_VOCAB_SIZE, title="Vocabulary Size", description="Rows of the token embedding."
    )

    activation: Activation = pd.Field(
        "quick_gelu", title="Activation", description="MLP nonlinearity."
    )

    layer_norm_eps: pd.PositiveFloat = pd.Field(
        SD14_LAYER_NORM_EPS,
        title="Layer Norm Epsilon",
        description="Variance floor of every layer norm.",
    )

    @pd.validator("n_heads", always=True)
    def _heads_divide_width(cls, val, values):
        """d_model must split evenly over heads."""
        d_model = values.get("d_model")
        if d_model is not None and d_model % val != 0:
            raise ValidationError(f"d_model={d_model} is not divisible by n_heads={val}.")
        return val

    @classmethod
    def sd14(cls) -> "EncoderConfig":
        """CLIP ViT-L/14 text tower as shipped with Stable Diffusion 1.4."""
        return cls()

    @property
    def head_dim(self) -> int:
        """Width of each attention head."""
        return self.d_model // self.n_heads

    @property
    def digest(self) -> str:
        """Short content hash identifying the architecture."""
        return hashlib.sha256(self.json().encode("utf-8")).hexdigest()[:16]

    def tensor_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Every tensor name of the published layout with the shape this config implies."""
        d_model, d_mlp = self.d_model, 4 * self.d_model
        shapes = {
            TOKEN_EMBEDDING: (self.vocab_size, d_model),
            POSITION_EMBEDDING: (self.context_len, d_model),
        }
        for index in range(self.n_layers):
            prefix = LAYER_PREFIX.format(index=index)
            for proj in ("q_proj", "k_proj", "v_proj", "out_proj"):
                shapes[f"{prefix}self_attn.{proj}.weight"] = (d_model, d_model)
                shapes[f"{prefix}self_attn.{proj}.bias"] = (d_model,)
            for norm in ("layer_norm1", "layer_norm2"):
                shapes[f"{prefix}{norm}.weight"] = (d_model,)
                shapes[f"{prefix}{norm}.bias"] = (d_model,)
            shapes[f"{prefix}mlp.fc1.weight"] = (d_mlp, d_model)
            shapes[f"{prefix}mlp.fc1.bias"] = (d_mlp,)
            shapes[f"{prefix}mlp.fc2.weight"] = (d_model, d_mlp)
            shapes[f"{prefix}mlp.fc2.bias"] = (d_model,)
        shapes[FINAL_NORM + ".weight"] = (d_model,)
        shapes[FINAL_NORM + ".bias"] = (d_model,)
        return shapes


class LayerWeights(EoseditDataModel):
    """Parameters of one pre-norm transformer block. Projection weights are (out, in)."""

    q_weight: Tensor32
    q_bias: Tensor32
    k_weight: Tensor32
    k_bias: Tensor32
    v_weight: Tensor32
    v_bias: Tensor32
    out_weight: Tensor32
    out_bias: Tensor32
    norm1_weight: Tensor32
    norm1_bias: Tensor32
    norm2_weight: Tensor32
    norm2_bias: Tensor32
    fc1_weight: Tensor32
    fc1_bias: Tensor32
    fc2_weight: Tensor32
    fc2_bias: Tensor32

    @pd.validator("*", always=True)
    def _all_finite(cls, val, field):
        """every parameter is finite."""
        if isinstance(val, np.ndarray) and not np.all(np.isfinite(val)):
            raise IntegrityError(f"layer parameter '{field.name}' holds non-finite entries.")
        return val


# tensor name suffix -> LayerWeights field
LAYER_FIELDS = {
    "self_attn.q_proj.weight": "q_weight",
    "self_attn.q_proj.bias": "q_bias",
    "self_attn.k_proj.weight": "k_weight",
    "self_attn.k_proj.bias": "k_bias",
    "self_attn.v_proj.weight": "v_weight",
    "self_attn.v_proj.bias": "v_bias",
    "self_attn.out_proj.weight": "out_weight",
    "self_attn.out_proj.bias": "out_bias",
    "layer_norm1.weight": "norm1_weight",
    "layer_norm1.bias": "norm1_bias",
    "layer_norm2.weight": "norm2_weight",
    "layer_norm2.bias": "norm2_bias",
    "mlp.fc1.weight": "fc1_weight",
    "mlp.fc1.bias": "fc1_bias",
    "mlp.fc2.weight": "fc2_weight",
    "mlp.fc2.bias": "fc2_bias",
}


class EncoderWeights(EoseditDataModel):
    """All parameters of a causal text encoder, float32 and read-only."""

    token_embedding: Tensor32 = pd.Field(
        ..., title="Token Embedding", description="(vocab_size, d_model) lookup table."
    )

    position_embedding: Tensor32 = pd.Field(
        ..., title="Position Embedding", description="(context_len, d_model) table."
    )

    layers: List[LayerWeights] = pd.Field(
        ..., title="Layers", description="Parameters of each transformer block, in order."
    )

    final_norm_weight: Tensor32 = pd.Field(
        ..., title="Final Norm Weight", description="Scale of the final layer norm."
    )

    final_norm_bias: Tensor32 = pd.Field(
        ..., title="Final Norm Bias", description="Shift of the final layer norm."
    )

    _token_finite = assert_finite("token_embedding", error=IntegrityError)
    _position_finite = assert_finite("position_embedding", error=IntegrityError)
    _norm_weight_finite = assert_finite("final_norm_weight", error=IntegrityError)
    _norm_bias_finite = assert_finite("final_norm_bias", error=IntegrityError)

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], config: EncoderConfig):
        """Build from a name -> array map in the published layout."""
        layers = []
        for index in range(config.n_layers):
            prefix = LAYER_PREFIX.format(index=index)
            layer_kwargs = {
                field: tensors[prefix + suffix] for suffix, field in LAYER_FIELDS.items()
            }
            layers.append(LayerWeights(**layer_kwargs))
        return cls(
            token_embedding=tensors[TOKEN_EMBEDDING],
            position_embedding=tensors[POSITION_EMBEDDING],
            layers=layers,
            final_norm_weight=tensors[FINAL_NORM + ".weight"],
            final_norm_bias=tensors[FINAL_NORM + ".bias"],
        )

    def to_tensors(self) -> Dict[str, np.ndarray]:
        """Name -> array map in the published layout."""
        tensors = {
            TOKEN_EMBEDDING: self.token_embedding,
            POSITION_EMBEDDING: self.position_embedding,
            FINAL_NORM + ".weight": self.final_norm_weight,
            FINAL_NORM + ".bias": self.final_norm_bias,
        }
        for index, layer in enumerate(self.layers):
            prefix = LAYER_PREFIX.format(index=index)
            for suffix, field in LAYER_FIELDS.items():
                tensors[prefix + suffix] = getattr(layer, field)
        return tensors

    @classmethod
    def random(cls, config: EncoderConfig, seed: int = 0, scale: float = 0.02) -> "EncoderWeights":
        """Random parameters for desk-scale profiles: normal weights, unit norms, zero biases."""
        rng = np.random.Generator(np.random.PCG64(seed))
        tensors = {}
        for name, shape in config.tensor_shapes().items():
            if "norm" in name:
                value = np.ones(shape) if name.endswith(".weight") else np.zeros(shape)
            elif name.endswith(".bias"):
                value = np.zeros(shape)
            else:
                value = scale * rng.standard_normal(shape)
            tensors[name] = value.astype(np.float32)
        return cls.from_tensors(tensors, config)

    def save(self, path: Union[str, os.PathLike], config: EncoderConfig) -> None:
        """Write to an archive, recording the config in its metadata."""
        write_archive(path, self.to_tensors(), metadata={CONFIG_KEY: config.json()})


def config_from_archive(archive: ArchiveSource) -> Optional[EncoderConfig]:
    """The :class:`EncoderConfig` recorded in an archive's metadata, if any."""
    _, metadata = read_archive(archive)
    raw = metadata.get(CONFIG_KEY)
    return None if raw is None else EncoderConfig.parse_raw(raw)


def load_weights(archive: ArchiveSource, config: EncoderConfig) -> EncoderWeights:
    """Load and shape-check encoder parameters from a named-tensor archive.

    Parameters
    ----------
    archive : Union[str, bytes, BinaryIO]
        Archive with every tensor of the published SD 1.4 text encoder layout.
    config : :class:`EncoderConfig`
        Architecture the tensors must match.

    Returns
    -------
    :class:`EncoderWeights`
        float32 parameters.
    """
    tensors, _ = read_archive(archive)
    expected = config.tensor_shapes()

    missing = [name for name in expected if name not in tensors]
    if missing:
        raise ArchiveError(f"archive is missing {len(missing)} tensors: {missing}.")

    for name, shape in expected.items():
        found = tuple(tensors[name].shape)
        if found != shape:
            raise ArchiveError(f"tensor '{name}' has shape {found}, expected {shape}.")

    extra = sorted(set(tensors) - set(expected))
    if extra:
        log.debug(f"Ignoring {len(extra)} tensors not used by the encoder: {extra}.")

    converted = {name: tensors[name].astype(np.float32) for name in expected}
    weights = EncoderWeights.from_tensors(converted, config)
    log.info(
        f"Loaded text encoder ({config.n_layers} layers, d_model={config.d_model}, "
        f"{sum(t.size for t in converted.values())} parameters)."
    )
    return weights


""" forward pass """


def _layer_norm(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, eps: float) -> np.ndarray:
    """Layer norm over the last axis."""
    mean = x.mean(axis=-1, keepdims=True)
    var = np.square(x - mean).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + np.float32(eps)) * weight + bias


def _activate(x: np.ndarray, activation: str) -> np.ndarray:
    """MLP nonlinearity."""
    if activation == "quick_gelu":
        return x * special.expit(QUICK_GELU_SLOPE * x)
    return np.float32(0.5) * x * (np.float32(1.0) + special.erf(x / np.float32(np.sqrt(2.0))))


def _causal_mask(length: int) -> np.ndarray:
    """True where query i may attend key j, i.e. j <= i."""
    return np.tril(np.ones((length, length), dtype=bool))


def _causal_self_attention(h: np.ndarray, layer: LayerWeights, n_heads: int) -> np.ndarray:
    """Exact multi-head attention where position i only sees positions <= i."""
    length, d_model = h.shape
    head_dim = d_model // n_heads
    scale = np.float32(head_dim**-0.5)

    query = (h @ layer.q_weight.T + layer.q_bias) * scale
    key = h @ layer.k_weight.T + layer.k_bias
    value = h @ layer.v_weight.T + layer.v_bias

    # (heads, length, head_dim)
    query = query.reshape(length, n_heads, head_dim).transpose(1, 0, 2)
    key = key.reshape(length, n_heads, head_dim).transpose(1, 0, 2)
    value = value.reshape(length, n_heads, head_dim).transpose(1, 0, 2)

    scores = query @ key.transpose(0, 2, 1)
    scores = np.where(_causal_mask(length), scores, np.float32(-np.inf))
    scores = scores - scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs = probs / probs.sum(axis=-1, keepdims=True)

    attended = (probs @ value).transpose(1, 0, 2).reshape(length, d_model)
    return attended @ layer.out_weight.T + layer.out_bias


def _block(x: np.ndarray, layer: LayerWeights, config: EncoderConfig) -> np.ndarray:
    """One pre-norm transformer block."""
    eps = config.layer_norm_eps
    h = _layer_norm(x, layer.norm1_weight, layer.norm1_bias, eps)
    x = x + _causal_self_attention(h, layer, config.n_heads)
    h = _layer_norm(x, layer.norm2_weight, layer.norm2_bias, eps)
    h = _activate(h @ layer.fc1_weight.T + layer.fc1_bias, config.activation)
    return x + (h @ layer.fc2_weight.T + layer.fc2_bias)


class EmbeddingRecord(EoseditBaseModel):
    """Sidecar record of a dumped embedding: enough to audit or rebuild it."""

    prompt_text: str = pd.Field(..., title="Prompt", description="Prompt exactly as given.")
    normalized_prompt: str = pd.Field(
        "", title="Normalized Prompt", description="Prompt after tokenizer normalization."
    )
    token_ids: TokenIds = pd.Field(..., title="Token Ids", description="Encoded prompt ids.")
    sos_id: pd.NonNegativeInt = pd.Field(..., title="Start Id")
    eos_id: pd.NonNegativeInt = pd.Field(..., title="End Id")
    eos_index: pd.PositiveInt = pd.Field(..., title="EOS Index")
    config_digest: Optional[str] = pd.Field(
        None, title="Config Digest", description="Digest of the producing encoder config."
    )
    source_prompt: Optional[str] = pd.Field(None, title="Edit Source Prompt")
    target_prompt: Optional[str] = pd.Field(None, title="Edit Target Prompt")
    w: Optional[float] = pd.Field(None, title="Edit Guidance Scale")
    source_eos_index: Optional[int] = pd.Field(None, title="Edited Slot")
    target_eos_norm: Optional[pd.NonNegativeFloat] = pd.Field(None, title="Target EOS Norm")


class PromptEmbedding(EoseditDataModel):
    """Per-position hidden states of one prompt, shape (context_len, d_model), float32."""

    hidden: Tensor32 = pd.Field(
        ..., title="Hidden States", description="Final-layer post layer-norm hidden states."
    )

    tokens: TokenSequence = pd.Field(
        ..., title="Tokens", description="Token sequence the hidden states were computed from."
    )

    eos_index: pd.PositiveInt = pd.Field(
        ..., title="EOS Index", description="Row holding the first end-of-sequence state."
    )

    prompt_text: str = pd.Field(
        "", title="Prompt Text", description="Prompt the embedding was computed from."
    )

    _hidden_2d = assert_ndim("hidden", 2)
    _hidden_finite = assert_finite("hidden")

    @pd.validator("eos_index", always=True)
    def _matches_tokens(cls, val, values):
        """eos_index copied from the tokens, rows match token positions."""
        tokens = values.get("tokens")
        hidden = values.get("hidden")
        if tokens is None:
            return val
        if val != tokens.eos_index:
            raise ValidationError(
                f"eos_index={val} differs from tokens.eos_index={tokens.eos_index}."
            )
        if hidden is not None and hidden.shape[0] != tokens.context_len:
            raise ValidationError(
                f"hidden has {hidden.shape[0]} rows for {tokens.context_len} token positions."
            )
        return val

    @property
    def context_len(self) -> int:
        """Number of positions."""
        return self.hidden.shape[0]

    @property
    def d_model(self) -> int:
        """Hidden width."""
        return self.hidden.shape[1]

    def record(self, config: EncoderConfig = None, **edit_fields) -> EmbeddingRecord:
        """Sidecar record describing this embedding."""
        return EmbeddingRecord(
            prompt_text=self.prompt_text,
            normalized_prompt=normalize_text(self.prompt_text),
            token_ids=self.tokens.ids,
            sos_id=self.tokens.sos_id,
            eos_id=self.tokens.eos_id,
            eos_index=self.eos_index,
            config_digest=None if config is None else config.digest,
            **edit_fields,
        )

    def save(
        self, path: Union[str, os.PathLike], config: EncoderConfig = None, **edit_fields
    ) -> EmbeddingRecord:
        """Write the hidden states to an archive plus a json sidecar record."""
        record = self.record(config=config, **edit_fields)
        write_archive(path, {"hidden": self.hidden}, metadata={RECORD_KEY: record.json()})
        record.to_file(sidecar_path(path))
        return record

    @classmethod
    def load(cls, path: ArchiveSource) -> "PromptEmbedding":
        """Read an embedding written by :meth:`save`."""
        embedding, _ = cls.load_with_record(path)
        return embedding

    @classmethod
    def load_with_record(cls, path: ArchiveSource) -> Tuple["PromptEmbedding", EmbeddingRecord]:
        """Read an embedding written by :meth:`save` together with its stored record."""
        tensors, metadata = read_archive(path)
        if "hidden" not in tensors or RECORD_KEY not in metadata:
            raise ArchiveError("archive does not hold a prompt embedding.")
        record = EmbeddingRecord.parse_raw(metadata[RECORD_KEY])
        tokens = TokenSequence(
            ids=record.token_ids,
            sos_id=record.sos_id,
            eos_id=record.eos_id,
            eos_index=record.eos_index,
            content_len=record.eos_index - 1,
        )
        embedding = cls(
            hidden=tensors["hidden"],
            tokens=tokens,
            eos_index=record.eos_index,
            prompt_text=record.prompt_text,
        )
        return embedding, record



def encode_tokens(
    weights: EncoderWeights, config: EncoderConfig, seq: TokenSequence, prompt_text: str = ""
) -> PromptEmbedding:
    """Run the causal text encoder on a token sequence.

    Parameters
    ----------
    weights : :class:`EncoderWeights`
        Encoder parameters.
    config : :class:`EncoderConfig`
        Architecture of ``weights``.
    seq : :class:`TokenSequence`
        Tokens to encode, ``context_len`` long.
    prompt_text : str = ""
        Provenance stored on the result.

    Returns
    -------
    :class:`PromptEmbedding`
        Final-layer hidden states after the final layer norm.
    """
    ids = np.asarray(seq.ids, dtype=np.int64)
    if ids.max() >= config.vocab_size:
        raise InputError(
            f"token id {int(ids.max())} outside vocabulary of size {config.vocab_size}."
        )
    if len(ids) > config.context_len:
        raise InputError(f"{len(ids)} tokens exceed the encoder context of {config.context_len}.")

    x = weights.token_embedding[ids] + weights.position_embedding[: len(ids)]
    for layer in weights.layers:
        x = _block(x, layer, config)
    hidden = _layer_norm(
        x, weights.final_norm_weight, weights.final_norm_bias, config.layer_norm_eps
    )

    return PromptEmbedding(
        hidden=hidden.astype(np.float32, copy=False),
        tokens=seq,
        eos_index=seq.eos_index,
        prompt_text=prompt_text,
    )


def eos_state(emb: PromptEmbedding) -> np.ndarray:
    """Copy of the hidden state at the first end-of-sequence position."""
    return np.array(emb.hidden[emb.eos_index], dtype=np.float32, copy=True)


class TextEncoder(EoseditBaseModel):
    """Tokenizer and encoder bundled: prompt text in, :class:`PromptEmbedding` out."""

    vocab: Vocabulary = pd.Field(..., title="Vocabulary", description="Tokenizer tables.")

    weights: EncoderWeights = pd.Field(..., title="Weights", description="Encoder parameters.")

    config: EncoderConfig = pd.Field(..., title="Config", description="Encoder architecture.")

    @pd.validator("config", always=True)
    def _tokenizer_matches_encoder(cls, val, values):
        """context length and vocabulary size agree between tokenizer and encoder."""
        vocab = values.get("vocab")
        if vocab is not None:
            if vocab.context_len != val.context_len:
                raise ValidationError(
                    f"tokenizer context_len={vocab.context_len} differs from "
                    f"encoder context_len={val.context_len}."
                )
            if vocab.vocab_size > val.vocab_size:
                raise ValidationError(
                    f"tokenizer has {vocab.vocab_size} tokens, encoder only {val.vocab_size}."
                )
        return val

    def __hash__(self) -> int:
        """Hash on the parts, without serializing the weights."""
        return hash((hash(self.vocab), self.weights.digest, self.config.digest))

    def tokenize(self, prompt: str) -> TokenSequence:
        """Encode a prompt to token ids."""
        return encode(self.vocab, prompt)

    def embed(self, prompt: str) -> PromptEmbedding:
        """Tokenize and encode a prompt."""
        log.debug(f"Encoding prompt {prompt!r} (normalized {normalize_text(prompt)!r}).")
        return encode_tokens(self.weights, self.config, self.tokenize(prompt), prompt_text=prompt)
