"""The ``<EOS>`` slot edit: write ``w`` times the target prompt's ``<EOS>`` state into the
source prompt's first ``<EOS>`` position, leaving every other position untouched.

    sigma(s, g) = [ s_{<SOS>:N} | w * g_{<EOS>} ]
"""
import math
import os
from typing import List, Sequence, Union

import numpy as np
import pydantic as pd

from .base import EoseditBaseModel, EoseditDataModel
from .encoder import EncoderConfig, PromptEmbedding, TextEncoder, eos_state
from .validators import assert_finite_scalar
from ..constants import DEFAULT_W
from ..log import log, InputError, ShapeError, ValidationError


class EditSpec(EoseditBaseModel):
    """Source prompt, target prompt and guidance scale of one ``<EOS>`` edit.

    Example
    -------
    >>> spec = EditSpec(source_prompt="a headshot of a woman", target_prompt="eyeglasses")
    >>> spec.w
    1.0
    """

    source_prompt: str = pd.Field(
        ..., title="Source Prompt", description="Prompt whose embedding is edited."
    )

    target_prompt: str = pd.Field(
        ..., title="Target Prompt", description="Prompt whose ``<EOS>`` state is injected."
    )

    w: float = pd.Field(
        DEFAULT_W,
        title="Guidance Scale",
        description="Multiplier on the injected target ``<EOS>`` state.",
    )

    _w_finite = assert_finite_scalar("w")

    def apply(self, encoder: TextEncoder) -> "EditedEmbedding":
        """Encode both prompts and apply the edit."""
        source = encoder.embed(self.source_prompt)
        target = encoder.embed(self.target_prompt)
        return apply_eos_edit(source, target, self.w)


class EditedEmbedding(EoseditDataModel):
    """Result of an ``<EOS>`` edit: the edited embedding plus what produced it."""

    embedding: PromptEmbedding = pd.Field(
        ...,
        title="Edited Embedding",
        description="Source embedding with its first ``<EOS>`` row replaced; tokens are the "
        "source's tokens.",
    )

    source_eos_index: pd.PositiveInt = pd.Field(
        ..., title="Edited Slot", description="Row of the source embedding that was replaced."
    )

    applied_w: float = pd.Field(..., title="Applied Scale", description="Guidance scale used.")

    target_eos_norm: pd.NonNegativeFloat = pd.Field(
        ...,
        title="Target EOS Norm",
        description="L2 norm of the unscaled target ``<EOS>`` state, a diagnostic.",
    )

    target_prompt: str = pd.Field(
        "", title="Target Prompt", description="Prompt the injected state came from."
    )

    @pd.validator("source_eos_index", always=True)
    def _slot_is_source_eos(cls, val, values):
        """the edited row is the source's first ``<EOS>``."""
        embedding = values.get("embedding")
        if embedding is not None and val != embedding.eos_index:
            raise ValidationError(
                f"source_eos_index={val} differs from the embedding eos_index={embedding.eos_index}."
            )
        return val

    @property
    def source_prompt(self) -> str:
        """Prompt of the edited source."""
        return self.embedding.prompt_text

    def save(self, path: Union[str, os.PathLike], config: EncoderConfig = None) -> None:
        """Write the edited embedding with its edit metadata (readable by
        :meth:`PromptEmbedding.load`, so edits can be chained)."""
        self.embedding.save(
            path,
            config=config,
            source_prompt=self.source_prompt,
            target_prompt=self.target_prompt,
            w=self.applied_w,
            source_eos_index=self.source_eos_index,
            target_eos_norm=self.target_eos_norm,
        )


def _check_compatible(first: PromptEmbedding, second: PromptEmbedding) -> None:
    """Raise ShapeError unless the two embeddings come from the same encoder geometry."""
    if first.d_model != second.d_model:
        raise ShapeError(f"d_model mismatch: {first.d_model} vs {second.d_model}.")
    if first.context_len != second.context_len:
        raise ShapeError(f"context_len mismatch: {first.context_len} vs {second.context_len}.")


def apply_eos_edit(source: PromptEmbedding, target: PromptEmbedding, w: float) -> EditedEmbedding:
    """Replace the source's first ``<EOS>`` row with ``w`` times the target's ``<EOS>`` row.

    Parameters
    ----------
    source : :class:`PromptEmbedding`
        Embedding to edit; it is not modified.
    target : :class:`PromptEmbedding`
        Embedding whose ``<EOS>`` state is injected, taken at its own ``<EOS>`` position.
    w : float
        Guidance scale, applied in float32.

    Returns
    -------
    :class:`EditedEmbedding`
        Rows other than ``source.eos_index`` are bit-identical to ``source``; padding rows after
        the slot keep the source's states.
    """
    if not math.isfinite(w):
        raise InputError(f"guidance scale must be finite, given {w}.")
    _check_compatible(source, target)

    g_eos = eos_state(target)
    hidden = np.array(source.hidden, dtype=np.float32, copy=True)
    hidden[source.eos_index] = np.float32(w) * g_eos

    edited = PromptEmbedding(
        hidden=hidden,
        tokens=source.tokens,
        eos_index=source.eos_index,
        prompt_text=source.prompt_text,
    )
    log.debug(
        f"Edited slot {source.eos_index} of {source.prompt_text!r} "
        f"with {w} x <EOS> of {target.prompt_text!r}."
    )
    return EditedEmbedding(
        embedding=edited,
        source_eos_index=source.eos_index,
        applied_w=float(w),
        target_eos_norm=float(np.linalg.norm(g_eos.astype(np.float64))),
        target_prompt=target.prompt_text,
    )


def sweep_guidance(
    source: PromptEmbedding, target: PromptEmbedding, w_values: Sequence[float]
) -> List[EditedEmbedding]:
    """:func:`apply_eos_edit` mapped over ``w_values``, in order."""
    w_values = list(w_values)
    if not w_values:
        raise InputError("sweep needs at least one guidance scale.")
    bad = [w for w in w_values if not math.isfinite(w)]
    if bad:
        raise InputError(f"sweep guidance scales must be finite, given {bad}.")
    return [apply_eos_edit(source, target, w) for w in w_values]


def embedding_distance(first: PromptEmbedding, second: PromptEmbedding) -> float:
    """Frobenius norm of the difference of two hidden state matrices (accumulated in float64)."""
    if first.hidden.shape != second.hidden.shape:
        raise ShapeError(f"shape mismatch: {first.hidden.shape} vs {second.hidden.shape}.")
    diff = first.hidden.astype(np.float64) - second.hidden.astype(np.float64)
    return float(np.linalg.norm(diff))


def load_conditioning(path: Union[str, os.PathLike]) -> Union[EditedEmbedding, PromptEmbedding]:
    """Read a dumped embedding, as an :class:`EditedEmbedding` when its record holds an edit.

    Parameters
    ----------
    path : Union[str, os.PathLike]
        Archive written by :meth:`PromptEmbedding.save` or :meth:`EditedEmbedding.save`.

    Returns
    -------
    Union[:class:`EditedEmbedding`, :class:`.PromptEmbedding`]
        The edit with its target prompt and scale, or the plain embedding.
    """
    embedding, record = PromptEmbedding.load_with_record(path)
    if record.w is None:
        return embedding

    slot = embedding.eos_index if record.source_eos_index is None else record.source_eos_index
    target_eos_norm = record.target_eos_norm
    if target_eos_norm is None:
        row = embedding.hidden[slot].astype(np.float64)
        target_eos_norm = float(np.linalg.norm(row)) / abs(record.w) if record.w != 0 else 0.0
    return EditedEmbedding(
        embedding=embedding,
        source_eos_index=slot,
        applied_w=record.w,
        target_eos_norm=target_eos_norm,
        target_prompt=record.target_prompt or "",
    )
