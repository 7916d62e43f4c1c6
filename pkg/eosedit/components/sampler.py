"""Deterministic text-to-image sampling: seeded latent, guided DDIM loop, decode."""
import hashlib
import io
import json
import logging
import os
from typing import Optional, Union

import numpy as np
import pydantic as pd
from PIL import Image, PngImagePlugin
from rich.progress import Progress

from .archive import sidecar_path, write_archive
from .backend import Backend, make_backend
from .base import EoseditBaseModel, EoseditDataModel
from .edit import EditedEmbedding
from .encoder import PromptEmbedding
from .fileio import atomic_write_bytes
from .schedule import build_schedule, cfg_combine, ddim_step, sample_initial_latent
from .types import BackendId, Pixels, Tensor32, TokenIds
from .validators import assert_finite_scalar
from ..constants import DEFAULT_STEPS, MAX_SEED
from ..log import log, NumericError, ShapeError, ValidationError
from ..version import __version__

# prefix of the png text chunks carrying provenance
PNG_KEY_PREFIX = "eosedit:"


class GenerationRequest(EoseditBaseModel):
    """A seeded, step-counted, guided sampling job.

    Example
    -------
    >>> request = GenerationRequest(
    ...     conditioning=encoder.embed("a dog"), unconditional=encoder.embed(""), seed=7
    ... )  # doctest: +SKIP
    """

    class Config:  # pylint: disable=too-few-public-methods
        """Keep an edited conditioning as an edit rather than coercing it."""

        smart_union = True

    conditioning: Union[EditedEmbedding, PromptEmbedding] = pd.Field(
        ...,
        title="Conditioning",
        description="Prompt embedding, or edited embedding, the image is conditioned on.",
    )

    unconditional: PromptEmbedding = pd.Field(
        ...,
        title="Unconditional",
        description="Embedding of the empty prompt, the classifier-free guidance anchor; "
        "never edited.",
    )

    seed: pd.conint(ge=0, le=MAX_SEED) = pd.Field(
        ..., title="Seed", description="64-bit seed of the initial latent."
    )

    steps: pd.PositiveInt = pd.Field(
        DEFAULT_STEPS, title="Steps", description="Number of denoising updates."
    )

    cfg_scale: Optional[pd.NonNegativeFloat] = pd.Field(
        None,
        title="CFG Scale",
        description="Classifier-free guidance scale, the backend default if not given.",
    )

    backend_id: BackendId = pd.Field("toy", title="Backend", description="Sampling backend.")

    _cfg_finite = assert_finite_scalar("cfg_scale")

    @pd.validator("unconditional", always=True)
    def _shapes_match(cls, val, values):
        """conditional and unconditional embeddings have the same shape."""
        conditioning = values.get("conditioning")
        if conditioning is not None:
            shape = _embedding_of(conditioning).hidden.shape
            if shape != val.hidden.shape:
                raise ValidationError(
                    f"conditioning shape {shape} differs from unconditional {val.hidden.shape}."
                )
        return val

    @property
    def conditioning_embedding(self) -> PromptEmbedding:
        """Hidden states handed to the backend for the conditional branch."""
        return _embedding_of(self.conditioning)


def _embedding_of(conditioning: Union[EditedEmbedding, PromptEmbedding]) -> PromptEmbedding:
    """Unwrap an edit to its embedding."""
    if isinstance(conditioning, EditedEmbedding):
        return conditioning.embedding
    return conditioning


class Provenance(EoseditBaseModel):
    """Everything needed to re-run a generation."""

    source_prompt: str = pd.Field(..., title="Prompt", description="Conditioning prompt, raw.")
    target_prompt: Optional[str] = pd.Field(
        None, title="Target Prompt", description="Edit target prompt, for edited conditioning."
    )
    w: Optional[float] = pd.Field(None, title="Guidance Scale", description="Edit scale.")
    token_ids: TokenIds = pd.Field(..., title="Token Ids", description="Conditioning token ids.")
    eos_index: int = pd.Field(..., title="EOS Index")
    seed: int = pd.Field(..., title="Seed")
    steps: int = pd.Field(..., title="Steps")
    cfg_scale: float = pd.Field(..., title="CFG Scale")
    backend_id: str = pd.Field(..., title="Backend")
    eosedit_version: str = pd.Field(__version__, title="Version")

    @property
    def prompts(self) -> dict:
        """Prompt fields only."""
        return {"source_prompt": self.source_prompt, "target_prompt": self.target_prompt}


class ImageResult(EoseditDataModel):
    """Decoded image of a generation with its final latent and provenance."""

    pixels: Pixels = pd.Field(..., title="Pixels", description="(H, W, 3) uint8 image.")

    latent: Tensor32 = pd.Field(..., title="Latent", description="Final latent.")

    latent_digest: str = pd.Field(
        ..., title="Latent Digest", description="SHA-256 of the final float32 latent bytes."
    )

    provenance: Provenance = pd.Field(..., title="Provenance")

    @pd.validator("pixels", always=True)
    def _rgb_image(cls, val):
        """(H, W, 3) with positive sizes."""
        if val.ndim != 3 or val.shape[2] != 3 or val.shape[0] == 0 or val.shape[1] == 0:
            raise ValidationError(f"pixels must be (H, W, 3) with H, W > 0, given {val.shape}.")
        return val

    @property
    def height(self) -> int:
        """Image height in pixels."""
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        """Image width in pixels."""
        return self.pixels.shape[1]

    def png_bytes(self) -> bytes:
        """PNG encoding with the provenance fields as text chunks."""
        info = PngImagePlugin.PngInfo()
        for key, value in json.loads(self.provenance.json()).items():
            info.add_text(PNG_KEY_PREFIX + key, json.dumps(value))
        info.add_text(PNG_KEY_PREFIX + "latent_digest", self.latent_digest)
        buffer = io.BytesIO()
        Image.fromarray(np.ascontiguousarray(self.pixels)).save(
            buffer, format="PNG", pnginfo=info
        )
        return buffer.getvalue()

    def to_png(self, path: Union[str, os.PathLike]) -> None:
        """Write the PNG plus a json sidecar record."""
        atomic_write_bytes(path, self.png_bytes())
        record = json.loads(self.provenance.json())
        record["latent_digest"] = self.latent_digest
        atomic_write_bytes(sidecar_path(path), json.dumps(record, indent=4).encode("utf-8"))

    def save_latent(self, path: Union[str, os.PathLike]) -> None:
        """Write the final latent to a named-tensor archive."""
        write_archive(
            path, {"latent": self.latent}, metadata={"provenance": self.provenance.json()}
        )


def latent_digest(latent: np.ndarray) -> str:
    """SHA-256 hex digest of a latent's float32 bytes."""
    data = np.ascontiguousarray(latent, dtype=np.float32).tobytes()
    return hashlib.sha256(data).hexdigest()


def _provenance(request: GenerationRequest, cfg_scale: float, backend: Backend) -> Provenance:
    """Provenance record of a request."""
    conditioning = request.conditioning
    embedding = request.conditioning_embedding
    edited = isinstance(conditioning, EditedEmbedding)
    return Provenance(
        source_prompt=embedding.prompt_text,
        target_prompt=conditioning.target_prompt if edited else None,
        w=conditioning.applied_w if edited else None,
        token_ids=embedding.tokens.ids,
        eos_index=embedding.eos_index,
        seed=request.seed,
        steps=request.steps,
        cfg_scale=cfg_scale,
        backend_id=backend.backend_id,
    )


def generate(
    request: GenerationRequest, backend: Backend = None, progress: bool = False
) -> ImageResult:
    """Run the guided DDIM loop for a request and decode the result.

    Parameters
    ----------
    request : :class:`GenerationRequest`
        The job; a pure function of it for a fixed backend build.
    backend : :class:`Backend` = None
        Backend to use, built from ``request.backend_id`` if not given.
    progress : bool = False
        Show a progress bar over the denoising steps.

    Returns
    -------
    :class:`ImageResult`
        Decoded image, final latent, its digest, and provenance.
    """
    if backend is None:
        backend = make_backend(request.backend_id)
    if backend.backend_id != request.backend_id:
        raise ValidationError(
            f"request asks for backend '{request.backend_id}', got '{backend.backend_id}'."
        )

    conditional = request.conditioning_embedding
    unconditional = request.unconditional
    if conditional.hidden.shape != unconditional.hidden.shape:
        raise ShapeError("conditional and unconditional embeddings differ in shape.")

    cfg_scale = backend.default_cfg_scale if request.cfg_scale is None else request.cfg_scale
    schedule = build_schedule(
        backend.num_train_steps,
        request.steps,
        beta_profile=backend.beta_profile,
        steps_offset=backend.steps_offset,
    )
    latent = sample_initial_latent(request.seed, tuple(backend.latent_shape))

    with Progress(disable=not progress) as progress_bar:
        task = progress_bar.add_task("denoising", total=schedule.num_inference_steps)
        for step, (t, t_prev) in enumerate(schedule.step_pairs()):
            uncond_pred = backend.predict_noise(latent, t, unconditional)
            cond_pred = backend.predict_noise(latent, t, conditional)
            noise_pred = cfg_combine(uncond_pred, cond_pred, cfg_scale)
            latent = ddim_step(latent, noise_pred, t, t_prev, schedule)
            if not np.all(np.isfinite(latent)):
                raise NumericError(f"latent became non-finite at step {step} (timestep {t}).")
            if log.isEnabledFor(logging.DEBUG):
                log.debug(f"step {step} t={t} |latent|={float(np.linalg.norm(latent)):.4f}")
            progress_bar.update(task, advance=1)

    pixels = backend.decode_latents(latent)
    digest = latent_digest(latent)
    log.info(
        f"Generated {pixels.shape[1]}x{pixels.shape[0]} image for {conditional.prompt_text!r} "
        f"(seed {request.seed}, {request.steps} steps, cfg {cfg_scale}), latent {digest[:12]}."
    )
    return ImageResult(
        pixels=pixels,
        latent=latent,
        latent_digest=digest,
        provenance=_provenance(request, cfg_scale, backend),
    )
