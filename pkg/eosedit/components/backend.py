"""Sampling backends: noise prediction and latent decoding behind one contract.

``ToyBackend`` is a seeded random linear denoiser small enough to run 50 steps in milliseconds.
``Sd14Backend`` wraps the Stable Diffusion 1.4 UNet and VAE through ``diffusers``, imported only
when the backend is used.
"""
from abc import ABC, abstractmethod
from functools import lru_cache
from typing import Dict, Optional, Tuple, Type

import numpy as np
import pydantic as pd

from .base import EoseditBaseModel
from .encoder import PromptEmbedding
from .types import BetaProfile, LatentShape, Literal
from ..constants import (
    NUM_TRAIN_STEPS,
    SD14_CFG_SCALE,
    SD14_LATENT_SHAPE,
    SD14_STEPS_OFFSET,
    SD14_VAE_SCALE,
    TOY_BACKEND_SEED,
    TOY_CFG_SCALE,
    TOY_IMAGE_SCALE,
    TOY_LATENT_SHAPE,
)
from ..log import log, BackendError, EoseditImportError, EoseditKeyError, ShapeError

# width of the sinusoidal timestep embedding fed to the toy denoiser
TOY_TIMESTEP_DIM = 32


class Backend(EoseditBaseModel, ABC):
    """Abstract sampling backend: predicts noise for a latent and decodes latents to pixels."""

    class Config:  # pylint: disable=too-few-public-methods
        """Backends never change once built."""

        allow_mutation = False

    backend_id: str = pd.Field(..., title="Backend Id", description="Registry name.")

    latent_shape: LatentShape = pd.Field(
        ..., title="Latent Shape", description="Shape of one latent, channels first."
    )

    default_cfg_scale: pd.NonNegativeFloat = pd.Field(
        ..., title="Default CFG Scale", description="Guidance scale used when none is given."
    )

    beta_profile: BetaProfile = pd.Field(
        "scaled_linear", title="Beta Profile", description="Noise schedule of the denoiser."
    )

    num_train_steps: pd.PositiveInt = pd.Field(
        NUM_TRAIN_STEPS, title="Training Steps", description="Length of the training diffusion."
    )

    steps_offset: pd.NonNegativeInt = pd.Field(
        0, title="Steps Offset", description="Shift added to the selected timesteps."
    )

    def _check_latent(self, latent: np.ndarray) -> None:
        """Raise ShapeError unless the latent has this backend's shape."""
        if tuple(latent.shape) != tuple(self.latent_shape):
            raise ShapeError(
                f"latent shape {tuple(latent.shape)} differs from the {self.backend_id} backend "
                f"shape {tuple(self.latent_shape)}."
            )

    @abstractmethod
    def predict_noise(
        self, latent: np.ndarray, t: int, conditioning: PromptEmbedding
    ) -> np.ndarray:
        """Noise prediction for ``latent`` at timestep ``t`` under ``conditioning``."""

    @abstractmethod
    def decode_latents(self, latent: np.ndarray) -> np.ndarray:
        """(H, W, 3) uint8 image of a final latent."""


""" toy backend """


def timestep_embedding(t: int, dim: int = TOY_TIMESTEP_DIM) -> np.ndarray:
    """Sinusoidal embedding ``[cos(t f_k), sin(t f_k)]`` of a timestep."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = float(t) * freqs
    return np.concatenate([np.cos(args), np.sin(args)]).astype(np.float32)


@lru_cache(maxsize=16)
def _toy_parameters(
    seed: int, latent_shape: Tuple[int, ...], d_model: int, timestep_dim: int
) -> Dict[str, np.ndarray]:
    """Fixed random parameters of the toy denoiser, one set per (seed, geometry)."""
    rng = np.random.Generator(np.random.PCG64([seed, d_model]))
    size = int(np.prod(latent_shape))

    params = {
        "latent": 0.9 * np.eye(size) + (0.1 / np.sqrt(size)) * rng.standard_normal((size, size)),
        "pooled": rng.standard_normal((size, d_model)) / np.sqrt(d_model),
        "eos": rng.standard_normal((size, d_model)) / np.sqrt(d_model),
        "timestep": 0.1 * rng.standard_normal((size, timestep_dim)) / np.sqrt(timestep_dim),
        "bias": 0.1 * rng.standard_normal(size),
    }
    return _frozen_float32(params)


@lru_cache(maxsize=16)
def _toy_decoder(seed: int, channels: int) -> np.ndarray:
    """Fixed random (3, channels) map from latent channels to RGB."""
    rng = np.random.Generator(np.random.PCG64([seed, channels, 3]))
    return _frozen_float32({"to_rgb": rng.standard_normal((3, channels)) / np.sqrt(channels)})[
        "to_rgb"
    ]


def _frozen_float32(arrays: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """float32 read-only copies, safe to share from a cache."""
    frozen = {name: value.astype(np.float32) for name, value in arrays.items()}
    for value in frozen.values():
        value.flags.writeable = False
    return frozen


class ToyBackend(Backend):
    """Seeded random linear denoiser on a small latent, conditioned through the mean-pooled
    hidden states plus a dedicated tap on the ``<EOS>`` row.

    Example
    -------
    >>> toy = ToyBackend()
    >>> toy.latent_shape
    (4, 8, 8)
    """

    backend_id: Literal["toy"] = pd.Field("toy", title="Backend Id")

    latent_shape: LatentShape = pd.Field(TOY_LATENT_SHAPE, title="Latent Shape")

    default_cfg_scale: pd.NonNegativeFloat = pd.Field(TOY_CFG_SCALE, title="Default CFG Scale")

    seed: pd.NonNegativeInt = pd.Field(
        TOY_BACKEND_SEED, title="Parameter Seed", description="Seed of the fixed random maps."
    )

    image_scale: pd.PositiveInt = pd.Field(
        TOY_IMAGE_SCALE,
        title="Image Scale",
        description="Nearest-neighbour upsampling factor from latent to pixels.",
    )

    def parameters(self, d_model: int) -> Dict[str, np.ndarray]:
        """Read-only random maps for conditioning of width ``d_model``."""
        return _toy_parameters(self.seed, tuple(self.latent_shape), d_model, TOY_TIMESTEP_DIM)

    def timestep_bias(self, t: int, d_model: int) -> np.ndarray:
        """Output for a zero latent and zero conditioning: bias plus the timestep term."""
        params = self.parameters(d_model)
        out = params["timestep"] @ timestep_embedding(t) + params["bias"]
        return out.reshape(self.latent_shape)

    def toy_denoise(self, latent: np.ndarray, t: int, conditioning: PromptEmbedding) -> np.ndarray:
        """Linear map of (latent, mean-pooled conditioning, ``<EOS>`` row, timestep embedding)."""
        self._check_latent(latent)
        hidden = conditioning.hidden
        params = self.parameters(conditioning.d_model)

        x = latent.reshape(-1).astype(np.float32, copy=False)
        pooled = hidden.mean(axis=0)
        eos = hidden[conditioning.eos_index]

        out = (
            params["latent"] @ x
            + params["pooled"] @ pooled
            + params["eos"] @ eos
            + params["timestep"] @ timestep_embedding(t)
            + params["bias"]
        )
        return out.reshape(self.latent_shape)

    def predict_noise(
        self, latent: np.ndarray, t: int, conditioning: PromptEmbedding
    ) -> np.ndarray:
        return self.toy_denoise(latent, t, conditioning)

    def decode_latents(self, latent: np.ndarray) -> np.ndarray:
        self._check_latent(latent)
        if latent.ndim != 3:
            raise ShapeError(f"toy latents are (channels, height, width), given {latent.shape}.")
        to_rgb = _toy_decoder(self.seed, latent.shape[0])
        rgb = np.tanh(np.einsum("ck,khw->hwc", to_rgb, latent.astype(np.float32)))
        pixels = np.clip(np.rint((rgb + 1.0) * 127.5), 0, 255).astype(np.uint8)
        return pixels.repeat(self.image_scale, axis=0).repeat(self.image_scale, axis=1)


""" Stable Diffusion 1.4 adapter """


class Sd14Backend(Backend):
    """Stable Diffusion 1.4 UNet and VAE loaded from a diffusers checkpoint directory.

    Needs the optional ``torch`` and ``diffusers`` packages (``pip install eosedit[sd14]``).
    """

    backend_id: Literal["sd14"] = pd.Field("sd14", title="Backend Id")

    latent_shape: LatentShape = pd.Field(SD14_LATENT_SHAPE, title="Latent Shape")

    default_cfg_scale: pd.NonNegativeFloat = pd.Field(SD14_CFG_SCALE, title="Default CFG Scale")

    steps_offset: pd.NonNegativeInt = pd.Field(SD14_STEPS_OFFSET, title="Steps Offset")

    model_path: str = pd.Field(
        ...,
        title="Model Path",
        description="Checkpoint directory with ``unet`` and ``vae`` subfolders.",
    )

    device: str = pd.Field("cpu", title="Device", description="Torch device to run on.")

    _unet = pd.PrivateAttr(None)
    _vae = pd.PrivateAttr(None)
    _torch = pd.PrivateAttr(None)

    def load(self) -> "Sd14Backend":
        """Import torch and diffusers and load the UNet and VAE (once)."""
        if self._unet is not None:
            return self
        try:
            import torch  # pylint:disable=import-outside-toplevel
            from diffusers import (  # pylint:disable=import-outside-toplevel
                AutoencoderKL,
                UNet2DConditionModel,
            )
        except ImportError as e:
            raise EoseditImportError(
                "The sd14 backend needs torch and diffusers, "
                "install them with 'pip install eosedit[sd14]'."
            ) from e

        try:
            unet = UNet2DConditionModel.from_pretrained(self.model_path, subfolder="unet")
            vae = AutoencoderKL.from_pretrained(self.model_path, subfolder="vae")
        except Exception as e:  # pylint:disable=broad-except
            raise BackendError(f"could not load SD 1.4 from '{self.model_path}': {e}") from e

        self._torch = torch
        self._unet = unet.to(self.device).eval()
        self._vae = vae.to(self.device).eval()
        log.info(f"Loaded SD 1.4 UNet and VAE from '{self.model_path}' on {self.device}.")
        return self

    def predict_noise(
        self, latent: np.ndarray, t: int, conditioning: PromptEmbedding
    ) -> np.ndarray:
        self._check_latent(latent)
        self.load()
        torch = self._torch
        with torch.no_grad():
            sample = torch.from_numpy(np.ascontiguousarray(latent[None], dtype=np.float32))
            hidden = torch.from_numpy(np.array(conditioning.hidden[None], dtype=np.float32))
            noise = self._unet(
                sample.to(self.device),
                torch.tensor(t, device=self.device),
                encoder_hidden_states=hidden.to(self.device),
            ).sample
        return noise[0].cpu().numpy().astype(np.float32)

    def decode_latents(self, latent: np.ndarray) -> np.ndarray:
        self._check_latent(latent)
        self.load()
        torch = self._torch
        with torch.no_grad():
            sample = torch.from_numpy(np.ascontiguousarray(latent[None], dtype=np.float32))
            image = self._vae.decode(sample.to(self.device) / SD14_VAE_SCALE).sample
            image = (image / 2 + 0.5).clamp(0, 1)
        pixels = image[0].permute(1, 2, 0).cpu().numpy()
        return np.rint(pixels * 255.0).astype(np.uint8)


BACKENDS: Dict[str, Type[Backend]] = {
    "toy": ToyBackend,
    "sd14": Sd14Backend,
}


def make_backend(backend_id: str, model_path: Optional[str] = None, **kwargs) -> Backend:
    """Build a registered backend by id.

    Parameters
    ----------
    backend_id : str
        ``"toy"`` or ``"sd14"``.
    model_path : str = None
        Checkpoint directory, required by ``"sd14"``.
    **kwargs
        Extra fields of the backend model.

    Returns
    -------
    :class:`Backend`
        The (not yet loaded) backend.
    """
    backend_cls = BACKENDS.get(backend_id)
    if backend_cls is None:
        raise EoseditKeyError(f"unknown backend '{backend_id}', choose from {sorted(BACKENDS)}.")
    if backend_cls is Sd14Backend:
        if model_path is None:
            raise BackendError("the sd14 backend needs a checkpoint directory (--model-path).")
        kwargs["model_path"] = model_path
    return backend_cls(**kwargs)
