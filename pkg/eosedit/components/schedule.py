"""Noise schedule, seeded initial latents, classifier-free guidance and the deterministic
(eta = 0) DDIM update."""
from typing import List, Tuple

import numpy as np
import pydantic as pd

from .base import EoseditDataModel
from .types import BetaProfile, Tensor64
from ..constants import MAX_SEED, NUM_TRAIN_STEPS, SD14_BETA_END, SD14_BETA_START
from ..log import InputError, ShapeError, ValidationError

# marks the step after the last selected timestep, where the clean-sample weight is 1
FINAL_TIMESTEP = -1


class NoiseSchedule(EoseditDataModel):
    """Cumulative signal rates of the training diffusion and the timesteps a sampler visits.

    Example
    -------
    >>> schedule = build_schedule(1000, 50, "scaled_linear")
    >>> schedule.selected_timesteps[:3]
    [980, 960, 940]
    """

    num_train_steps: pd.PositiveInt = pd.Field(
        NUM_TRAIN_STEPS, title="Training Steps", description="Length of the training diffusion."
    )

    alphas_cumprod: Tensor64 = pd.Field(
        ...,
        title="Cumulative Alphas",
        description="Signal rate at each training timestep, strictly decreasing in (0, 1].",
    )

    selected_timesteps: List[pd.NonNegativeInt] = pd.Field(
        ...,
        title="Selected Timesteps",
        description="Timesteps visited during sampling, strictly decreasing.",
    )

    beta_profile: BetaProfile = pd.Field(
        "scaled_linear", title="Beta Profile", description="How the betas were laid out."
    )

    @pd.validator("alphas_cumprod", always=True)
    def _alphas_decreasing(cls, val, values):
        """one entry per training step, inside (0, 1], strictly decreasing."""
        num_train_steps = values.get("num_train_steps")
        if val.ndim != 1 or (num_train_steps is not None and len(val) != num_train_steps):
            raise ValidationError(
                f"alphas_cumprod must be a vector of length {num_train_steps}, got {val.shape}."
            )
        if np.any(val <= 0) or np.any(val > 1):
            raise ValidationError("alphas_cumprod must lie in (0, 1].")
        if np.any(np.diff(val) >= 0):
            raise ValidationError("alphas_cumprod must be strictly decreasing.")
        return val

    @pd.validator("selected_timesteps", always=True)
    def _timesteps_decreasing(cls, val, values):
        """inside [0, num_train_steps), strictly decreasing."""
        num_train_steps = values.get("num_train_steps")
        if not val:
            raise ValidationError("at least one timestep is required.")
        if num_train_steps is not None and not all(0 <= t < num_train_steps for t in val):
            raise ValidationError(f"timesteps must lie in [0, {num_train_steps}).")
        if any(later >= earlier for earlier, later in zip(val[:-1], val[1:])):
            raise ValidationError("timesteps must be strictly decreasing.")
        return val

    @property
    def num_inference_steps(self) -> int:
        """Number of sampler updates."""
        return len(self.selected_timesteps)

    def alpha_bar(self, t: int) -> float:
        """Signal rate at a timestep; 1.0 at :data:`FINAL_TIMESTEP`."""
        if t == FINAL_TIMESTEP:
            return 1.0
        return float(self.alphas_cumprod[t])

    def step_pairs(self) -> List[Tuple[int, int]]:
        """``(t, t_prev)`` for every update, the last one ending at :data:`FINAL_TIMESTEP`."""
        timesteps = self.selected_timesteps
        return list(zip(timesteps, timesteps[1:] + [FINAL_TIMESTEP]))


def make_betas(num_train_steps: int, beta_profile: str) -> np.ndarray:
    """Per-step noise variances of the training diffusion."""
    if beta_profile == "linear":
        return np.linspace(SD14_BETA_START, SD14_BETA_END, num_train_steps, dtype=np.float64)
    if beta_profile == "scaled_linear":
        root = np.linspace(
            SD14_BETA_START**0.5, SD14_BETA_END**0.5, num_train_steps, dtype=np.float64
        )
        return root**2
    raise InputError(f"unknown beta profile '{beta_profile}'.")


def build_schedule(
    num_train_steps: int, steps: int, beta_profile: str = "scaled_linear", steps_offset: int = 0
) -> NoiseSchedule:
    """Schedule visiting ``steps`` evenly spaced training timesteps, latest first.

    Parameters
    ----------
    num_train_steps : int
        Length of the training diffusion (1000 for SD 1.4).
    steps : int
        Number of sampler updates, in ``[1, num_train_steps]``.
    beta_profile : str = "scaled_linear"
        ``"linear"`` or ``"scaled_linear"``.
    steps_offset : int = 0
        Shift added to every selected timestep (1 for the SD 1.4 checkpoint).

    Returns
    -------
    :class:`NoiseSchedule`
        Timesteps ``arange(steps) * (num_train_steps // steps) + steps_offset``, reversed.
    """
    if num_train_steps < 1:
        raise InputError(f"num_train_steps must be positive, given {num_train_steps}.")
    if not 1 <= steps <= num_train_steps:
        raise InputError(f"steps must lie in [1, {num_train_steps}], given {steps}.")

    alphas_cumprod = np.cumprod(1.0 - make_betas(num_train_steps, beta_profile))

    stride = num_train_steps // steps
    timesteps = (np.arange(steps) * stride + steps_offset)[::-1]
    if timesteps[0] >= num_train_steps:
        raise InputError(
            f"steps_offset={steps_offset} pushes timestep {int(timesteps[0])} past "
            f"{num_train_steps - 1}."
        )

    return NoiseSchedule(
        num_train_steps=num_train_steps,
        alphas_cumprod=alphas_cumprod,
        selected_timesteps=[int(t) for t in timesteps],
        beta_profile=beta_profile,
    )


def sample_initial_latent(seed: int, shape: Tuple[int, ...]) -> np.ndarray:
    """Standard normal float32 latent, a pure function of ``seed`` and ``shape``.

    Draws come from numpy's ``PCG64`` bit generator seeded with ``seed`` and
    ``Generator.standard_normal`` (float64 ziggurat), cast to float32 afterwards.
    """
    if not 0 <= seed <= MAX_SEED:
        raise InputError(f"seed must lie in [0, 2**64), given {seed}.")
    if not shape or any(dim <= 0 for dim in shape):
        raise InputError(f"latent shape must be positive, given {tuple(shape)}.")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal(tuple(shape), dtype=np.float64).astype(np.float32)


def cfg_combine(uncond_pred: np.ndarray, cond_pred: np.ndarray, cfg_scale: float) -> np.ndarray:
    """Classifier-free guidance ``uncond + s * (cond - uncond)``.

    Stepped from ``uncond`` for ``s < 0.5`` and back from ``cond`` otherwise, so ``s = 0``,
    ``s = 1`` and ``cond == uncond`` all return an input exactly.
    """
    if uncond_pred.shape != cond_pred.shape:
        raise ShapeError(f"prediction shapes differ: {uncond_pred.shape} vs {cond_pred.shape}.")
    dtype = np.result_type(uncond_pred, cond_pred)
    scale = dtype.type(cfg_scale)
    delta = (cond_pred - uncond_pred).astype(dtype, copy=False)
    if scale < 0.5:
        out = uncond_pred + scale * delta
    else:
        out = cond_pred - (dtype.type(1.0) - scale) * delta
    return out.astype(dtype, copy=False)


def _check_timestep(t: int, schedule: NoiseSchedule, allow_final: bool = False) -> None:
    """Raise unless ``t`` is a selected timestep (or the final marker, when allowed)."""
    if allow_final and t == FINAL_TIMESTEP:
        return
    if t not in schedule.selected_timesteps:
        raise InputError(f"timestep {t} is not in the schedule.")


def predict_original(
    latent: np.ndarray, noise_pred: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Clean sample implied by ``latent`` at timestep ``t`` and its noise prediction."""
    _check_timestep(t, schedule)
    alpha_bar = schedule.alpha_bar(t)
    x0 = (latent - np.sqrt(1.0 - alpha_bar) * noise_pred) / np.sqrt(alpha_bar)
    return x0.astype(latent.dtype, copy=False)


def ddim_step(
    latent: np.ndarray, noise_pred: np.ndarray, t: int, t_prev: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Deterministic DDIM update from ``t`` to ``t_prev`` (``FINAL_TIMESTEP`` for the last step).

    Parameters
    ----------
    latent : np.ndarray
        Latent at timestep ``t``.
    noise_pred : np.ndarray
        Guided noise prediction for ``latent``.
    t : int
        Current timestep, one of ``schedule.selected_timesteps``.
    t_prev : int
        Next timestep, later in the schedule than ``t``, or ``FINAL_TIMESTEP``.
    schedule : :class:`NoiseSchedule`
        Schedule supplying the signal rates.

    Returns
    -------
    np.ndarray
        Latent at ``t_prev``, same dtype as ``latent``; equals the predicted clean sample when
        ``t_prev`` is ``FINAL_TIMESTEP``.
    """
    _check_timestep(t_prev, schedule, allow_final=True)
    if latent.shape != noise_pred.shape:
        raise ShapeError(f"latent shape {latent.shape} differs from prediction {noise_pred.shape}.")
    if t_prev != FINAL_TIMESTEP and t_prev >= t:
        raise InputError(f"t_prev={t_prev} must come after t={t}.")

    x0 = predict_original(latent, noise_pred, t, schedule)
    alpha_bar_prev = schedule.alpha_bar(t_prev)
    if t_prev == FINAL_TIMESTEP:
        return x0
    out = np.sqrt(alpha_bar_prev) * x0 + np.sqrt(1.0 - alpha_bar_prev) * noise_pred
    return out.astype(latent.dtype, copy=False)
