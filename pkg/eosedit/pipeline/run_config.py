"""Per-run configuration: model artifacts, backend and sampling defaults."""
import json
import os
from typing import Any, Dict, Optional

import pydantic as pd
import yaml

from ..components.base import EoseditBaseModel
from ..components.encoder import EncoderConfig
from ..components.types import BackendId
from ..components.validators import assert_finite_scalar
from ..constants import DEFAULT_STEPS, DEFAULT_W, MAX_SEED
from ..log import ConfigError

DEFAULT_OUT_DIR = "eosedit_out"

# fields holding paths that must exist when the config is built
PATH_FIELDS = ("vocab_path", "merges_path", "encoder_weights_path")


class RunConfig(EoseditBaseModel):
    """Single source of defaults for every pipeline command; command line flags override it.

    Example
    -------
    >>> run_config = RunConfig.load("run.yaml", seed=7)  # doctest: +SKIP
    """

    vocab_path: str = pd.Field(
        ..., title="Vocabulary", description="Token to id listing of the tokenizer (vocab.json)."
    )

    merges_path: str = pd.Field(
        ..., title="Merges", description="Ranked merge rules of the tokenizer (merges.txt)."
    )

    encoder_weights_path: Optional[str] = pd.Field(
        None,
        title="Encoder Weights",
        description="Named-tensor archive of the text encoder, needed by every command but "
        "tokenize.",
    )

    encoder: Optional[EncoderConfig] = pd.Field(
        None,
        title="Encoder Config",
        description="Encoder architecture; read from the archive metadata, else SD 1.4, if unset.",
    )

    backend_id: BackendId = pd.Field("toy", title="Backend", description="Sampling backend.")

    model_path: Optional[str] = pd.Field(
        None, title="Model Path", description="Checkpoint directory of the sd14 backend."
    )

    steps: pd.PositiveInt = pd.Field(
        DEFAULT_STEPS, title="Steps", description="Denoising steps per generation."
    )

    cfg_scale: Optional[pd.NonNegativeFloat] = pd.Field(
        None, title="CFG Scale", description="Guidance scale, the backend default if unset."
    )

    w: float = pd.Field(DEFAULT_W, title="Edit Scale", description="Default edit guidance scale.")

    seed: pd.conint(ge=0, le=MAX_SEED) = pd.Field(
        0, title="Seed", description="Seed of the initial latent."
    )

    out_dir: str = pd.Field(
        DEFAULT_OUT_DIR, title="Output Directory", description="Where artifacts are written."
    )

    num_workers: Optional[pd.PositiveInt] = pd.Field(
        None,
        title="Workers",
        description="Threads for independent generations, the global config's if unset.",
    )

    _w_finite = assert_finite_scalar("w")
    _cfg_finite = assert_finite_scalar("cfg_scale")

    @pd.validator(*PATH_FIELDS, always=True)
    def _path_exists(cls, val, field):
        """referenced artifacts exist at load."""
        if val is not None and not os.path.isfile(val):
            raise ConfigError(f"{field.name} '{val}' does not exist.")
        return val

    @pd.validator("model_path", always=True)
    def _model_path_for_sd14(cls, val, values):
        """sd14 needs an existing checkpoint directory."""
        if values.get("backend_id") == "sd14":
            if val is None:
                raise ConfigError("the sd14 backend needs 'model_path'.")
            if not os.path.isdir(val):
                raise ConfigError(f"model_path '{val}' is not a directory.")
        return val

    @classmethod
    def load(cls, fname: Optional[str] = None, **overrides) -> "RunConfig":
        """Build from an optional ``.yaml``/``.json`` file, ``None`` overrides are ignored.

        Parameters
        ----------
        fname : str = None
            Config file; values in it are the defaults.
        **overrides
            Field values that win over the file (typically command line flags).

        Returns
        -------
        :class:`RunConfig`
            The merged configuration.
        """
        values: Dict[str, Any] = {} if fname is None else read_config_file(fname)
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls.parse_obj(values)


def read_config_file(fname: str) -> Dict[str, Any]:
    """Field values stored in a ``.yaml``/``.yml``/``.json`` config file."""
    try:
        with open(fname, "r", encoding="utf-8") as file_handle:
            if fname.endswith(".json"):
                values = json.load(file_handle)
            elif fname.endswith((".yaml", ".yml")):
                values = yaml.safe_load(file_handle)
            else:
                raise ConfigError(f"config file must be .json or .yaml, given '{fname}'.")
    except OSError as e:
        raise ConfigError(f"could not read config file '{fname}': {e}") from e
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"could not parse config file '{fname}': {e}") from e
    if values is None:
        return {}
    if not isinstance(values, dict):
        raise ConfigError(f"config file '{fname}' must hold a mapping of fields.")
    values.pop("type", None)
    return values
