"""Sets the configuration of the script, can be changed with `eosedit.config.config_name = new_val`."""

import os

import pydantic as pd

from .log import set_logging_level, DEFAULT_LEVEL
from .components.base import EoseditBaseModel
from .components.types import Literal

# default logging level, overridable through the environment
env_level = os.environ.get("EOSEDIT_LOGGING_LEVEL")
DEFAULT_LOGGING_LEVEL = DEFAULT_LEVEL.lower() if env_level is None else env_level.lower()


class EoseditConfig(pd.BaseModel):
    """configuration of eosedit"""

    class Config:
        """Config of the config."""

        arbitrary_types_allowed = False
        validate_all = True
        extra = "forbid"
        validate_assignment = True
        allow_population_by_field_name = True

    logging_level: Literal["debug", "info", "warning", "error"] = pd.Field(
        DEFAULT_LOGGING_LEVEL,
        title="Logging Level",
        description="The lowest level of logging output that will be displayed. "
        'Can be "debug", "info", "warning", "error".',
    )

    frozen: bool = pd.Field(
        False, title="Frozen", description="Whether all eosedit components are immutable."
    )

    num_workers: pd.PositiveInt = pd.Field(
        1,
        title="Workers",
        description="Threads used for independent generations (sweep points, pair halves).",
    )

    @pd.validator("logging_level", always=True)
    def _set_logging_level(cls, val):
        """Set the logging level if logging_level is changed."""
        set_logging_level(val)
        return val

    @pd.validator("frozen", always=True)
    def _change_mutability(cls, val):
        """Set whether eosedit components are mutable."""
        EoseditBaseModel.__config__.frozen = val
        return val


# instance of the config that can be modified.
config = EoseditConfig()
