# pylint:disable=unused-argument
""" Defines various validation functions that get used to ensure inputs are legit """
import math
from typing import Type

import numpy as np
import pydantic

from ..log import ValidationError, EoseditError

""" Explanation of pydantic validators:

    Validators are class methods that are added to the models to validate their fields (kwargs).
    The functions on this page return validators based on config arguments
    and are generally used in multiple components of eosedit.
    The inner functions (validators) are decorated with @pydantic.validator, which is configured.
    First argument is the string of the field being validated in the model.
    ``allow_reuse`` lets us use the validator in more than one model.
    ``always`` makes sure if the model is changed, the validator gets called again.

    The function being decorated by @pydantic.validator generally takes
    ``cls`` the class that the validator is added to.
    ``val`` the value of the field being validated.
    ``values`` a dictionary containing all of the other fields of the model.
    Only fields defined before the field being validated are in ``values``.

    All validators generally should throw an exception if the validation fails
    and return val if it passes.

    To add a validator from this file to the pydantic model,
    put it in the model's main body and assign it to a variable (class method).
    For example ``_hidden_finite = assert_finite("hidden")``.
"""


def assert_finite(field_name: str, error: Type[EoseditError] = ValidationError):
    """makes sure every entry of an array field is finite"""

    @pydantic.validator(field_name, allow_reuse=True, always=True)
    def is_finite(cls, val):
        """Raise if the array holds nan or inf."""
        if val is not None and not np.all(np.isfinite(val)):
            num_bad = int(np.size(val) - np.count_nonzero(np.isfinite(val)))
            raise error(f"'{cls.__name__}.{field_name}' holds {num_bad} non-finite entries.")
        return val

    return is_finite


def assert_finite_scalar(field_name: str):
    """makes sure a float field is finite"""

    @pydantic.validator(field_name, allow_reuse=True, always=True)
    def is_finite(cls, val):
        """Raise if the value is nan or inf."""
        if val is not None and not math.isfinite(val):
            raise ValidationError(f"'{cls.__name__}.{field_name}' must be finite, given {val}.")
        return val

    return is_finite


def assert_ndim(field_name: str, ndim: int):
    """makes sure an array field has the given number of dimensions"""

    @pydantic.validator(field_name, allow_reuse=True, always=True)
    def has_ndim(cls, val):
        """Raise if the number of dimensions is wrong."""
        if val.ndim != ndim:
            raise ValidationError(
                f"'{cls.__name__}.{field_name}' must have {ndim} dimensions, given shape {val.shape}."
            )
        return val

    return has_ndim
