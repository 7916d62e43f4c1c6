""" Defines 'types' that various fields can be """

from typing import Tuple, List

# Literal only available in python 3.8 + so try import otherwise use extensions
try:
    from typing import Literal
except ImportError:
    from typing_extensions import Literal

import pydantic
import numpy as np
from matplotlib.axes import Axes

""" enums """

Activation = Literal["quick_gelu", "gelu"]
BetaProfile = Literal["linear", "scaled_linear"]
BackendId = Literal["toy", "sd14"]

""" tokens """

TokenIds = List[pydantic.NonNegativeInt]

""" latents """

LatentShape = Tuple[pydantic.PositiveInt, ...]

""" plotting """

Ax = Axes

""" Numpy """

# generic numpy array
Numpy = np.ndarray


class FrozenArray(np.ndarray):
    """Read-only numpy array with dtype given by cls.inner_type.

    The validator casts the value, copies it when the caller still holds a writeable view and
    clears the writeable flag, so a model owning the array can never be mutated in place.
    """

    inner_type = np.float32

    @classmethod
    def __get_validators__(cls):
        """boilerplate"""
        yield cls.validate_type

    @classmethod
    def validate_type(cls, val):
        """validator"""
        arr = np.asarray(val, dtype=cls.inner_type)
        if arr.flags.writeable or arr.base is not None:
            arr = np.array(arr, dtype=cls.inner_type, copy=True)
        arr.flags.writeable = False
        return arr

    @classmethod
    def __modify_schema__(cls, field_schema):
        """Sets the schema of the array."""
        field_schema.update(type="array", items={"type": "number"})


class ArrayMeta(type):
    """metaclass for Array, enables Array[dtype] -> FrozenArray of that dtype"""

    def __getitem__(cls, t):
        """Array[t] -> FrozenArray"""
        return type("Array", (FrozenArray,), {"inner_type": t})


class Array(np.ndarray, metaclass=ArrayMeta):
    """type of read-only numpy array with annotated dtype (Array[np.float32], Array[np.uint8])"""


""" note:
    ^ all tensors stored on models are declared this way, for example
    ``hidden: Array[np.float32]``.
"""

Tensor32 = Array[np.float32]
Tensor64 = Array[np.float64]
Pixels = Array[np.uint8]
