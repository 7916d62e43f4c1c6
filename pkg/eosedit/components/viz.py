# pylint: disable=invalid-name
""" utilities for plotting """
from functools import wraps
from typing import Sequence

import matplotlib.pylab as plt
import numpy as np

from .types import Ax

""" Constants """

SWEEP_COLOR = "tab:blue"
SWEEP_MARKER = "o"


""" Decorators """


def make_ax() -> Ax:
    """makes an empty `ax`."""
    _, ax = plt.subplots(1, 1, tight_layout=True)
    return ax


def add_ax_if_none(plot):
    """Decorates `plot(*args, **kwargs, ax=None)` function.
    if ax=None in the function call, creates an ax and feeds it to rest of function.
    """

    @wraps(plot)
    def _plot(*args, **kwargs) -> Ax:
        """New plot function using a generated ax if None."""
        if kwargs.get("ax") is None:
            ax = make_ax()
            kwargs["ax"] = ax
        return plot(*args, **kwargs)

    return _plot


""" plots """


@add_ax_if_none
def plot_tradeoff(
    w_values: Sequence[float], distances: Sequence[float], ax: Ax = None, label: str = None
) -> Ax:
    """Embedding distance from the unedited source against the guidance scale."""
    ax.plot(
        np.asarray(w_values),
        np.asarray(distances),
        marker=SWEEP_MARKER,
        color=SWEEP_COLOR,
        label=label,
    )
    ax.set_xlabel("guidance scale w")
    ax.set_ylabel("embedding distance to source")
    if label is not None:
        ax.legend()
    return ax
