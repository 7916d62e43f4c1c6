"""Staged output directories, reports, sweep tables and image grids."""
import io
import os
import shutil
import tempfile
from typing import List, Sequence

import numpy as np
import pydantic as pd
import xarray as xr
from PIL import Image, PngImagePlugin

from ..components.base import EoseditBaseModel
from ..components.fileio import atomic_write_bytes, atomic_write_text
from ..log import log, FileError, ShapeError

REPORT_SUFFIX = ".report.json"

# column order of sweep tables
SWEEP_COLUMNS = ("w", "embedding_distance", "latent_digest", "seed")


class StagedOutputs:
    """Collects a command's artifacts in a hidden staging directory and moves them into the
    output directory only when the command succeeds; on failure nothing is left behind.

    Example
    -------
    >>> with StagedOutputs("out") as staged:  # doctest: +SKIP
    ...     image.to_png(staged.path("a.png"))
    """

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.stage_dir = None
        self.names: List[str] = []

    def __enter__(self) -> "StagedOutputs":
        try:
            os.makedirs(self.out_dir, exist_ok=True)
            self.stage_dir = tempfile.mkdtemp(prefix=".stage-", dir=self.out_dir)
        except OSError as e:
            raise FileError(f"could not prepare output directory '{self.out_dir}': {e}") from e
        return self

    def path(self, name: str) -> str:
        """Staging path of an artifact that will end up as ``out_dir/name``."""
        if name not in self.names:
            self.names.append(name)
        return os.path.join(self.stage_dir, name)

    def __exit__(self, exc_type, exc_value, traceback) -> None:
        try:
            if exc_type is None:
                self._commit()
        finally:
            shutil.rmtree(self.stage_dir, ignore_errors=True)

    def _commit(self) -> None:
        """Rename every staged file (and its sidecar) into the output directory."""
        try:
            for name in sorted(os.listdir(self.stage_dir)):
                os.replace(os.path.join(self.stage_dir, name), os.path.join(self.out_dir, name))
        except OSError as e:
            raise FileError(f"could not move outputs into '{self.out_dir}': {e}") from e
        log.info(f"Wrote {len(self.names)} artifacts to '{self.out_dir}'.")


def write_report(path: str, report: EoseditBaseModel) -> None:
    """Atomically write a report model as indented json."""
    atomic_write_text(path, report.json(indent=4))


class SweepRow(EoseditBaseModel):
    """One guidance scale of a sweep."""

    w: float = pd.Field(..., title="Guidance Scale")
    embedding_distance: pd.NonNegativeFloat = pd.Field(..., title="Distance To Source")
    latent_digest: str = pd.Field(..., title="Latent Digest")
    seed: pd.NonNegativeInt = pd.Field(..., title="Seed")
    image: str = pd.Field("", title="Image", description="File name of the generated image.")


def sweep_dataset(rows: Sequence[SweepRow]) -> xr.Dataset:
    """Sweep rows as a dataset indexed by the guidance scale."""
    return xr.Dataset(
        {
            "embedding_distance": ("w", np.array([row.embedding_distance for row in rows])),
            "latent_digest": ("w", np.array([row.latent_digest for row in rows], dtype=object)),
            "seed": ("w", np.array([row.seed for row in rows], dtype=np.uint64)),
        },
        coords={"w": np.array([row.w for row in rows], dtype=np.float64)},
    )


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    """utf-8 comma separated table with header ``w,embedding_distance,latent_digest,seed``."""
    frame = sweep_dataset(rows).to_dataframe().reset_index()
    return frame[list(SWEEP_COLUMNS)].to_csv(index=False, float_format="%.17g")


def image_grid(images: Sequence[np.ndarray], ncols: int = None, pad: int = 2) -> np.ndarray:
    """Tile equally sized (H, W, 3) uint8 images row by row on a white background."""
    if not images:
        raise ShapeError("an image grid needs at least one image.")
    height, width, _ = images[0].shape
    if any(image.shape != images[0].shape for image in images):
        raise ShapeError("grid images must all have the same shape.")

    ncols = len(images) if ncols is None else max(1, min(ncols, len(images)))
    nrows = -(-len(images) // ncols)
    grid = np.full(
        (nrows * height + (nrows + 1) * pad, ncols * width + (ncols + 1) * pad, 3),
        255,
        dtype=np.uint8,
    )
    for index, image in enumerate(images):
        row, col = divmod(index, ncols)
        top = pad + row * (height + pad)
        left = pad + col * (width + pad)
        grid[top : top + height, left : left + width] = image
    return grid


def write_png(path: str, pixels: np.ndarray, text: dict = None) -> None:
    """Atomically write an RGB image with optional PNG text chunks."""
    info = PngImagePlugin.PngInfo()
    for key, value in (text or {}).items():
        info.add_text(key, value)
    buffer = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels)).save(buffer, format="PNG", pnginfo=info)
    atomic_write_bytes(path, buffer.getvalue())


def report_name(command: str) -> str:
    """File name of a command's report."""
    return command + REPORT_SUFFIX
