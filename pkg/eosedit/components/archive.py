"""Named-tensor archives (safetensors layout) and their sidecar records.

Layout: 8-byte little-endian header length, utf-8 json header mapping tensor names to
``{dtype, shape, data_offsets}`` plus an optional ``__metadata__`` string map, then the raw
little-endian buffers.
"""
import io
import json
import os
import struct
from typing import BinaryIO, Dict, Optional, Tuple, Union

import numpy as np
import safetensors.numpy

from .fileio import atomic_write_bytes
from ..log import log, ArchiveError

ArchiveSource = Union[str, os.PathLike, bytes, BinaryIO]

HEADER_LEN_BYTES = 8
METADATA_KEY = "__metadata__"

# dtypes numpy can not represent, rejected before decoding
UNSUPPORTED_DTYPES = ("BF16", "F8_E4M3", "F8_E5M2")


def _read_bytes(source: ArchiveSource) -> bytes:
    """Whole archive as bytes."""
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source, "rb") as file_handle:
                return file_handle.read()
        except OSError as e:
            raise ArchiveError(f"could not read archive '{os.fspath(source)}': {e}") from e
    if isinstance(source, io.TextIOBase):
        raise ArchiveError("archives must be opened in binary mode.")
    return source.read()


def read_header(data: bytes) -> Dict[str, dict]:
    """Parse the json header of an archive held in memory."""
    if len(data) < HEADER_LEN_BYTES:
        raise ArchiveError(f"archive too short ({len(data)} bytes) to hold a header.")
    (header_len,) = struct.unpack("<Q", data[:HEADER_LEN_BYTES])
    if HEADER_LEN_BYTES + header_len > len(data):
        raise ArchiveError(f"archive header length {header_len} exceeds the archive size.")
    try:
        header = json.loads(data[HEADER_LEN_BYTES : HEADER_LEN_BYTES + header_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveError(f"archive header is not valid json: {e}") from e
    if not isinstance(header, dict):
        raise ArchiveError("archive header must be a json object.")
    return header


def read_archive(source: ArchiveSource) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    """Read every tensor and the metadata map of an archive.

    Parameters
    ----------
    source : Union[str, bytes, BinaryIO]
        Path, raw bytes, or binary stream of the archive.

    Returns
    -------
    Tuple[Dict[str, np.ndarray], Dict[str, str]]
        Tensors by name, and the (possibly empty) metadata map.
    """
    data = _read_bytes(source)
    header = read_header(data)
    metadata = header.pop(METADATA_KEY, None) or {}

    unsupported = {
        name: info.get("dtype")
        for name, info in header.items()
        if info.get("dtype") in UNSUPPORTED_DTYPES
    }
    if unsupported:
        raise ArchiveError(f"tensors with dtypes numpy can not hold: {unsupported}.")

    try:
        tensors = safetensors.numpy.load(data)
    except Exception as e:  # pylint:disable=broad-except
        raise ArchiveError(f"could not decode archive tensors: {e}") from e

    log.debug(f"Read archive with {len(tensors)} tensors.")
    return tensors, dict(metadata)


def write_archive(
    path: Union[str, os.PathLike],
    tensors: Dict[str, np.ndarray],
    metadata: Optional[Dict[str, str]] = None,
) -> None:
    """Atomically write tensors (and a string metadata map) to an archive file."""
    contiguous = {name: np.ascontiguousarray(value) for name, value in tensors.items()}
    metadata = {key: str(value) for key, value in (metadata or {}).items()}
    data = safetensors.numpy.save(contiguous, metadata=metadata or None)
    atomic_write_bytes(path, data)
    log.debug(f"Wrote archive '{os.fspath(path)}' with {len(tensors)} tensors.")


def sidecar_path(path: Union[str, os.PathLike]) -> str:
    """Path of the json record written next to an archive or image."""
    return os.fspath(path) + ".json"
