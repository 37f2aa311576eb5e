"""Dataset ingestion and image preprocessing.

Two on-disk formats are supported: CSV with one sample per row, and the
big-endian IDX image container (magic 0x00000803, unsigned bytes). IDX
pixels are scaled to [0, 1]; every sample becomes one point with uniform
weight.
"""

from __future__ import annotations

import csv
import enum
import math
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError, ParseError
from .measures import EmpiricalMeasure

__all__ = [
    "DatasetFormat",
    "ingest",
    "load_csv",
    "load_idx",
    "rotate_images",
    "resize_images",
    "as_square_images",
]

_IDX_IMAGE_MAGIC = 0x00000803
_IDX_HEADER_BYTES = 16


class DatasetFormat(enum.Enum):
    CSV = "csv"
    IDX = "idx"

    @classmethod
    def from_name(cls, name: str) -> "DatasetFormat":
        try:
            return cls(str(name).lower())
        except ValueError:
            raise FormatError(
                f"unknown dataset format {name!r}; expected one of "
                f"{[m.value for m in cls]}"
            ) from None


def load_csv(path) -> EmpiricalMeasure:
    """One sample per row, d numeric columns, uniform weights."""
    rows = []
    width = None
    with open(path, newline="") as handle:
        for r, record in enumerate(csv.reader(handle)):
            if not record:
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise ParseError(
                    f"{path}: row {r} has {len(record)} columns, expected {width}"
                )
            values = []
            for c, cell in enumerate(record):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric value {cell!r} at row {r}, column {c}"
                    ) from None
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return EmpiricalMeasure.uniform(np.asarray(rows, dtype=np.float64))


def load_idx(path) -> EmpiricalMeasure:
    """IDX ubyte images, flattened to rows*cols coordinates in [0, 1]."""
    data = Path(path).read_bytes()
    if len(data) < _IDX_HEADER_BYTES:
        raise FormatError(
            f"{path}: IDX header needs {_IDX_HEADER_BYTES} bytes, file has "
            f"{len(data)} (truncated at byte offset {len(data)})"
        )
    magic = int.from_bytes(data[0:4], "big")
    if magic != _IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{path}: bad IDX magic 0x{magic:08x} at byte offset 0, expected "
            f"0x{_IDX_IMAGE_MAGIC:08x}"
        )
    count = int.from_bytes(data[4:8], "big")
    n_rows = int.from_bytes(data[8:12], "big")
    n_cols = int.from_bytes(data[12:16], "big")
    expected = _IDX_HEADER_BYTES + count * n_rows * n_cols
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes "
            f"({count} images of {n_rows}x{n_cols} after the 16-byte header), "
            f"got {len(data)}"
        )
    if count == 0:
        raise FormatError(f"{path}: IDX file declares zero images")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=_IDX_HEADER_BYTES)
    points = pixels.reshape(count, n_rows * n_cols).astype(np.float64) / 255.0
    return EmpiricalMeasure.uniform(points)


def ingest(path, format) -> EmpiricalMeasure:
    fmt = format if isinstance(format, DatasetFormat) else DatasetFormat.from_name(format)
    if fmt is DatasetFormat.CSV:
        return load_csv(path)
    return load_idx(path)


def as_square_images(points: np.ndarray) -> np.ndarray:
    """Reshape flattened samples to (n, side, side); rejects non-square sizes."""
    points = np.asarray(points, dtype=np.float64)
    side = math.isqrt(points.shape[1])
    if side * side != points.shape[1]:
        raise FormatError(
            f"samples of dimension {points.shape[1]} are not square images; "
            "rotation needs side*side pixels"
        )
    return points.reshape(points.shape[0], side, side)


def rotate_images(points: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Rotate flattened samples about the image center; bilinear, zero padding.

    A zero angle is an exact identity. Returns flattened samples again.
    """
    images = as_square_images(points)
    if angle_degrees == 0.0:
        return images.reshape(points.shape).copy()
    rotated = ndimage.rotate(
        images,
        angle_degrees,
        axes=(1, 2),
        reshape=False,
        order=1,
        mode="constant",
        cval=0.0,
        prefilter=False,
    )
    return np.clip(rotated, 0.0, 1.0).reshape(points.shape)


def resize_images(points: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resize of flattened square samples to side x side."""
    images = as_square_images(points)
    if images.shape[1] == side:
        return images.reshape(points.shape[0], side * side).copy()
    factor = side / images.shape[1]
    resized = ndimage.zoom(images, (1.0, factor, factor), order=1, prefilter=False)
    if resized.shape[1:] != (side, side):
        resized = resized[:, :side, :side]
    return np.clip(resized, 0.0, 1.0).reshape(points.shape[0], side * side)
