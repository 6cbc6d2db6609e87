"""File formats: flow rasters, PNG images, float rasters, manifest, CSV.

Flow fields use a little-endian binary layout compatible with the
common optical-flow interchange format except for the magic: 4 bytes
``DFLO``, two int32 (width, height), then row-major float32 pairs
(vx, vy) per pixel.

Scalar fields travel as 16-bit grayscale PNG with an affine value
mapping (``value = raw / 65535 * (hi - lo) + lo``); the (lo, hi) range
is returned to the caller, which records it in the manifest.  Binary
masks are 8-bit PNG with values 0/255.  Dense strain fields are 32-bit
float TIFF.  All writers are deterministic: fixed encoder settings, no
timestamps, sorted manifest keys.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np
from PIL import Image

from ._validation import check_grid, check_mask
from .errors import InvalidParameterError
from .grids import FlowField

__all__ = [
    "FLOW_MAGIC",
    "write_flow",
    "read_flow",
    "save_image_png",
    "load_image_png",
    "save_mask_png",
    "load_mask_png",
    "save_float_tiff",
    "load_float_tiff",
    "load_rgb_raster",
    "load_manifest",
    "save_manifest",
    "write_csv",
]

FLOW_MAGIC = b"DFLO"
CSV_FLOAT_FORMAT = "%.12g"


def write_flow(path, flow: FlowField) -> None:
    """Write a flow raster (DFLO, little-endian float32 vx/vy pairs)."""
    h, w = flow.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[:, :, 0] = flow.vx
    data[:, :, 1] = flow.vy
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        np.asarray([w, h], dtype="<i4").tofile(fh)
        data.tofile(fh)


def read_flow(path) -> FlowField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FLOW_MAGIC:
            raise InvalidParameterError(f"{path}: not a flow raster (magic {magic!r})")
        w, h = np.fromfile(fh, dtype="<i4", count=2)
        data = np.fromfile(fh, dtype="<f4", count=int(w) * int(h) * 2)
    if data.size != int(w) * int(h) * 2:
        raise InvalidParameterError(f"{path}: truncated flow raster")
    data = data.reshape(int(h), int(w), 2).astype(np.float64)
    return FlowField(data[:, :, 0], data[:, :, 1])


def save_image_png(path, values: np.ndarray,
                   value_range: tuple[float, float] | None = None) -> tuple[float, float]:
    """Save a scalar field as 16-bit PNG; returns the (lo, hi) affine range.

    With no explicit range the field's own min/max is used (a constant
    field maps to raw 0 with hi = lo + 1 so the mapping stays invertible).
    """
    values = check_grid(values, "image")
    if value_range is None:
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            hi = lo + 1.0
    else:
        lo, hi = value_range
        if hi <= lo:
            raise InvalidParameterError(f"empty value range ({lo}, {hi})")
    raw = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    raw16 = np.round(raw * 65535.0).astype(np.uint16)
    Image.fromarray(raw16).save(path, format="PNG")  # uint16 infers mode I;16
    return lo, hi


def load_image_png(path, value_range: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    lo, hi = value_range
    img = Image.open(path)
    arr = np.asarray(img, dtype=np.float64)
    if img.mode in ("I;16", "I"):
        scale = 65535.0
    elif img.mode == "L":
        scale = 255.0
    else:
        raise InvalidParameterError(f"{path}: unsupported grayscale mode {img.mode}")
    return arr / scale * (hi - lo) + lo


def save_mask_png(path, mask: np.ndarray) -> None:
    mask = check_mask(mask)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG")


def load_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return arr >= 128


def save_float_tiff(path, values: np.ndarray) -> None:
    values = check_grid(values, "field")
    Image.fromarray(values.astype(np.float32), mode="F").save(path, format="TIFF")


def load_float_tiff(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64)


def load_rgb_raster(path) -> tuple[np.ndarray, float | None]:
    """Load a PNG/TIFF scan as float RGB in [0, 1] plus dpi metadata if present."""
    img = Image.open(path)
    dpi = img.info.get("dpi")
    dpi_value = float(dpi[0]) if dpi else None
    arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr, dpi_value


def load_manifest(out_dir) -> dict:
    path = Path(out_dir) / "manifest.json"
    if not path.exists():
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def save_manifest(out_dir, manifest: dict) -> None:
    """Atomic, key-sorted manifest write (safe under concurrent stages)."""
    path = Path(out_dir) / "manifest.json"
    tmp = path.with_suffix(".json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return CSV_FLOAT_FORMAT % float(value)
    return str(value)


def write_csv(path, header: list[str], rows) -> None:
    """CSV writer with pinned float formatting for reproducible bytes."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])
