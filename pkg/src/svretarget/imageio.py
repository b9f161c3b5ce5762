"""PNG / JSON ingestion in the KITTI conventions used throughout the package."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class IngestionError(Exception):
    """A required input file is missing or unreadable."""


def _open(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            return np.array(im)
    except (UnidentifiedImageError, OSError, SyntaxError) as err:
        raise IngestionError(f"corrupt image {path}: {err}") from None


def read_rgb(path) -> np.ndarray:
    """8-bit RGB PNG -> float32 ``[3,H,W]`` in [0,1]."""
    arr = _open(path)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    arr = arr[..., :3]
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()


def write_rgb(path, frame: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(frame).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def read_gray(path) -> np.ndarray:
    """8-bit grayscale PNG -> float32 ``[H,W]`` in [0,1]."""
    arr = _open(path)
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr.astype(np.float32) / 255.0


def write_gray(path, values: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def read_disparity(path) -> tuple[np.ndarray, np.ndarray]:
    """16-bit PNG -> (disparity in pixels, validity). Value 0 marks invalid."""
    raw = _open(path).astype(np.int64)
    if raw.ndim == 3:
        raw = raw[..., 0]
    valid = raw > 0
    return (raw / 256.0).astype(np.float32), valid


def write_disparity(path, disparity: np.ndarray, valid: np.ndarray | None = None) -> None:
    raw = np.clip(np.round(np.asarray(disparity, dtype=np.float64) * 256.0), 0, 65535).astype(np.uint16)
    if valid is not None:
        raw[~np.asarray(valid)] = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(raw).save(path)


def read_boxes(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing file: {path}")
    try:
        items = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise IngestionError(f"bad box file {path}: {err}") from None
    if not isinstance(items, list):
        raise IngestionError(f"bad box file {path}: expected a JSON array")
    return items


def write_boxes(path, boxes) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(list(boxes)))
