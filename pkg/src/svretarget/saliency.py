"""Fusion of co-saliency, detection boxes and disparity into one object mask."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .tensor import ContractError, DimensionError

DEFAULT_MIN_CONFIDENCE = 0.25
DEFAULT_BLUR_SIGMA = 3.0
DEFAULT_KERNEL = 11


@dataclass
class DisparityMap:
    """Left-referenced horizontal disparity in pixels; invalid pixels carry 0."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape:
            raise DimensionError("disparity and validity extents differ")
        self.values = np.where(self.valid, self.values, 0).astype(np.float32)

    @classmethod
    def dense(cls, values) -> "DisparityMap":
        values = np.asarray(values, dtype=np.float32)
        return cls(values, np.ones(values.shape, dtype=bool))

    @classmethod
    def empty(cls, shape) -> "DisparityMap":
        return cls(np.zeros(shape, np.float32), np.zeros(shape, bool))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float
    label: str = ""
    conf: float = 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]),
                   str(d.get("label", "")), float(d.get("conf", 1.0)))

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h, "label": self.label, "conf": self.conf}

    def pixel_slices(self, shape) -> tuple[slice, slice]:
        h, w = shape
        if self.w <= 0 or self.h <= 0:
            raise ContractError(f"box with non-positive size: {self}")
        r0, r1 = int(np.floor(self.y)), int(np.ceil(self.y + self.h))
        c0, c1 = int(np.floor(self.x)), int(np.ceil(self.x + self.w))
        if r1 <= 0 or c1 <= 0 or r0 >= h or c0 >= w:
            raise ContractError(f"box {self} does not intersect a {h}x{w} frame")
        return slice(max(r0, 0), min(r1, h)), slice(max(c0, 0), min(c1, w))


def box_union(boxes: Iterable[Box], shape, min_confidence: float = DEFAULT_MIN_CONFIDENCE) -> np.ndarray:
    inside = np.zeros(shape, dtype=bool)
    for box in boxes:
        if box.conf >= min_confidence:
            inside[box.pixel_slices(shape)] = True
    return inside


def disparity_weight(disparity: DisparityMap) -> np.ndarray:
    """Nearness in [0,1] over valid pixels; 0.5 where disparity is unknown or flat."""
    weight = np.full(disparity.shape, 0.5)
    d = disparity.values[disparity.valid].astype(np.float64)
    if d.size:
        lo, hi = d.min(), d.max()
        if hi > lo:
            weight[disparity.valid] = (d - lo) / (hi - lo)
    return weight


def fuse(saliency: np.ndarray, disparity: DisparityMap, boxes: Sequence[Box],
         min_confidence: float = DEFAULT_MIN_CONFIDENCE) -> np.ndarray:
    """Disparity-weighted saliency clipped to the accepted detection boxes, peak-normalized."""
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.shape != disparity.shape:
        raise DimensionError(f"saliency {saliency.shape} vs disparity {disparity.shape}")
    fused = saliency * (0.5 + 0.5 * disparity_weight(disparity))
    fused[~box_union(boxes, saliency.shape, min_confidence)] = 0.0
    peak = fused.max()
    if peak > 0:
        fused /= peak
    return np.clip(fused, 0.0, 1.0).astype(np.float32)


def gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    r = np.arange(size) - size // 2
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def dilate(mask: np.ndarray, blur_sigma: float = DEFAULT_BLUR_SIGMA, kernel: int = DEFAULT_KERNEL) -> np.ndarray:
    """Gaussian blur then a ``kernel`` x ``kernel`` box sum clamped to [0,1].

    A leading channel axis, if present, is processed channel by channel.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ContractError(f"dilation kernel must be odd, got {kernel}")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 3:
        return np.stack([dilate(m, blur_sigma, kernel) for m in mask])
    g = gaussian_kernel(blur_sigma, kernel)
    out = ndimage.correlate1d(mask, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    box = np.ones(kernel)
    out = ndimage.correlate1d(out, box, axis=0, mode="constant")
    out = ndimage.correlate1d(out, box, axis=1, mode="constant")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def left_to_right_disparity(disparity: DisparityMap) -> DisparityMap:
    """Forward-splat a left-referenced map into right-view coordinates (nearest surface wins)."""
    h, w = disparity.shape
    out = np.zeros((h, w), np.float32)
    valid = np.zeros((h, w), bool)
    ys, xs = np.nonzero(disparity.valid)
    d = disparity.values[ys, xs]
    xr = np.rint(xs - d).astype(np.int64)
    keep = (xr >= 0) & (xr < w)
    ys, xr, d = ys[keep], xr[keep], d[keep]
    order = np.argsort(d, kind="stable")
    out[ys[order], xr[order]] = d[order]
    valid[ys, xr] = True
    return DisparityMap(out, valid)
