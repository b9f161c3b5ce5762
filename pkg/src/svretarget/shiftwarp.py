"""Column-consistent shift-and-warp retargeting.

A saliency mask is reduced to a per-column importance, the importance is
turned into per-column output widths whose prefix sums form a monotone
source-to-target column mapping, and frames are resampled through the
inverse of that mapping.  Every row of a column receives the same shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ContractError, DimensionError, Tensor, conv_column, sample_columns

MIN_COLUMN_WIDTH = 1e-3


@dataclass
class ShiftParams:
    alpha: float = 1.9
    beta: float = 1.0
    target_ratio: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ContractError("alpha and beta must be non-negative and not both zero")
        if self.target_ratio <= 0:
            raise ContractError("target_ratio must be positive")

    def target_width(self, width: int) -> int:
        return max(1, int(np.floor(self.target_ratio * width + 1e-9)))


@dataclass
class ColumnMapping:
    """``tgt[x]`` is the target coordinate of the left boundary of source column ``x``."""

    tgt: np.ndarray
    target_width: int

    def __post_init__(self):
        self.tgt = np.asarray(self.tgt, dtype=np.float64)

    @property
    def source_width(self) -> int:
        return len(self.tgt) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.tgt)

    def validate(self, tol: float = 1e-4) -> None:
        if self.tgt[0] != 0 or abs(self.tgt[-1] - self.target_width) > tol:
            raise ContractError("mapping does not span [0, W']")
        if np.any(self.widths <= 0):
            raise ContractError("mapping is not strictly increasing")

    def to_target(self, x) -> np.ndarray:
        """Continuous source pixel coordinate -> target pixel coordinate (pixel centres)."""
        edges = np.arange(self.source_width + 1, dtype=np.float64)
        return np.interp(np.asarray(x, dtype=np.float64) + 0.5, edges, self.tgt) - 0.5

    def to_source(self, u) -> np.ndarray:
        edges = np.arange(self.source_width + 1, dtype=np.float64)
        return np.interp(np.asarray(u, dtype=np.float64) + 0.5, self.tgt, edges) - 0.5

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        lines = [str(self.target_width)] + [repr(float(v)) for v in self.tgt]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ColumnMapping":
        values = Path(path).read_text().split()
        return cls(np.array([float(v) for v in values[1:]]), int(values[0]))


@dataclass
class ShiftMap:
    """Per-target-column offset: target column ``u`` samples source column ``u + values[u]``."""

    values: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return np.arange(len(self.values), dtype=np.float64) + self.values

    def field(self, height: int) -> np.ndarray:
        return np.broadcast_to(self.values, (height, len(self.values)))

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("".join(f"{float(v)!r}\n" for v in self.values))

    @classmethod
    def load(cls, path) -> "ShiftMap":
        return cls(np.array([float(v) for v in Path(path).read_text().split()]))


def raw_shift_field(mask: np.ndarray, params: ShiftParams) -> np.ndarray:
    """Per-column importance ``alpha * S1 + beta * S2``.

    S1 is the column mean (an all-ones ``(H, 1)`` column convolution over
    ``H``); S2 is the mean of S1 tiled over every column.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be H x W, got {mask.shape}")
    h, w = mask.shape
    kernel = Tensor(np.ones((1, 1, h)))
    s1 = (conv_column(Tensor(mask[None]), kernel).data[0, 0] / h)
    s2 = np.full(w, s1.sum() / w)
    return params.alpha * s1 + params.beta * s2


def _floor_widths(rho: np.ndarray, total: float, eps: float) -> np.ndarray:
    rho = rho.copy()
    fixed = np.zeros(len(rho), dtype=bool)
    for _ in range(len(rho)):
        low = (rho < eps) & ~fixed
        if not low.any():
            break
        fixed |= low
        rho[fixed] = eps
        free = rho[~fixed]
        rho[~fixed] = free * ((total - eps * fixed.sum()) / free.sum())
    return rho


def uniform_mapping(width: int, target_width: int) -> ColumnMapping:
    return ColumnMapping(np.arange(width + 1, dtype=np.float64) * (target_width / width), target_width)


def build_mapping(importance, width: int, target_width: int, min_width: float = MIN_COLUMN_WIDTH) -> ColumnMapping:
    """Allocate ``target_width`` output columns in proportion to ``importance``."""
    if target_width < 1:
        raise ContractError(f"target width must be >= 1, got {target_width}")
    r = np.asarray(importance, dtype=np.float64)
    if r.shape != (width,):
        raise DimensionError(f"importance length {r.shape} does not match width {width}")
    if min_width * width > target_width:
        raise ContractError("target width too small for the minimum column width")
    total = r.sum()
    if total <= 1e-9 or np.ptp(r) == 0:
        return uniform_mapping(width, target_width)
    rho = _floor_widths(target_width * r / total, float(target_width), min_width)
    tgt = np.concatenate([[0.0], np.cumsum(rho)])
    tgt[-1] = target_width
    return ColumnMapping(tgt, target_width)


def shift_map(mapping: ColumnMapping) -> ShiftMap:
    u = np.arange(mapping.target_width, dtype=np.float64)
    return ShiftMap(mapping.to_source(u) - u)


def _as_tensor(frame) -> Tensor:
    return frame if isinstance(frame, Tensor) else Tensor(frame)


def warp(frame, shift: ShiftMap) -> Tensor:
    """Resample ``[C,H,W]`` to ``[C,H,W']`` along the shift map (linear, border-clamped)."""
    return sample_columns(_as_tensor(frame), shift.positions)


def inverse_warp(frame, mapping: ColumnMapping) -> Tensor:
    """Bring a ``[C,H,W']`` retargeted tensor back to the source width."""
    frame = _as_tensor(frame)
    if frame.shape[-1] != mapping.target_width:
        raise DimensionError(f"frame width {frame.shape[-1]} != mapping target width {mapping.target_width}")
    return sample_columns(frame, mapping.to_target(np.arange(mapping.source_width)))


def resize_width(frame, width: int) -> Tensor:
    """Plain linear resize of the last axis to ``width`` (pixel-centre convention)."""
    frame = _as_tensor(frame)
    if frame.shape[-1] == width:
        return frame
    return inverse_warp(frame, uniform_mapping(width, frame.shape[-1]))


def retarget_mapping(mask: np.ndarray, params: ShiftParams) -> ColumnMapping:
    w = mask.shape[1]
    return build_mapping(raw_shift_field(mask, params), w, params.target_width(w))
