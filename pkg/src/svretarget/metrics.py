"""Evaluation metrics: bidirectional patch similarity, deep-feature distance, disparity distortion.

Patch search works on 8-bit quantized intensities.  With integer-valued
float64 data every sum of squares and every dot product in the search is
exact, so the BLAS-backed search returns exactly what a naive loop would.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .losses import FeatureExtractor, mse, resize_to
from .saliency import DisparityMap
from .shiftwarp import ColumnMapping
from .tensor import ContractError, Tensor

LEVELS = 255


@dataclass
class MetricsReport:
    bds: float | None = None
    feature_distance: float | None = None
    ddr_signed: float | None = None
    ddr_abs: float | None = None
    per_frame: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def save_csv(self, path) -> None:
        keys = sorted({k for row in self.per_frame for k in row}, key=lambda k: (k != "frame", k))
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(self.per_frame)


def quantize(frame) -> np.ndarray:
    return np.rint(np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0) * LEVELS)


def patch_matrix(img: np.ndarray, patch: int, stride: int = 1) -> np.ndarray:
    """``[C,H,W]`` -> ``[N, C*patch*patch]`` with patches on a ``stride`` grid."""
    win = sliding_window_view(img, (patch, patch), axis=(1, 2))[:, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4).reshape(-1, img.shape[0] * patch * patch))


def min_ssd(queries: np.ndarray, candidates: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """For each query row, the smallest sum of squared differences to any candidate row."""
    cand_sq = np.einsum("ij,ij->i", candidates, candidates)
    out = np.empty(len(queries))
    for start in range(0, len(queries), chunk):
        q = queries[start:start + chunk]
        d = np.einsum("ij,ij->i", q, q)[:, None] + cand_sq[None, :] - 2.0 * (q @ candidates.T)
        out[start:start + chunk] = d.min(axis=1)
    return out


def bds_pair(source: np.ndarray, retargeted: np.ndarray, patch: int = 7, stride: int = 2) -> tuple[float, float]:
    """(completeness, coherence) for one ``[C,H,W]`` frame pair, per pixel per channel on [0,1]."""
    for name, img in (("source", source), ("retargeted", retargeted)):
        if patch > min(img.shape[1:]):
            raise ContractError(f"patch {patch} larger than {name} frame {img.shape[1:]}")
    s, r = quantize(source), quantize(retargeted)
    norm = patch * patch * s.shape[0] * LEVELS ** 2
    completeness = min_ssd(patch_matrix(s, patch, stride), patch_matrix(r, patch)).mean() / norm
    coherence = min_ssd(patch_matrix(r, patch, stride), patch_matrix(s, patch)).mean() / norm
    return float(completeness), float(coherence)


def bds(source: Sequence[np.ndarray], retargeted: Sequence[np.ndarray], patch: int = 7, stride: int = 2) -> float:
    """Completeness + coherence averaged over the given frame pairs (pass both views' frames)."""
    if len(source) != len(retargeted) or not source:
        raise ContractError("need matching, non-empty frame sequences")
    return float(np.mean([sum(bds_pair(s, r, patch, stride)) for s, r in zip(source, retargeted)]))


def feature_distance_pair(source, retargeted, extractor: FeatureExtractor) -> float:
    src = Tensor(np.asarray(source, dtype=extractor.params.dtype))
    _, h, w = src.shape
    ret = resize_to(Tensor(np.asarray(retargeted, dtype=extractor.params.dtype)), h, w)
    fs, fr = extractor(src), extractor(ret)
    return float(np.mean([mse(a, b).item() for a, b in zip(fs, fr)]))


def feature_distance(source: Sequence[np.ndarray], retargeted: Sequence[np.ndarray],
                     extractor: FeatureExtractor) -> float:
    if len(source) != len(retargeted) or not source:
        raise ContractError("need matching, non-empty frame sequences")
    return float(np.mean([feature_distance_pair(s, r, extractor) for s, r in zip(source, retargeted)]))


def max_disparity(disparities: Sequence[DisparityMap]) -> float:
    vals = [np.abs(d.values[d.valid]).max() for d in disparities if d.valid.any()]
    return float(max(vals)) if vals else 0.0


def ddr_terms(disparity: DisparityMap, mapping_l: ColumnMapping, mapping_r: ColumnMapping) -> tuple[float, float, int]:
    """(signed sum, absolute sum, valid count) of source-minus-retargeted disparity for one frame.

    The retargeted disparity is obtained by transporting each left match
    through both views' column mappings.
    """
    h, w = disparity.shape
    if mapping_l.source_width != w or mapping_r.source_width != w:
        raise ContractError("mapping source width differs from disparity width")
    u = np.arange(mapping_l.target_width, dtype=np.float64)
    s = np.clip(mapping_l.to_source(u), 0.0, w - 1.0)
    x0 = np.floor(s).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    f = s - x0
    vals = disparity.values.astype(np.float64)
    d_grid = vals[:, x0] * (1.0 - f) + vals[:, x1] * f
    ok = disparity.valid[:, x0] & (disparity.valid[:, x1] | (f == 0))
    xr = s - d_grid                                   # left-referenced: x_right = x_left - d
    ok &= (xr >= -0.5) & (xr <= w - 0.5)
    d_tilde = u - mapping_r.to_target(xr)
    diff = (d_grid - d_tilde)[ok]
    return float(diff.sum()), float(np.abs(diff).sum()), int(ok.sum())


def _broadcast(mappings, n):
    if isinstance(mappings, ColumnMapping):
        return [mappings] * n
    if len(mappings) != n:
        raise ContractError("need one mapping per frame")
    return list(mappings)


def ddr(src_disp: Sequence[DisparityMap], mapping_l, mapping_r) -> tuple[float, float]:
    """(signed, absolute) disparity distortion normalized by the largest source disparity."""
    src_disp = list(src_disp)
    d_max = max_disparity(src_disp)
    if d_max == 0:
        raise ContractError("source disparity range is zero")
    signed = total_abs = 0.0
    count = 0
    for d, ml, mr in zip(src_disp, _broadcast(mapping_l, len(src_disp)), _broadcast(mapping_r, len(src_disp))):
        s, a, n = ddr_terms(d, ml, mr)
        signed += s
        total_abs += a
        count += n
    if count == 0:
        raise ContractError("no valid disparity pixels survive the mapping")
    return signed / (d_max * count), total_abs / (d_max * count)
