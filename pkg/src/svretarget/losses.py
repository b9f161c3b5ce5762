"""Training objectives: perceptual, Haar-wavelet, photometric and edge-aware smoothness."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .pam import ValidMask
from .params import ParamSet
from .shiftwarp import resize_width
from .tensor import (ContractError, DimensionError, Tensor, add, concat, conv2d, div, exp,
                     getitem, max_pool2d, mean, mul, relu, reshape, stack, sub, tabs, transpose,
                     tsum)

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
MIN_CROP = 4

# (name, in, out); a tap is read before the activation of the named layer
VGG_LAYERS = (
    ("conv1_1", 3, 64), ("conv1_2", 64, 64),
    ("conv2_1", 64, 128), ("conv2_2", 128, 128),
    ("conv3_1", 128, 256), ("conv3_2", 256, 256), ("conv3_3", 256, 256),
)
VGG_TAPS = ("conv1_2", "conv2_2", "conv3_3")


@dataclass
class LossWeights:
    alpha_reg: float = 0.05
    gamma: float = 0.85

    def __post_init__(self):
        if self.alpha_reg < 0:
            raise ContractError("alpha_reg must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractError("gamma must lie in [0, 1]")


@dataclass
class LossReport:
    l_vgg_entire: float = 0.0
    l_vgg_salient: float = 0.0
    l_vgg_total: float = 0.0
    l_dwt: float = 0.0
    l_photo: float = 0.0
    l_smooth: float = 0.0
    total: float = 0.0

    FIELDS = ("l_vgg_entire", "l_vgg_salient", "l_vgg_total", "l_dwt", "l_photo", "l_smooth", "total")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    def as_row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


class FeatureExtractor:
    """Frozen VGG-style front end returning the conv1_2, conv2_2 and conv3_3 responses.

    Without a weight file the kernels come from a seeded uniform draw; a
    converted VGG19 file (names ``vgg.<layer>.weight|bias``) can be loaded instead.
    """

    def __init__(self, seed: int = 1234, dtype=np.float32, path=None):
        self.params = ParamSet(seed=seed, dtype=dtype)
        for name, ci, co in VGG_LAYERS:
            self.params.uniform(f"vgg.{name}.weight", (co, ci, 3, 3), ci * 9)
            self.params.uniform(f"vgg.{name}.bias", (co,), ci * 9)
        if path is not None:
            self.params.load(path)
        for p in self.params:
            p.requires_grad = False

    def __call__(self, frame: Tensor) -> list[Tensor]:
        x = frame
        feats = []
        for name, _, _ in VGG_LAYERS:
            if name in ("conv2_1", "conv3_1"):
                x = max_pool2d(x, 2)
            x = conv2d(x, self.params[f"vgg.{name}.weight"], self.params[f"vgg.{name}.bias"], padding=1)
            if name in VGG_TAPS:
                feats.append(x)
            x = relu(x)
        return feats


def mse(a: Tensor, b: Tensor) -> Tensor:
    d = sub(a, b)
    return mean(mul(d, d))


def _zero(like: Tensor) -> Tensor:
    return Tensor(np.zeros((), dtype=like.dtype))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def resize_to(frame, height: int, width: int) -> Tensor:
    """Linear resize of ``[C,H',W']`` to ``[C,height,width]``."""
    frame = resize_width(_as_tensor(frame), width)
    if frame.shape[-2] != height:
        frame = transpose(resize_width(transpose(frame, (0, 2, 1)), height), (0, 2, 1))
    return frame


def mask_bbox(mask: np.ndarray, min_size: int = MIN_CROP) -> tuple[slice, slice] | None:
    """Bounding box of the nonzero mask pixels, grown to at least ``min_size`` per side."""
    rows = np.flatnonzero(np.asarray(mask).any(axis=1))
    cols = np.flatnonzero(np.asarray(mask).any(axis=0))
    if rows.size == 0:
        return None
    h, w = mask.shape

    def span(lo, hi, n):
        lo, hi = int(lo), int(hi) + 1
        grow = max(0, min(min_size, n) - (hi - lo))
        lo = max(0, lo - grow // 2)
        hi = min(n, max(hi, lo + min(min_size, n)))
        lo = min(lo, hi - min(min_size, n))
        return slice(lo, hi)

    return span(rows[0], rows[-1], h), span(cols[0], cols[-1], w)


def feature_mse(fa: list[Tensor], fb: list[Tensor]) -> Tensor:
    out = mse(fa[0], fb[0])
    for a, b in zip(fa[1:], fb[1:]):
        out = add(out, mse(a, b))
    return out


def perceptual_loss(src, ret, src_mask: np.ndarray, extractor: FeatureExtractor,
                    src_features: list[Tensor] | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """(entire, salient, entire + salient) feature MSE after resizing ``ret`` to ``src``."""
    src = _as_tensor(src)
    _, h, w = src.shape
    ret = resize_to(ret, h, w)
    if src_mask is not None and np.asarray(src_mask).shape != (h, w):
        raise DimensionError(f"mask {np.shape(src_mask)} does not match frame {(h, w)}")
    entire = feature_mse(src_features if src_features is not None else extractor(src), extractor(ret))
    box = mask_bbox(np.asarray(src_mask) > 0) if src_mask is not None else None
    if box is None:
        salient = _zero(entire)
    else:
        key = (slice(None),) + box
        salient = feature_mse(extractor(getitem(src, key)), extractor(getitem(ret, key)))
    return entire, salient, add(entire, salient)


# ------------------------------------------------------------------------ DWT


def _even(x: Tensor) -> Tensor:
    h, w = x.shape[-2:]
    if h % 2:
        x = getitem(x, (Ellipsis, np.r_[np.arange(h), h - 2], slice(None)))
    if w % 2:
        x = getitem(x, (Ellipsis, np.r_[np.arange(w), w - 2]))
    return x


def dwt2(frame) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Single-level orthonormal 2D Haar analysis over the last two axes.

    Odd extents are made even by reflecting one row/column.
    """
    x = _even(_as_tensor(frame))
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = mul(add(add(a, b), add(c, d)), 0.5)
    lh = mul(sub(add(a, c), add(b, d)), 0.5)
    hl = mul(sub(add(a, b), add(c, d)), 0.5)
    hh = mul(sub(add(a, d), add(b, c)), 0.5)
    return ll, lh, hl, hh


def idwt2(bands) -> Tensor:
    ll, lh, hl, hh = bands
    a = mul(add(add(ll, lh), add(hl, hh)), 0.5)
    b = mul(sub(add(ll, hl), add(lh, hh)), 0.5)
    c = mul(sub(add(ll, lh), add(hl, hh)), 0.5)
    d = mul(sub(add(ll, hh), add(lh, hl)), 0.5)
    *lead, h, w = a.shape
    top = reshape(stack([a, b], axis=-1), (*lead, h, 2 * w))
    bottom = reshape(stack([c, d], axis=-1), (*lead, h, 2 * w))
    return reshape(stack([top, bottom], axis=-2), (*lead, 2 * h, 2 * w))


def _dwt_view_loss(src: Tensor, ret: Tensor) -> Tensor:
    s, r = dwt2(src), dwt2(ret)
    band_term = mse(concat(list(s), axis=-1), concat(list(r), axis=-1))
    return add(band_term, mse(idwt2(s), idwt2(r)))


def dwt_loss(src_l, src_r, ret_l, ret_r) -> Tensor:
    views = []
    for src, ret in ((src_l, ret_l), (src_r, ret_r)):
        src = _as_tensor(src)
        views.append(_dwt_view_loss(src, resize_to(ret, *src.shape[-2:])))
    return mul(add(views[0], views[1]), 0.5)


# ---------------------------------------------------------------- photometric


def box3(x: Tensor) -> Tensor:
    """3x3 mean over the last two axes of ``[C,H,W]`` with replicated borders."""
    c, h, w = x.shape
    rows = np.clip(np.arange(-1, h + 1), 0, h - 1)
    cols = np.clip(np.arange(-1, w + 1), 0, w - 1)
    xp = getitem(getitem(x, (slice(None), rows)), (slice(None), slice(None), cols))
    kernel = Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0, dtype=x.dtype))
    return reshape(conv2d(reshape(xp, (c, 1, h + 2, w + 2)), kernel), (c, h, w))


def ssim_map(x, y) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    mx, my = box3(x), box3(y)
    sxx = sub(box3(mul(x, x)), mul(mx, mx))
    syy = sub(box3(mul(y, y)), mul(my, my))
    sxy = sub(box3(mul(x, y)), mul(mx, my))
    num = mul(add(mul(mul(mx, my), 2.0), SSIM_C1), add(mul(sxy, 2.0), SSIM_C2))
    den = mul(add(add(mul(mx, mx), mul(my, my)), SSIM_C1), add(add(sxx, syy), SSIM_C2))
    return div(num, den)


def photometric_loss(left, warped_right, mask: ValidMask, gamma: float = 0.85) -> Tensor:
    """Masked blend of SSIM dissimilarity and absolute error, averaged over valid pixels."""
    left, warped_right = _as_tensor(left), _as_tensor(warped_right)
    if left.shape != warped_right.shape:
        raise DimensionError(f"{left.shape} vs {warped_right.shape}")
    if mask.flags.shape != left.shape[1:]:
        raise DimensionError("valid mask extents differ from the frames")
    n = mask.count
    if n == 0:
        raise ContractError("photometric loss needs at least one valid pixel")
    dssim = mean(mul(sub(1.0, ssim_map(left, warped_right)), 0.5), axis=0)
    mae = mean(tabs(sub(left, warped_right)), axis=0)
    per_pixel = add(mul(dssim, gamma), mul(mae, 1.0 - gamma))
    weights = mask.flags.astype(left.dtype)
    return div(tsum(mul(per_pixel, weights)), float(n))


# ----------------------------------------------------------------- smoothness


def smoothness_loss(disparity: Tensor, image) -> Tensor:
    """Edge-aware first-order smoothness of an ``[H,W]`` disparity against a ``[C,H,W]`` image."""
    disparity, image = _as_tensor(disparity), _as_tensor(image)
    h, w = disparity.shape
    if image.shape[1:] != (h, w):
        raise DimensionError(f"disparity {disparity.shape} vs image {image.shape}")
    loss = _zero(disparity)
    if w > 1:
        gd = tabs(sub(disparity[:, 1:], disparity[:, :-1]))
        gi = tsum(tabs(sub(image[:, :, 1:], image[:, :, :-1])), axis=0)
        loss = add(loss, mean(mul(gd, exp(mul(gi, -1.0)))))
    if h > 1:
        gd = tabs(sub(disparity[1:, :], disparity[:-1, :]))
        gi = tsum(tabs(sub(image[:, 1:, :], image[:, :-1, :])), axis=0)
        loss = add(loss, mean(mul(gd, exp(mul(gi, -1.0)))))
    return loss


# ---------------------------------------------------------------------- total


def combine_losses(l_vgg_entire, l_vgg_salient, l_dwt, l_photo, l_smooth,
                   weights: LossWeights = LossWeights()) -> tuple[Tensor, LossReport]:
    """Weighted sum with the wavelet term scaled by ``alpha_reg``; returns the graph total and a report."""
    terms = [_as_tensor(np.asarray(t, dtype=np.float64)) if not isinstance(t, Tensor) else t
             for t in (l_vgg_entire, l_vgg_salient, l_dwt, l_photo, l_smooth)]
    entire, salient, dwt, photo, smooth = terms
    vgg_total = add(entire, salient)
    total = add(add(vgg_total, smooth), photo)
    if weights.alpha_reg:
        total = add(total, mul(dwt, weights.alpha_reg))
    report = LossReport(entire.item(), salient.item(), vgg_total.item(), dwt.item(),
                        photo.item(), smooth.item(), total.item())
    return total, report


def total_loss(l_vgg_entire, l_vgg_salient, l_dwt, l_photo, l_smooth,
               weights: LossWeights = LossWeights()) -> LossReport:
    return combine_losses(l_vgg_entire, l_vgg_salient, l_dwt, l_photo, l_smooth, weights)[1]
