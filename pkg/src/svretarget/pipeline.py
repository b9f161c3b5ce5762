"""End-to-end wiring: saliency -> shift-and-warp -> SVT -> PAM -> reconstruction -> losses."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import RunConfig
from .data import StereoClip, SyntheticScene, ViewSaliency, load_dataset, synthetic_clip, synthetic_windows, DatasetLayout
from .losses import (FeatureExtractor, LossReport, combine_losses, dwt_loss, perceptual_loss,
                     photometric_loss, smoothness_loss)
from .pam import init_pam, pam_attention, pam_disparity, pam_fuse, transport, valid_mask
from .params import ParamSet
from .reconstruction import init_reconstruction, reconstruct
from .saliency import DisparityMap, dilate, fuse, left_to_right_disparity
from .shiftwarp import ColumnMapping, ShiftMap, build_mapping, raw_shift_field, shift_map, warp
from .svt import init_svt, svt_forward
from .tensor import NumericError, Tape, Tensor, add, concat, conv2d, getitem

log = logging.getLogger(__name__)

WARPED_CHANNELS = 6  # RGB + 3-channel SVT map


class TrainingError(NumericError):
    pass


class RetargetNet:
    """All learnable blocks under one parameter namespace (``svt.*``, ``feat.*``, ``pam.*``, ``recon.*``)."""

    def __init__(self, cfg: RunConfig, seed: int | None = None, dtype=np.float32):
        self.cfg = cfg
        self.params = ParamSet(seed=cfg.optim.seed if seed is None else seed, dtype=dtype)
        init_svt(self.params, cfg.svt)
        c = cfg.model.feature_channels
        self.params.uniform("feat.weight", (c, WARPED_CHANNELS, 1, 1), WARPED_CHANNELS)
        self.params.constant("feat.bias", (c,))
        init_pam(self.params, c)
        init_reconstruction(self.params, WARPED_CHANNELS)

    def save(self, path) -> None:
        self.params.save(path)

    def load(self, path) -> None:
        self.params.load(path)


@dataclass
class ViewResult:
    frame: Tensor            # warped RGB, [3,H,W']
    features: Tensor         # warped RGB ++ warped SVT map, [6,H,W']
    mask: np.ndarray         # dilated fused mask at source extents
    mapping: ColumnMapping
    shift: ShiftMap


@dataclass
class RetargetResult:
    left: ViewResult
    right: ViewResult


def _pad_to(x: Tensor, height: int, width: int) -> Tensor:
    """Edge-replicate a ``[C,h,w]`` map up to ``[C,height,width]``."""
    _, h, w = x.shape
    if (h, w) == (height, width):
        return x
    rows = np.minimum(np.arange(height), h - 1)
    cols = np.minimum(np.arange(width), w - 1)
    return getitem(getitem(x, (slice(None), rows)), (slice(None), slice(None), cols))


def view_mask(saliency: ViewSaliency | None, disparity: DisparityMap, cfg: RunConfig) -> np.ndarray:
    """Dilated fused mask; without detector outputs every pixel is equally important."""
    if saliency is None:
        return np.ones(disparity.shape, np.float32)
    r = cfg.retarget
    fused = fuse(saliency.saliency, disparity, saliency.boxes, r.min_confidence)
    return dilate(fused, r.blur_sigma, r.dilate_kernel)


def retarget_clip(clip: StereoClip, cfg: RunConfig, net: RetargetNet,
                  saliency: tuple[ViewSaliency | None, ViewSaliency | None] | None = None,
                  with_features: bool = True) -> RetargetResult:
    """Retarget the centre frame of both views; mappings depend only on each view's own mask."""
    saliency = clip.saliency if saliency is None else saliency
    c = clip.center
    disp_l = clip.disparity[c]
    disp_r = left_to_right_disparity(disp_l)
    params = cfg.retarget.shift_params()
    dtype = net.params.dtype
    out = []
    for frames, disp, sal in ((clip.left, disp_l, saliency[0]), (clip.right, disp_r, saliency[1])):
        mask = view_mask(sal, disp, cfg)
        mapping = build_mapping(raw_shift_field(mask, params), clip.width, params.target_width(clip.width))
        shift = shift_map(mapping)
        warped = warp(Tensor(frames[c].astype(dtype)), shift)
        features = warped
        if with_features:
            svt_map = svt_forward(frames.astype(dtype), disp.values, net.params, cfg.svt)
            svt_map = _pad_to(svt_map, clip.height, clip.width)
            features = concat([warped, warp(svt_map, shift)], axis=0)
        out.append(ViewResult(warped, features, mask, mapping, shift))
    return RetargetResult(*out)


def fan_in(p) -> int:
    """Input fan of a weight tensor; 1 for vector-like parameters."""
    if p.ndim == 4:              # conv [Co, Ci, kh, kw]
        return int(np.prod(p.shape[1:]))
    if p.ndim == 2:              # dense [in, out]
        return int(p.shape[0])
    return 1


def lr_multipliers(params, scaling: str = "fan_in") -> list[float]:
    """Per-tensor learning-rate multipliers: ``1/fan_in`` for weight matrices, 1 otherwise."""
    params = list(params)
    if scaling == "none":
        return [1.0] * len(params)
    if scaling != "fan_in":
        raise ValueError(f"unknown lr scaling {scaling!r}")
    return [1.0 / fan_in(p) for p in params]


class Adam:
    def __init__(self, params: Iterable, lr: float = 0.05, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, multipliers: Sequence[float] | None = None):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.multipliers = [1.0] * len(self.params) if multipliers is None else list(multipliers)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v, k in zip(self.params, self.m, self.v, self.multipliers):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data = (p.data - k * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass
class StereoForward:
    retarget: RetargetResult
    a_rl: Tensor
    a_lr: Tensor
    rec_l: Tensor
    rec_r: Tensor


def stereo_forward(clip: StereoClip, cfg: RunConfig, net: RetargetNet, training: bool = False) -> StereoForward:
    """Retarget, attend across views (shared PAM) and reconstruct both source-width frames."""
    r = retarget_clip(clip, cfg, net)
    p = net.params
    feat_l = conv2d(r.left.features, p["feat.weight"], p["feat.bias"])
    feat_r = conv2d(r.right.features, p["feat.weight"], p["feat.bias"])
    a_rl, a_lr = pam_attention(feat_l, feat_r, p)
    fused_l = pam_fuse(feat_l, feat_r, a_rl, p, training=training)
    fused_r = pam_fuse(feat_r, feat_l, a_lr, p, training=training)
    rec_l = reconstruct(fused_l, r.left.features, r.left.mapping, p)
    rec_r = reconstruct(fused_r, r.right.features, r.right.mapping, p)
    return StereoForward(r, a_rl, a_lr, rec_l, rec_r)


def forward_losses(clip: StereoClip, cfg: RunConfig, net: RetargetNet, extractor: FeatureExtractor,
                   training: bool = True) -> tuple[Tensor, LossReport]:
    out = stereo_forward(clip, cfg, net, training)
    r, a_rl, a_lr, rec_l, rec_r = out.retarget, out.a_rl, out.a_lr, out.rec_l, out.rec_r
    c = clip.center
    dtype = net.params.dtype

    src_l = Tensor(clip.left[c].astype(dtype))
    src_r = Tensor(clip.right[c].astype(dtype))
    entire, salient = [], []
    for src, view, rec in ((src_l, r.left, rec_l), (src_r, r.right, rec_r)):
        src_feats = extractor(src)
        for ret in (view.frame, rec):
            e, s, _ = perceptual_loss(src, ret, view.mask, extractor, src_features=src_feats)
            entire.append(e)
            salient.append(s)
    l_entire = add(add(entire[0], entire[1]), add(entire[2], entire[3])) * 0.5
    l_salient = add(add(salient[0], salient[1]), add(salient[2], salient[3])) * 0.5
    l_dwt = add(dwt_loss(src_l, src_r, r.left.frame, r.right.frame), dwt_loss(src_l, src_r, rec_l, rec_r))
    vm = valid_mask(a_rl, a_lr, cfg.model.tau)
    if vm.count:
        l_photo = photometric_loss(r.left.frame, transport(a_rl, r.right.frame), vm, cfg.loss.gamma)
    else:
        log.debug("no cycle-consistent pixels; photometric term skipped")
        l_photo = Tensor(np.zeros((), dtype))
    l_smooth = smoothness_loss(pam_disparity(a_rl), r.left.frame)
    total, report = combine_losses(l_entire, l_salient, l_dwt, l_photo, l_smooth, cfg.loss)
    for name, value in report.to_dict().items():
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss term {name} = {value}")
    return total, report


def train_step(clip: StereoClip, cfg: RunConfig, net: RetargetNet, extractor: FeatureExtractor,
               opt: Adam) -> LossReport:
    """One forward/backward pass and ADAM update; returns the pre-update losses."""
    opt.zero_grad()
    with Tape() as tape:
        total, report = forward_losses(clip, cfg, net, extractor, training=True)
    tape.backward(total)
    for prm in opt.params:
        if not np.all(np.isfinite(prm.grad)):
            raise TrainingError(f"non-finite gradient in {prm.name}")
    opt.step()
    return report


def make_extractor(cfg: RunConfig, dtype=np.float32) -> FeatureExtractor:
    path = cfg.output.vgg_weights or None
    return FeatureExtractor(dtype=dtype, path=path)


def training_clips(cfg: RunConfig) -> list[StereoClip]:
    """Clips for training: the synthetic scene, or the first ``train_fraction`` of a dataset."""
    d = cfg.data
    if d.synthetic:
        scene = SyntheticScene(frames=d.synthetic_frames, height=d.synthetic_height,
                               width=d.synthetic_width, seed=cfg.optim.seed)
        return synthetic_windows(synthetic_clip(scene), d.window)
    layout = DatasetLayout(d.left_dir, d.right_dir, d.disparity_dir)
    dataset = load_dataset(d.root, layout, d.window, d.saliency_dir or None, d.boxes_dir or None)
    n_train = max(1, int(round(len(dataset) * d.train_fraction))) if len(dataset) else 0
    return [clip.crop(d.crop_height, d.crop_width) for clip in dataset[:n_train]]


def train(cfg: RunConfig, clips: Sequence[StereoClip] | None = None, net: RetargetNet | None = None,
          extractor: FeatureExtractor | None = None, progress=None) -> tuple[RetargetNet, list[LossReport]]:
    clips = training_clips(cfg) if clips is None else list(clips)
    if not clips:
        raise TrainingError("no training clips")
    net = RetargetNet(cfg) if net is None else net
    extractor = make_extractor(cfg, net.params.dtype) if extractor is None else extractor
    o = cfg.optim
    opt = Adam(net.params, o.lr, o.beta1, o.beta2, o.eps, lr_multipliers(net.params, o.lr_scaling))
    curve = []
    for it in range(o.iterations):
        report = train_step(clips[it % len(clips)], cfg, net, extractor, opt)
        curve.append(report)
        if progress is not None:
            progress(it, report)
    return net, curve


def write_loss_curve(path, curve: Sequence[LossReport]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("iteration",) + LossReport.FIELDS)
        for i, rep in enumerate(curve):
            writer.writerow([i] + [repr(v) for v in rep.as_row()])
