"""Finite-difference checks for every differentiable op, block and loss.

Each case builds a float64 problem for a given shape index, reduces the
output to a scalar with a fixed random projection and compares the tape
gradient against central differences.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .losses import (FeatureExtractor, combine_losses, dwt2, dwt_loss, idwt2, mse, perceptual_loss,
                     photometric_loss, resize_to, smoothness_loss, ssim_map)
from .pam import ValidMask, init_pam, pam_attention, pam_disparity, pam_fuse, transport
from .params import ParamSet
from .reconstruction import init_reconstruction, reconstruct
from .shiftwarp import build_mapping, inverse_warp, shift_map, warp
from .svt import SVTConfig, encoder_forward, init_svt, stereo_patch_embed, svt_feature_map
from .tensor import Tensor

TOLERANCE = 1e-4
STEP = 1e-4
MAX_SKIP_FRACTION = 0.25
SHAPES_PER_CASE = 3


@dataclass
class CheckResult:
    name: str
    shape: int
    error: float
    seconds: float
    probed: int = 0
    skipped: int = 0
    tol: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tol and self.skipped <= MAX_SKIP_FRACTION * max(self.probed, 1))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        kinks = f" kinks={self.skipped}/{self.probed}" if self.skipped else ""
        return f"{status} {self.name}[{self.shape}] rel_err={self.error:.2e}{kinks} ({self.seconds:.2f}s)"


@dataclass
class Case:
    name: str
    build: Callable      # (rng, k) -> (fn, inputs)
    max_checks: int | None = 24


def _project(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    r = rng.uniform(0.5, 1.5, size=out.shape) * rng.choice([-1.0, 1.0], size=out.shape)
    return lambda y: T.tsum(T.mul(y, r))


def _scalarize(f, inputs, rng):
    """Wrap a tensor-valued ``f`` into a scalar objective with a fixed random weighting."""
    probe = f(*[Tensor(np.asarray(a, dtype=np.float64)) for a in inputs])
    proj = _project(probe, rng)
    return (lambda *xs: proj(f(*xs))), inputs


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _with(params: ParamSet, **overrides: Tensor) -> ParamSet:
    """Shallow copy of ``params`` with some entries replaced (buffers copied)."""
    out = copy.copy(params)
    out.params = dict(params.params)
    out.buffers = {k: v.copy() for k, v in params.buffers.items()}
    for key, value in overrides.items():
        out.params[key.replace("__", ".")] = value
    return out


def _key(name: str) -> str:
    return name.replace(".", "__")


# ---------------------------------------------------------------- op cases

BINARY_SHAPES = (((3, 4), (3, 4)), ((2, 3, 4), (4,)), ((5, 1, 3), (1, 2, 3)))


def _binary(op, positive_rhs=False):
    def build(rng, k):
        sa, sb = BINARY_SHAPES[k]
        a = rng.normal(size=sa)
        b = rng.uniform(0.5, 2.0, size=sb) if positive_rhs else rng.normal(size=sb)
        return _scalarize(op, [a, b], rng)
    return build


def _unary(op, sampler=None):
    shapes = ((5,), (3, 4), (2, 3, 4))

    def build(rng, k):
        x = (sampler or (lambda r, s: r.normal(size=s)))(rng, shapes[k])
        return _scalarize(op, [x], rng)
    return build


def _reduction(op):
    cases = (((3, 4), None, False), ((2, 3, 4), 1, False), ((2, 3, 4), (0, 2), True))

    def build(rng, k):
        shape, axis, keep = cases[k]
        return _scalarize(lambda x: op(x, axis=axis, keepdims=keep), [rng.normal(size=shape)], rng)
    return build


def _reshape(rng, k):
    shape, new = (((3, 4), (12,)), ((2, 3, 4), (6, 4)), ((2, 6), (3, 2, 2)))[k]
    return _scalarize(lambda x: T.reshape(x, new), [rng.normal(size=shape)], rng)


def _transpose(rng, k):
    shape, axes = (((3, 4), None), ((2, 3, 4), (2, 0, 1)), ((2, 3, 4, 2), (1, 3, 0, 2)))[k]
    return _scalarize(lambda x: T.transpose(x, axes), [rng.normal(size=shape)], rng)


def _getitem(rng, k):
    shape, key = (((5, 4), (slice(1, 4), slice(None, None, 2))),
                  ((3, 6), (Ellipsis, np.array([0, 2, 2, 5]))),
                  ((2, 4, 3), (1, np.array([3, 0, 3]))))[k]
    return _scalarize(lambda x: T.getitem(x, key), [rng.normal(size=shape)], rng)


def _concat(rng, k):
    shapes, axis = ((((2, 3), (4, 3)), 0), (((2, 3), (2, 1), (2, 2)), 1), (((2, 2, 3), (2, 2, 3)), -1))[k]
    xs = [rng.normal(size=s) for s in shapes]
    return _scalarize(lambda *ts: T.concat(list(ts), axis=axis), xs, rng)


def _stack(rng, k):
    shape, n, axis = (((3,), 2, 0), ((2, 3), 3, 1), ((2, 2, 2), 2, -1))[k]
    xs = [rng.normal(size=shape) for _ in range(n)]
    return _scalarize(lambda *ts: T.stack(list(ts), axis=axis), xs, rng)


def _matmul(rng, k):
    sa, sb = (((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((2, 3, 4), (2, 4, 3)))[k]
    return _scalarize(T.matmul, [rng.normal(size=sa), rng.normal(size=sb)], rng)


def _softmax(rng, k):
    shape, axis = (((5,), -1), ((3, 4), 0), ((2, 3, 4), -1))[k]
    return _scalarize(lambda x: T.softmax(x, axis=axis), [rng.normal(size=shape)], rng)


def _layer_norm(rng, k):
    shape = ((3, 4), (2, 3, 5), (2, 2, 2, 6))[k]
    d = shape[-1]
    return _scalarize(T.layer_norm, [rng.normal(size=shape), rng.normal(size=d), rng.normal(size=d)], rng)


def _batch_norm(rng, k):
    shape = ((3, 4, 5), (2, 3, 3, 4), (4, 2, 3))[k]
    c = shape[-3]

    def f(x, g, b):
        return T.batch_norm(x, g, b, np.zeros(c), np.ones(c), training=True)
    return _scalarize(f, [rng.normal(size=shape), rng.normal(size=c), rng.normal(size=c)], rng)


def _batch_norm_eval(rng, k):
    shape = ((3, 4, 5), (2, 3, 3, 4), (4, 2, 3))[k]
    c = shape[-3]
    mu, var = rng.normal(size=c), rng.uniform(0.5, 2.0, size=c)

    def f(x, g, b):
        return T.batch_norm(x, g, b, mu, var, training=False)
    return _scalarize(f, [rng.normal(size=shape), rng.normal(size=c), rng.normal(size=c)], rng)


def _conv2d(rng, k):
    xs, ws, stride, pad = (((2, 5, 6), (3, 2, 3, 3), 1, 0),
                           ((2, 3, 7, 6), (4, 3, 3, 2), 2, 1),
                           ((1, 6, 5), (2, 1, 5, 1), 1, 2))[k]
    co = ws[0]
    return _scalarize(lambda x, w, b: T.conv2d(x, w, b, stride=stride, padding=pad),
                      [rng.normal(size=xs), rng.normal(size=ws), rng.normal(size=co)], rng)


def _conv_column(rng, k):
    xs, ks = (((1, 5, 4), (1, 1, 5)), ((2, 6, 3), (3, 2, 2)), ((3, 4, 5), (2, 3, 4)))[k]
    return _scalarize(T.conv_column, [rng.normal(size=xs), rng.normal(size=ks)], rng)


def _max_pool(rng, k):
    shape, size = (((2, 4, 4), 2), ((1, 6, 9), 3), ((2, 2, 5, 4), 2))[k]
    # distinct values keep every window's argmax away from ties
    x = rng.permutation(np.prod(shape)).reshape(shape) * 0.1 + rng.uniform(0, 0.01, size=shape)
    return _scalarize(lambda t: T.max_pool2d(t, size), [x], rng)


def _sample_columns(rng, k):
    shape, n = (((2, 3, 5), 7), ((4, 6), 3), ((1, 2, 8), 12))[k]
    pos = rng.uniform(-1.0, shape[-1], size=n)
    return _scalarize(lambda x: T.sample_columns(x, pos), [rng.normal(size=shape)], rng)


def _bilinear(rng, k):
    shape = ((2, 4, 5), (3, 3, 3), (1, 6, 2))[k]
    x, y = rng.uniform(0, shape[2] - 1), rng.uniform(0, shape[1] - 1)
    return _scalarize(lambda img: T.bilinear_sample(img, x, y), [rng.normal(size=shape)], rng)


# -------------------------------------------------------------- block cases


def _mapping(rng, w, ratio):
    mask = (rng.uniform(size=(4, w)) > 0.6).astype(float)
    return build_mapping(mask.mean(axis=0) * 1.9 + mask.mean(), w, max(1, int(w * ratio)))


def _warp(rng, k):
    c, h, w, ratio = ((3, 4, 8, 0.5), (2, 3, 10, 0.7), (1, 5, 6, 1.5))[k]
    shift = shift_map(_mapping(rng, w, ratio))
    return _scalarize(lambda x: warp(x, shift), [rng.normal(size=(c, h, w))], rng)


def _inverse_warp(rng, k):
    c, h, w, ratio = ((3, 4, 8, 0.5), (2, 3, 10, 0.7), (1, 5, 6, 1.5))[k]
    m = _mapping(rng, w, ratio)
    return _scalarize(lambda x: inverse_warp(x, m), [rng.normal(size=(c, h, m.target_width))], rng)


def _resize(rng, k):
    shape, out = (((3, 4, 6), (8, 3)), ((1, 5, 5), (5, 9)), ((2, 3, 7), (6, 7)))[k]
    return _scalarize(lambda x: resize_to(x, *out), [rng.normal(size=shape)], rng)


SVT_CASES = (
    (SVTConfig(t=1, h=2, w=2, d=6, layers=1, heads=3, mlp_dim=8, pos_grid=(2, 2)), (2, 4, 4)),
    (SVTConfig(t=2, h=2, w=3, d=6, layers=1, heads=3, mlp_dim=6, pos_grid=(2, 3)), (4, 4, 6)),
    (SVTConfig(t=1, h=3, w=2, d=4, layers=2, heads=2, mlp_dim=5, pos_grid=(1, 2)), (2, 6, 6)),
)


def _svt_setup(rng, k):
    cfg, (t, h, w) = SVT_CASES[k]
    params = ParamSet(seed=int(rng.integers(1 << 30)), dtype=np.float64)
    init_svt(params, cfg)
    for name, p in params.params.items():      # non-trivial LN offsets and biases
        if p.data.ndim == 1:
            p.data = p.data + rng.normal(scale=0.1, size=p.shape)
    frames = rng.uniform(size=(t, 3, h, w))
    disparity = rng.uniform(0, 3, size=(h, w))
    return cfg, params, frames, disparity


def _svt_layer(rng, k):
    """One encoder pass w.r.t. the tokens, the disparity stream and one head's query weights."""
    cfg, params, frames, disparity = _svt_setup(rng, k)
    grid = stereo_patch_embed(frames, disparity, cfg, params)
    wq = "svt.layer0.head0.wq"

    def f(tokens, disp, w):
        from .svt import TokenGrid
        return encoder_forward(TokenGrid(tokens, disp), _with(params, **{_key(wq): w}), cfg).tokens
    return _scalarize(f, [grid.tokens.data, grid.disparity.data, params[wq].data], rng)


def _svt_embed(rng, k):
    """Patch embedding and de-patching w.r.t. the projection weights and positional table."""
    cfg, params, frames, disparity = _svt_setup(rng, k)
    names = ("svt.embed.weight", "svt.disp_embed.weight", "svt.pos", "svt.depatch.weight")

    def f(*ws):
        p = _with(params, **{_key(n): w for n, w in zip(names, ws)})
        return svt_feature_map(encoder_forward(stereo_patch_embed(frames, disparity, cfg, p), p, cfg), p, cfg)
    return _scalarize(f, [params[n].data for n in names], rng)


PAM_SHAPES = ((4, 3, 5), (2, 2, 4), (3, 4, 3))


def _pam_setup(rng, k, fuse=(6, 5, 4)):
    c, h, w = PAM_SHAPES[k]
    params = ParamSet(seed=int(rng.integers(1 << 30)), dtype=np.float64)
    init_pam(params, c, fuse_channels=fuse)
    for p in params:
        if p.data.ndim == 1:
            p.data = p.data + rng.normal(scale=0.1, size=p.shape)
    return params, rng.normal(size=(c, h, w)), rng.normal(size=(c, h, w))


def _pam_attention(rng, k):
    params, left, right = _pam_setup(rng, k)

    def f(l, r, wq):
        a_rl, a_lr = pam_attention(l, r, _with(params, pam__query__weight=wq))
        return T.concat([a_rl, T.transpose(a_lr, (0, 2, 1))], axis=0)
    return _scalarize(f, [left, right, params["pam.query.weight"].data], rng)


def _pam_full(rng, k):
    """Attention, transport, fusion (training-mode BN) and attention-derived disparity together."""
    params, left, right = _pam_setup(rng, k)

    def f(l, r, wk, w0):
        p = _with(params, pam__key__weight=wk, pam__fuse0__weight=w0)
        a_rl, _ = pam_attention(l, r, p)
        fused = pam_fuse(l, r, a_rl, p, training=True)
        disp = pam_disparity(a_rl)
        return T.concat([T.reshape(fused, (-1,)), T.reshape(disp, (-1,)),
                         T.reshape(transport(a_rl, r), (-1,))], axis=0)
    return _scalarize(f, [left, right, params["pam.key.weight"].data, params["pam.fuse0.weight"].data], rng)


RECON_SHAPES = ((3, 6, 0.5), (2, 5, 0.8), (4, 4, 1.5))


def _reconstruct(rng, k):
    h, w, ratio = RECON_SHAPES[k]
    mapping = _mapping(rng, w, ratio)
    wt = mapping.target_width
    params = ParamSet(seed=int(rng.integers(1 << 30)), dtype=np.float64)
    init_reconstruction(params, 6)
    for p in params:
        if p.data.ndim == 1:
            p.data = p.data + rng.normal(scale=0.1, size=p.shape)
    names = ("recon.conv0.weight", "recon.conv4.weight")

    def f(pam_out, warped, *ws):
        return reconstruct(pam_out, warped, mapping, _with(params, **{_key(n): v for n, v in zip(names, ws)}))
    inputs = [rng.normal(size=(64, h, wt)), rng.normal(size=(6, h, wt))] + [params[n].data for n in names]
    return _scalarize(f, inputs, rng)


# -------------------------------------------------------------- loss cases

_EXTRACTOR: dict = {}


def _extractor() -> FeatureExtractor:
    if "x" not in _EXTRACTOR:
        _EXTRACTOR["x"] = FeatureExtractor(dtype=np.float64)
    return _EXTRACTOR["x"]


def _mse(rng, k):
    shape = ((4,), (3, 5), (2, 3, 4))[k]
    return mse, [rng.normal(size=shape), rng.normal(size=shape)]


def _perceptual(rng, k):
    h, w, wr = ((8, 8, 6), (6, 10, 5), (9, 7, 10))[k]
    src = rng.uniform(size=(3, h, w))
    mask = np.zeros((h, w))
    mask[1:4, 2:5] = 1.0
    ext = _extractor()
    return (lambda s, r: perceptual_loss(s, r, mask, ext)[2]), [src, rng.uniform(size=(3, h, wr))]


def _dwt_bands(rng, k):
    shape = ((1, 4, 4), (3, 6, 8), (2, 5, 7))[k]
    return _scalarize(lambda x: T.concat([T.reshape(b, (-1,)) for b in dwt2(x)], axis=0),
                      [rng.normal(size=shape)], rng)


def _idwt(rng, k):
    shape = ((1, 2, 2), (3, 3, 4), (2, 2, 3))[k]
    return _scalarize(lambda a, b, c, d: idwt2((a, b, c, d)), [rng.normal(size=shape) for _ in range(4)], rng)


def _dwt_loss(rng, k):
    c, h, w, wr = ((3, 4, 6, 3), (1, 6, 6, 6), (2, 5, 7, 4))[k]
    src_l, src_r = rng.uniform(size=(c, h, w)), rng.uniform(size=(c, h, w))
    return ((lambda rl, rr: dwt_loss(src_l, src_r, rl, rr)),
            [rng.uniform(size=(c, h, wr)), rng.uniform(size=(c, h, wr))])


def _ssim(rng, k):
    shape = ((1, 4, 4), (3, 5, 6), (2, 3, 7))[k]
    return _scalarize(ssim_map, [rng.uniform(size=shape), rng.uniform(size=shape)], rng)


def _photometric(rng, k):
    shape = ((3, 4, 5), (1, 6, 4), (2, 3, 3))[k]
    mask = ValidMask(rng.uniform(size=shape[1:]) > 0.3)
    mask.flags[0, 0] = True
    left = rng.uniform(size=shape)
    # keep |left - right| away from the kink of the absolute value
    right = left + _away_from_zero(rng, shape, 0.02) * 0.3
    return (lambda l, r: photometric_loss(l, r, mask, 0.85)), [left, right]


def _smoothness(rng, k):
    h, w = ((4, 5), (1, 6), (6, 1))[k]
    return (lambda d, img: smoothness_loss(d, img)), [rng.normal(size=(h, w)) * 3,
                                                      rng.uniform(size=(3, h, w))]


def _combine(rng, k):
    from .losses import LossWeights
    w = LossWeights(alpha_reg=(0.05, 0.0, 0.3)[k])
    xs = [rng.uniform(0.1, 2.0, size=()) for _ in range(5)]
    return (lambda *ts: combine_losses(*ts, weights=w)[0]), xs


CASES: tuple[Case, ...] = (
    Case("add", _binary(T.add)),
    Case("sub", _binary(T.sub)),
    Case("mul", _binary(T.mul)),
    Case("div", _binary(T.div, positive_rhs=True)),
    Case("relu", _unary(T.relu, _away_from_zero)),
    Case("abs", _unary(T.tabs, _away_from_zero)),
    Case("exp", _unary(T.exp)),
    Case("sum", _reduction(T.tsum)),
    Case("mean", _reduction(T.mean)),
    Case("reshape", _reshape),
    Case("transpose", _transpose),
    Case("getitem", _getitem),
    Case("concat", _concat),
    Case("stack", _stack),
    Case("matmul", _matmul),
    Case("softmax", _softmax),
    Case("layer_norm", _layer_norm),
    Case("batch_norm", _batch_norm),
    Case("batch_norm_eval", _batch_norm_eval),
    Case("conv2d", _conv2d),
    Case("conv_column", _conv_column),
    Case("max_pool2d", _max_pool),
    Case("sample_columns", _sample_columns),
    Case("bilinear_sample", _bilinear),
    Case("warp", _warp),
    Case("inverse_warp", _inverse_warp),
    Case("resize", _resize),
    Case("svt_layer", _svt_layer, 16),
    Case("svt_embed", _svt_embed, 12),
    Case("pam_attention", _pam_attention),
    Case("pam_full", _pam_full, 16),
    Case("reconstruct", _reconstruct, 8),
    Case("mse", _mse),
    Case("perceptual_loss", _perceptual, 12),
    Case("dwt2", _dwt_bands),
    Case("idwt2", _idwt),
    Case("dwt_loss", _dwt_loss),
    Case("ssim", _ssim),
    Case("photometric_loss", _photometric),
    Case("smoothness_loss", _smoothness),
    Case("combine_losses", _combine),
)


def run_case(case: Case, k: int, seed: int = 0, tol: float = TOLERANCE) -> CheckResult:
    rng = np.random.default_rng([seed, k, sum(map(ord, case.name))])
    fn, inputs = case.build(rng, k)
    start = time.perf_counter()
    res = T.gradcheck_report(fn, inputs, eps=STEP, max_checks=case.max_checks, seed=seed)
    return CheckResult(case.name, k, res.error, time.perf_counter() - start, res.probed, res.skipped, tol)


def run_suite(seed: int = 0, names=None, tol: float = TOLERANCE, report=None) -> list[CheckResult]:
    results = []
    for case in CASES:
        if names is not None and case.name not in names:
            continue
        for k in range(SHAPES_PER_CASE):
            res = run_case(case, k, seed, tol)
            results.append(res)
            if report is not None:
                report(res)
    return results
