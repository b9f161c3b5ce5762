"""Stereo video transformer with attention factorized over space, time and disparity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamSet
from .tensor import (ContractError, DimensionError, Tensor, add, concat, layer_norm, matmul,
                     mul, relu, reshape, sample_columns, softmax, transpose)

AXES = ("spatial", "temporal", "disparity")


@dataclass
class SVTConfig:
    t: int = 2
    h: int = 16
    w: int = 16
    d: int = 96
    layers: int = 2
    heads: int = 3
    mlp_dim: int = 192
    in_channels: int = 3
    out_channels: int = 3
    pos_grid: tuple[int, int] = (6, 10)

    def __post_init__(self):
        self.pos_grid = tuple(int(v) for v in self.pos_grid)
        if self.d % self.heads:
            raise ContractError(f"token dimension {self.d} not divisible by {self.heads} heads")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    def head_axes(self) -> list[str]:
        return [AXES[i % 3] for i in range(self.heads)]

    def grid(self, frames: int, height: int, width: int) -> tuple[int, int, int]:
        if frames < self.t or height < self.h or width < self.w:
            raise DimensionError(f"clip {frames}x{height}x{width} smaller than patch {self.t}x{self.h}x{self.w}")
        return frames // self.t, height // self.h, width // self.w


@dataclass
class TokenGrid:
    tokens: Tensor      # [n_t, n_h, n_w, d]
    disparity: Tensor   # [n_h, n_w, d]

    @property
    def counts(self) -> tuple[int, int, int]:
        return self.tokens.shape[:3]


@dataclass
class AttentionTrace:
    """Per-head attention weights and pre-projection outputs of one layer."""

    weights: list[np.ndarray] = field(default_factory=list)
    outputs: list[Tensor] = field(default_factory=list)


def init_svt(params: ParamSet, cfg: SVTConfig, prefix: str = "svt") -> None:
    d, dk = cfg.d, cfg.head_dim
    patch = cfg.t * cfg.h * cfg.w * cfg.in_channels
    params.uniform(f"{prefix}.embed.weight", (patch, d), patch)
    params.constant(f"{prefix}.embed.bias", (d,))
    params.uniform(f"{prefix}.disp_embed.weight", (cfg.h * cfg.w, d), cfg.h * cfg.w)
    params.constant(f"{prefix}.disp_embed.bias", (d,))
    params.uniform(f"{prefix}.pos", cfg.pos_grid + (d,), d)
    for l in range(cfg.layers):
        lp = f"{prefix}.layer{l}"
        params.constant(f"{lp}.ln1.gamma", (d,), 1.0)
        params.constant(f"{lp}.ln1.beta", (d,))
        for i in range(cfg.heads):
            for m in ("wq", "wk", "wv"):
                params.uniform(f"{lp}.head{i}.{m}", (d, dk), d)
        params.uniform(f"{lp}.proj.weight", (d, d), d)
        params.constant(f"{lp}.proj.bias", (d,))
        params.constant(f"{lp}.ln2.gamma", (d,), 1.0)
        params.constant(f"{lp}.ln2.beta", (d,))
        params.uniform(f"{lp}.mlp.fc1.weight", (d, cfg.mlp_dim), d)
        params.constant(f"{lp}.mlp.fc1.bias", (cfg.mlp_dim,))
        params.uniform(f"{lp}.mlp.fc2.weight", (cfg.mlp_dim, d), cfg.mlp_dim)
        params.constant(f"{lp}.mlp.fc2.bias", (d,))
    out = cfg.h * cfg.w * cfg.out_channels
    params.uniform(f"{prefix}.depatch.weight", (d, out), d)
    params.constant(f"{prefix}.depatch.bias", (out,))


def _resize_axis_last(x: Tensor, n: int) -> Tensor:
    m = x.shape[-1]
    if m == n:
        return x
    return sample_columns(x, (np.arange(n) + 0.5) * (m / n) - 0.5)


def positional_embedding(pos: Tensor, n_h: int, n_w: int) -> Tensor:
    """Stored ``[P_h, P_w, d]`` table linearly resampled to the current token grid."""
    if pos.shape[:2] == (n_h, n_w):
        return pos
    x = _resize_axis_last(transpose(pos, (2, 0, 1)), n_w)      # d, P_h, n_w
    x = _resize_axis_last(transpose(x, (0, 2, 1)), n_h)        # d, n_w, n_h
    return transpose(x, (2, 1, 0))


def patchify(frames: np.ndarray, cfg: SVTConfig) -> np.ndarray:
    """``[T,C,H,W]`` -> ``[n_t, n_h, n_w, t*C*h*w]`` non-overlapping tubes (remainders dropped)."""
    T, C, H, W = frames.shape
    nt, nh, nw = cfg.grid(T, H, W)
    x = frames[:nt * cfg.t, :, :nh * cfg.h, :nw * cfg.w]
    x = x.reshape(nt, cfg.t, C, nh, cfg.h, nw, cfg.w).transpose(0, 3, 5, 1, 2, 4, 6)
    return np.ascontiguousarray(x.reshape(nt, nh, nw, -1))


def patchify_disparity(disparity: np.ndarray, cfg: SVTConfig) -> np.ndarray:
    H, W = disparity.shape
    nh, nw = H // cfg.h, W // cfg.w
    x = disparity[:nh * cfg.h, :nw * cfg.w].reshape(nh, cfg.h, nw, cfg.w).transpose(0, 2, 1, 3)
    # disparity as a fraction of frame width keeps the projection scale-free
    return np.ascontiguousarray(x.reshape(nh, nw, -1)) / W


def stereo_patch_embed(frames: np.ndarray, disparity: np.ndarray, cfg: SVTConfig,
                       params: ParamSet, prefix: str = "svt") -> TokenGrid:
    """Tokenize one view of a clip; the middle frame's disparity tokens are added before encoding."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[1] != cfg.in_channels:
        raise DimensionError(f"expected [T,{cfg.in_channels},H,W] frames, got {frames.shape}")
    if disparity.shape != frames.shape[2:]:
        raise DimensionError("disparity extents differ from frame extents")
    nt, nh, nw = cfg.grid(*frames.shape[:1], *frames.shape[2:])
    dtype = params.dtype
    tokens = add(matmul(Tensor(patchify(frames, cfg).astype(dtype)), params[f"{prefix}.embed.weight"]),
                 params[f"{prefix}.embed.bias"])
    dtok = add(matmul(Tensor(patchify_disparity(disparity, cfg).astype(dtype)),
                      params[f"{prefix}.disp_embed.weight"]),
               params[f"{prefix}.disp_embed.bias"])
    pos = positional_embedding(params[f"{prefix}.pos"], nh, nw)
    dstream = add(dtok, pos)
    return TokenGrid(add(tokens, dstream), dstream)


def _head(x: Tensor, disp: Tensor, axis: str, wq: Tensor, wk: Tensor, wv: Tensor,
          trace: AttentionTrace | None) -> Tensor:
    nt, nh, nw, _ = x.shape
    s = nh * nw
    dk = wq.shape[1]
    scale = 1.0 / np.sqrt(dk)
    q = reshape(matmul(x, wq), (nt, s, dk))
    if axis == "spatial":
        k = reshape(matmul(x, wk), (nt, s, dk))
        v = reshape(matmul(x, wv), (nt, s, dk))
        a = softmax(mul(matmul(q, transpose(k, (0, 2, 1))), scale))
        o = matmul(a, v)
    elif axis == "temporal":
        q = transpose(q, (1, 0, 2))
        k = transpose(reshape(matmul(x, wk), (nt, s, dk)), (1, 0, 2))
        v = transpose(reshape(matmul(x, wv), (nt, s, dk)), (1, 0, 2))
        a = softmax(mul(matmul(q, transpose(k, (0, 2, 1))), scale))
        o = transpose(matmul(a, v), (1, 0, 2))
    elif axis == "disparity":
        k = reshape(matmul(disp, wk), (s, dk))
        v = reshape(matmul(disp, wv), (s, dk))
        a = softmax(mul(matmul(q, transpose(k)), scale))
        o = matmul(a, v)
    else:
        raise ContractError(f"unknown attention axis {axis!r}")
    o = reshape(o, (nt, nh, nw, dk))
    if trace is not None:
        trace.weights.append(a.data)
        trace.outputs.append(o)
    return o


def factorized_attention(x: Tensor, disp: Tensor, params: ParamSet, layer_prefix: str,
                         head_axes: list[str], trace: AttentionTrace | None = None) -> Tensor:
    """Multi-head attention where each head attends along one axis only.

    Spatial heads see the tokens sharing the query's time index, temporal
    heads the tokens sharing its spatial index, disparity heads the
    disparity-derived token set.
    """
    n_heads = sum(1 for name in params.params if name.startswith(f"{layer_prefix}.head") and name.endswith(".wq"))
    if len(head_axes) != n_heads or any(a not in AXES for a in head_axes):
        raise ContractError(f"head assignment {head_axes} does not cover {n_heads} heads")
    outs = [_head(x, disp, axis, params[f"{layer_prefix}.head{i}.wq"], params[f"{layer_prefix}.head{i}.wk"],
                  params[f"{layer_prefix}.head{i}.wv"], trace)
            for i, axis in enumerate(head_axes)]
    cat = concat(outs, axis=-1) if len(outs) > 1 else outs[0]
    return add(matmul(cat, params[f"{layer_prefix}.proj.weight"]), params[f"{layer_prefix}.proj.bias"])


def encoder_forward(grid: TokenGrid, params: ParamSet, cfg: SVTConfig, prefix: str = "svt",
                    traces: list[AttentionTrace] | None = None) -> TokenGrid:
    x = grid.tokens
    axes = cfg.head_axes()
    for l in range(cfg.layers):
        lp = f"{prefix}.layer{l}"
        g1, b1 = params[f"{lp}.ln1.gamma"], params[f"{lp}.ln1.beta"]
        trace = AttentionTrace() if traces is not None else None
        x = add(x, factorized_attention(layer_norm(x, g1, b1), layer_norm(grid.disparity, g1, b1),
                                        params, lp, axes, trace))
        if traces is not None:
            traces.append(trace)
        hdn = relu(add(matmul(layer_norm(x, params[f"{lp}.ln2.gamma"], params[f"{lp}.ln2.beta"]),
                              params[f"{lp}.mlp.fc1.weight"]), params[f"{lp}.mlp.fc1.bias"]))
        x = add(x, add(matmul(hdn, params[f"{lp}.mlp.fc2.weight"]), params[f"{lp}.mlp.fc2.bias"]))
    return TokenGrid(x, grid.disparity)


def svt_feature_map(grid: TokenGrid, params: ParamSet, cfg: SVTConfig, prefix: str = "svt") -> Tensor:
    """Middle-time tokens de-patched into a ``[C_out, n_h*h, n_w*w]`` map."""
    nt, nh, nw = grid.counts
    mid = grid.tokens[nt // 2]
    x = add(matmul(mid, params[f"{prefix}.depatch.weight"]), params[f"{prefix}.depatch.bias"])
    x = reshape(x, (nh, nw, cfg.out_channels, cfg.h, cfg.w))
    x = transpose(x, (2, 0, 3, 1, 4))
    return reshape(x, (cfg.out_channels, nh * cfg.h, nw * cfg.w))


def svt_forward(frames: np.ndarray, disparity: np.ndarray, params: ParamSet, cfg: SVTConfig,
                prefix: str = "svt") -> Tensor:
    grid = stereo_patch_embed(frames, disparity, cfg, params, prefix)
    return svt_feature_map(encoder_forward(grid, params, cfg, prefix), params, cfg, prefix)
