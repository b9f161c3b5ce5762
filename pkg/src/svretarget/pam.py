"""Parallax attention along epipolar rows, cross-view fusion and attention-derived disparity.

Attention volumes are ``[H, W, W]`` tensors: ``A_rl[y, u, v]`` is the weight
left pixel ``(y, u)`` assigns to right pixel ``(y, v)``; ``A_lr`` swaps the
roles.  Every ``[y, u, :]`` slice is a probability distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamSet
from .tensor import (DimensionError, Tensor, batch_norm, concat, conv2d, matmul, mul, relu,
                     reshape, softmax, sub, transpose)

FUSE_CHANNELS = (128, 128, 64)


@dataclass
class ValidMask:
    flags: np.ndarray

    @property
    def count(self) -> int:
        return int(self.flags.sum())


def init_pam(params: ParamSet, channels: int, prefix: str = "pam",
             fuse_channels: tuple[int, ...] = FUSE_CHANNELS) -> None:
    for role in ("query", "key"):
        params.uniform(f"{prefix}.{role}.weight", (channels, channels, 1, 1), channels)
        params.constant(f"{prefix}.{role}.bias", (channels,))
    ci = 2 * channels
    for i, co in enumerate(fuse_channels):
        params.uniform(f"{prefix}.fuse{i}.weight", (co, ci, 3, 3), ci * 9)
        params.constant(f"{prefix}.fuse{i}.bias", (co,))
        params.constant(f"{prefix}.fuse{i}.bn.gamma", (co,), 1.0)
        params.constant(f"{prefix}.fuse{i}.bn.beta", (co,))
        params.buffer(f"{prefix}.fuse{i}.bn.running_mean", np.zeros(co))
        params.buffer(f"{prefix}.fuse{i}.bn.running_var", np.ones(co))
        ci = co


def pam_attention(left_feat: Tensor, right_feat: Tensor, params: ParamSet,
                  prefix: str = "pam") -> tuple[Tensor, Tensor]:
    """Row-wise attention in both directions from 1x1-projected features."""
    if left_feat.shape != right_feat.shape:
        raise DimensionError(f"left {left_feat.shape} vs right {right_feat.shape}")
    c = left_feat.shape[0]
    q = conv2d(left_feat, params[f"{prefix}.query.weight"], params[f"{prefix}.query.bias"])
    k = conv2d(right_feat, params[f"{prefix}.key.weight"], params[f"{prefix}.key.bias"])
    logits = mul(matmul(transpose(q, (1, 2, 0)), transpose(k, (1, 0, 2))), 1.0 / np.sqrt(c))
    return softmax(logits), softmax(transpose(logits, (0, 2, 1)))


def transport(attention: Tensor, feat: Tensor) -> Tensor:
    """Gather ``[C,H,W']`` features through an ``[H,W,W']`` attention volume -> ``[C,H,W]``."""
    return transpose(matmul(attention, transpose(feat, (1, 2, 0))), (2, 0, 1))


def pam_fuse(left_feat: Tensor, right_feat: Tensor, a_rl: Tensor, params: ParamSet,
             training: bool = False, prefix: str = "pam") -> Tensor:
    x = concat([left_feat, transport(a_rl, right_feat)], axis=0)
    i = 0
    while f"{prefix}.fuse{i}.weight" in params:
        p = f"{prefix}.fuse{i}"
        x = relu(conv2d(x, params[f"{p}.weight"], params[f"{p}.bias"], padding=1))
        x = batch_norm(x, params[f"{p}.bn.gamma"], params[f"{p}.bn.beta"],
                       params.buffers[f"{p}.bn.running_mean"], params.buffers[f"{p}.bn.running_var"],
                       training=training)
        i += 1
    return x


def pam_disparity(a_rl: Tensor) -> Tensor:
    """Expected horizontal offset ``sum_v A[y,u,v] * (u - v)`` as an ``[H,W]`` tensor."""
    h, w, w2 = a_rl.shape
    cols = Tensor(np.arange(w2, dtype=a_rl.dtype).reshape(w2, 1))
    expected = reshape(matmul(a_rl, cols), (h, w))
    return sub(Tensor(np.broadcast_to(np.arange(w, dtype=a_rl.dtype), (h, w)).copy()), expected)


def valid_mask(a_rl, a_lr, tau: float = 1.0) -> ValidMask:
    """Cycle check: left -> best right -> best left must land within ``tau`` pixels."""
    a_rl = a_rl.data if isinstance(a_rl, Tensor) else np.asarray(a_rl)
    a_lr = a_lr.data if isinstance(a_lr, Tensor) else np.asarray(a_lr)
    if a_rl.shape[0] != a_lr.shape[0] or a_rl.shape[2] != a_lr.shape[1]:
        raise DimensionError("attention volumes are not mutually transposed")
    fwd = a_rl.argmax(axis=-1)
    back = np.take_along_axis(a_lr.argmax(axis=-1), fwd, axis=1)
    u = np.arange(a_rl.shape[1])
    return ValidMask(np.abs(back - u) <= tau)
