"""Regenerates the source-width frame from the fused retargeted representation."""

from __future__ import annotations

from .params import ParamSet
from .shiftwarp import ColumnMapping, inverse_warp
from .tensor import DimensionError, Tensor, add, conv2d, relu

RECON_CHANNELS = (64, 128, 512, 128, 3)
RECON_KERNELS = (5, 3, 3, 3, 3)


def init_reconstruction(params: ParamSet, warped_channels: int, pam_channels: int = 64,
                        prefix: str = "recon", channels=RECON_CHANNELS, kernels=RECON_KERNELS) -> None:
    params.uniform(f"{prefix}.proj.weight", (pam_channels, warped_channels, 1, 1), warped_channels)
    params.constant(f"{prefix}.proj.bias", (pam_channels,))
    ci = pam_channels
    for i, (co, k) in enumerate(zip(channels, kernels)):
        params.uniform(f"{prefix}.conv{i}.weight", (co, ci, k, k), ci * k * k)
        params.constant(f"{prefix}.conv{i}.bias", (co,))
        ci = co


def reconstruct(pam_out: Tensor, warped: Tensor, mapping: ColumnMapping, params: ParamSet,
                prefix: str = "recon") -> Tensor:
    """``pam_out [64,H,W']`` + projected ``warped [C,H,W']`` -> inverse warp -> conv stack -> ``[3,H,W]``."""
    if pam_out.shape[1:] != warped.shape[1:]:
        raise DimensionError(f"PAM output {pam_out.shape} and warped stream {warped.shape} disagree")
    x = add(pam_out, conv2d(warped, params[f"{prefix}.proj.weight"], params[f"{prefix}.proj.bias"]))
    x = inverse_warp(x, mapping)
    n = sum(1 for name in params.params if name.startswith(f"{prefix}.conv") and name.endswith(".weight"))
    for i in range(n):
        w = params[f"{prefix}.conv{i}.weight"]
        x = conv2d(x, w, params[f"{prefix}.conv{i}.bias"], padding=w.shape[-1] // 2)
        if i < n - 1:
            x = relu(x)
    return x
