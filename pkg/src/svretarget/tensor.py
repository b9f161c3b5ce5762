"""Dense tensors with define-by-run reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded in order;
``backward`` replays the records in reverse and deposits gradients on every
leaf that has ``requires_grad`` set.  Without an active tape nothing is
recorded, which is how inference runs.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MAX_RANK = 5


class DimensionError(ValueError):
    """Operand extents are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


_local = threading.local()


def current_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds {MAX_RANK}")
        if 0 in arr.shape:
            raise DimensionError(f"zero extent in shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A named leaf tensor that takes part in optimisation."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; records are appended as operations run.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Backward]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, result: Tensor) -> None:
        if result.data.size != 1:
            raise ContractError(f"backward needs a scalar result, got shape {result.shape}")
        produced = {id(out) for out, _, _ in self.records}
        if id(result) not in produced:
            raise ContractError("result was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(result): np.ones_like(result.data)}
        leaves: dict[int, Tensor] = {}
        for out, parents, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) not in produced:
                    leaves[id(p)] = p
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            g = g.astype(leaf.data.dtype, copy=False)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        # leaves that were on the tape but received nothing still get a zero gradient
        for _, parents, _ in self.records:
            for p in parents:
                if p.requires_grad and id(p) not in produced and p.grad is None:
                    p.grad = np.zeros_like(p.data)


def backward(result: Tensor, tape: Tape) -> None:
    tape.backward(result)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Iterable[Tensor], fn: Backward) -> Tensor:
    parents = tuple(parents)
    tape = current_tape()
    track = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.records.append((out, parents, fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _result(np.where(pos, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * pos,))


def tabs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: (g * sign,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


# ------------------------------------------------------------------ reductions


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out), (x,), fn)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis, keepdims), 1.0 / count)


# ------------------------------------------------------------------- structure


def reshape(x: Tensor, shape) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, key) -> Tensor:
    advanced = any(isinstance(k, (np.ndarray, list)) for k in (key if isinstance(key, tuple) else (key,)))

    def fn(g):
        out = np.zeros_like(x.data)
        if advanced:
            np.add.at(out, key, g)
        else:
            out[key] += g
        return (out,)

    return _result(np.array(x.data[key]), (x,), fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else len(shape) + 1 + axis, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands need rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as err:
        raise DimensionError(str(err)) from None

    def fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax input contains non-finite values")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _result(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def normalize(x: Tensor, axes, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance over ``axes`` (biased variance)."""
    axes = (axes,) if isinstance(axes, int) else tuple(axes)
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    n = int(np.prod([x.shape[a] for a in axes]))

    def fn(g):
        gs = g.sum(axis=axes, keepdims=True)
        gx = (g * xhat).sum(axis=axes, keepdims=True)
        return (inv / n * (n * g - gs - xhat * gx),)

    return _result(xhat.astype(x.dtype, copy=False), (x,), fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return add(mul(normalize(x, -1, eps), gamma), beta)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel BN for ``[C,H,W]`` or ``[N,C,H,W]`` input.

    In training mode batch statistics are used and the running buffers are
    updated in place; otherwise the stored statistics are applied.
    """
    caxis = x.ndim - 3
    bshape = (-1, 1, 1)
    axes = tuple(a for a in range(x.ndim) if a != caxis)
    if training:
        if running_mean is not None:
            n = int(np.prod([x.shape[a] for a in axes]))
            bm = x.data.mean(axis=axes)
            bv = x.data.var(axis=axes) * (n / max(n - 1, 1))
            running_mean *= 1 - momentum
            running_mean += momentum * bm
            running_var *= 1 - momentum
            running_var += momentum * bv
        xhat = normalize(x, axes, eps)
    else:
        scale = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(bshape)
        xhat = mul(sub(x, running_mean.astype(x.dtype).reshape(bshape)), scale)
    return add(mul(xhat, reshape(gamma, bshape)), reshape(beta, bshape))


# ---------------------------------------------------------------- convolution


def _pairify(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of ``[C,H,W]`` or ``[N,C,H,W]`` input with ``[Co,Ci,kh,kw]``."""
    squeeze = x.ndim == 3
    if x.ndim not in (3, 4) or w.ndim != 4:
        raise DimensionError(f"conv2d expects [N,]C,H,W input and 4-d kernel, got {x.shape}, {w.shape}")
    xd = x.data[None] if squeeze else x.data
    n, c, h, wd = xd.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise DimensionError(f"input has {c} channels, kernel expects {ci}")
    sh, sw = _pairify(stride)
    ph, pw = _pairify(padding)
    if kh > h + 2 * ph or kw > wd + 2 * pw:
        raise DimensionError("kernel larger than padded input")
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    wmat = w.data.reshape(co, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    if squeeze:
        out = out[0]

    def fn(g):
        g4 = g[None] if squeeze else g
        g2 = g4.transpose(0, 2, 3, 1).reshape(n, ho * wo, co)
        gw = (g2.reshape(-1, co).T @ cols.reshape(-1, c * kh * kw)).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = dxp[:, :, ph:ph + h, pw:pw + wd]
            gx = gx[0] if squeeze else gx
        grads = [gx, gw]
        if b is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _result(np.ascontiguousarray(out), parents, fn)


def conv_column(x: Tensor, kernel: Tensor) -> Tensor:
    """1D convolution along the height axis with a ``[Co,Ci,kh]`` kernel (extent ``(kh, 1)``)."""
    if kernel.ndim != 3:
        raise DimensionError("column kernel must be [Co, Ci, kh]")
    return conv2d(x, reshape(kernel, kernel.shape + (1,)))


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling over the last two axes (trailing remainder dropped)."""
    *lead, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise DimensionError(f"cannot pool {x.shape} with window {size}")
    xc = x.data[..., :ho * size, :wo * size]
    blocks = xc.reshape(*lead, ho, size, wo, size)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, ho, wo, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def fn(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = np.moveaxis(gb.reshape(*lead, ho, wo, size, size), -2, -3).reshape(*lead, ho * size, wo * size)
        full = np.zeros_like(x.data)
        full[..., :ho * size, :wo * size] = gb
        return (full,)

    return _result(out, (x,), fn)


# -------------------------------------------------------------------- sampling


def sample_columns(img: Tensor, positions) -> Tensor:
    """Linear interpolation along the last axis at real ``positions`` (clamped to the border)."""
    w = img.shape[-1]
    pos = np.clip(np.asarray(positions, dtype=np.float64), 0.0, w - 1)
    x0 = np.floor(pos).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    frac = (pos - x0).astype(img.dtype)
    left = getitem(img, (Ellipsis, x0))
    if not np.any(frac):
        return left
    right = getitem(img, (Ellipsis, x1))
    return add(mul(left, 1 - frac), mul(right, frac))


def bilinear_sample(img: Tensor, x: float, y: float) -> Tensor:
    """Value of a ``[C,H,W]`` image at real ``(x, y)``; returns a ``[C]`` tensor."""
    _, h, w = img.shape
    x = min(max(float(x), 0.0), w - 1.0)
    y = min(max(float(y), 0.0), h - 1.0)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = add(mul(img[:, y0, x0], 1 - fx), mul(img[:, y0, x1], fx))
    bottom = add(mul(img[:, y1, x0], 1 - fx), mul(img[:, y1, x1], fx))
    return add(mul(top, 1 - fy), mul(bottom, fy))


# ------------------------------------------------------------- gradient check


@dataclass
class GradcheckResult:
    error: float          # worst relative error over the probed smooth coordinates
    probed: int
    skipped: int          # coordinates with a kink (ReLU, |x|, max) inside the stencil

    def passed(self, tol: float = 1e-4, max_skip_fraction: float = 0.25) -> bool:
        return self.error < tol and self.skipped <= max_skip_fraction * max(self.probed, 1)


def gradcheck_report(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-4,
                     max_checks: int | None = None, seed: int = 0, floor: float = 1e-6,
                     kink_tol: float = 1e-5) -> GradcheckResult:
    """Compare tape gradients of a scalar ``fn`` with five-point central differences.

    The estimate ``(8(f(x+h/2) - f(x-h/2)) - (f(x+h) - f(x-h))) / 3h`` has
    O(h^4) truncation error.  A coordinate whose h and h/2 central
    differences disagree by more than ``kink_tol`` (relative) straddles a
    non-differentiable point; it is counted as skipped instead of compared.
    When ``max_checks`` is given only that many random coordinates per input
    are probed.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
    tape.backward(out)

    def at(flat, i, value):
        orig = flat[i]
        flat[i] = value
        y = fn(*[Tensor(a) for a in arrays]).item()
        flat[i] = orig
        return y

    worst, probed, skipped = 0.0, 0, 0
    for leaf, arr in zip(leaves, arrays):
        analytic = (leaf.grad if leaf.grad is not None else np.zeros_like(arr)).reshape(-1)
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            idx = rng.choice(flat.size, size=max_checks, replace=False)
        for i in idx:
            x = flat[i]
            d_h = (at(flat, i, x + eps) - at(flat, i, x - eps)) / (2 * eps)
            d_h2 = (at(flat, i, x + eps / 2) - at(flat, i, x - eps / 2)) / eps
            probed += 1
            # for smooth f the two estimates agree to O(h^2); a kink breaks that
            if abs(d_h - d_h2) > kink_tol * max(abs(d_h), abs(d_h2), floor):
                skipped += 1
                continue
            num = (4 * d_h2 - d_h) / 3
            ana = analytic[i]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return GradcheckResult(float(worst), probed, skipped)


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-4,
              tol: float = 1e-4, max_checks: int | None = None, seed: int = 0,
              floor: float = 1e-6) -> float:
    """Largest relative error between tape gradients and finite differences (see ``gradcheck_report``).

    ``tol`` is accepted for call-site symmetry; the caller compares the result.
    """
    return gradcheck_report(fn, inputs, eps, max_checks, seed, floor).error
