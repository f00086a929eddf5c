"""Differentiable primitives over NCHW tensors.

Each function takes and returns :class:`~indexnet.tensor.Tensor` objects; the
backward rule lives next to the forward computation as a closure.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError
from .tensor import Parameter, Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for axis, (sa, sb) in enumerate(zip(a.shape, b.shape)):
        if sa != sb and sa != 1 and sb != 1:
            raise DimensionError(f"{op}: axis {axis} has sizes {sa} and {sb}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(a.data * b.data, (a, b), bw, "mul")


def scale(x, c: float) -> Tensor:
    """Multiply by a constant."""
    x = as_tensor(x)
    return Tensor.from_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def total(x: Tensor) -> Tensor:
    """Sum of all elements as a (1, 1, 1, 1) tensor."""
    out = np.asarray(x.data.sum(), dtype=x.dtype).reshape(1, 1, 1, 1)
    return Tensor.from_op(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "total")


def mean(x: Tensor) -> Tensor:
    return scale(total(x), 1.0 / x.data.size)


def reshape(x: Tensor, shape: tuple[int, int, int, int]) -> Tensor:
    out = x.data.reshape(shape)
    return Tensor.from_op(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def take_channels(x: Tensor, index) -> Tensor:
    """Select (and reorder) channels; a permutation when ``index`` is one."""
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), index), g)
        return (gx,)

    return Tensor.from_op(x.data[:, index], (x,), bw, "take_channels")


def expand_channels(x: Tensor, channels: int) -> Tensor:
    """Broadcast a single-channel tensor to ``channels`` identical channels."""
    if x.shape[1] != 1:
        raise DimensionError(f"expand_channels: channel axis must be 1, got {x.shape[1]}")
    n, _, h, w = x.shape
    out = np.broadcast_to(x.data, (n, channels, h, w)).copy()
    return Tensor.from_op(out, (x,), lambda g: (g.sum(axis=1, keepdims=True),), "expand_channels")


# ---------------------------------------------------------------------------
# activations and normalisation


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor.from_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _windows(a: np.ndarray, k: int) -> np.ndarray:
    """View (N, C, H, W) as (N, C, H/k, k, W/k, k)."""
    n, c, h, w = a.shape
    return a.reshape(n, c, h // k, k, w // k, k)


def _check_divisible(x: Tensor, k: int, op: str) -> None:
    if k < 1:
        raise ContractError(f"{op}: window size must be positive, got {k}")
    for axis, name in ((2, "height"), (3, "width")):
        if x.shape[axis] % k:
            raise DimensionError(f"{op}: {name} (axis {axis}) = {x.shape[axis]} is not divisible by {k}")


def region_softmax(x: Tensor, k: int) -> Tensor:
    """Softmax over every non-overlapping k x k spatial window, per sample and channel."""
    _check_divisible(x, k, "region_softmax")
    z = _windows(x.data, k)
    e = np.exp(z - z.max(axis=(3, 5), keepdims=True))
    y = e / e.sum(axis=(3, 5), keepdims=True)

    def bw(g):
        gw = _windows(g, k)
        s = (gw * y).sum(axis=(3, 5), keepdims=True)
        return ((y * (gw - s)).reshape(x.shape),)

    return Tensor.from_op(y.reshape(x.shape), (x,), bw, "region_softmax")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalisation; ``running_*`` arrays are updated in place when training."""
    n, c, h, w = x.shape
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise DimensionError(
            f"batch_norm: gamma/beta must have shape (1, {c}, 1, 1); got {gamma.shape} and {beta.shape}"
        )
    m = n * h * w
    if m == 0:
        raise DimensionError("batch_norm: channels have zero elements (axes 0, 2, 3)")
    if training:
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.reshape(c)
    else:
        mu = running_mean.reshape(1, c, 1, 1).astype(x.dtype)
        var = running_var.reshape(1, c, 1, 1).astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def bw(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3), keepdims=True) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3), keepdims=True) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data
            if training:
                gx = inv_std * (
                    gxhat
                    - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                )
            else:
                gx = gxhat * inv_std
        return gx, ggamma, gbeta

    return Tensor.from_op(out.astype(x.dtype, copy=False), (x, gamma, beta), bw, "batch_norm")


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N, C, H, W) padded input -> contiguous (N, C, k, k, Ho, Wo) patches."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))


def _col2im(cols: np.ndarray, padded_shape: tuple[int, ...], k: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add (N, C, k, k, Ho, Wo) patches."""
    ho, wo = cols.shape[4:]
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return out


def _pad(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def _grouped_matmul(w: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """(G, A, B) @ (N, G, B, L) -> (N, G, A, L)."""
    return np.matmul(w[None], cols)


def _grouped_weight_grad(g: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sum over N and L of (N, G, A, L) x (N, G, B, L) -> (G, A, B)."""
    if g.shape[1] == 1 and g.shape[3] < 64:
        # short rows: a single GEMM over the flattened batch is faster
        return np.tensordot(g[:, 0], cols[:, 0], axes=([0, 2], [0, 2]))[None]
    return np.matmul(g, cols.transpose(0, 1, 3, 2)).sum(axis=0)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D cross-correlation.

    ``weight`` has shape ``(C_out, C_in / groups, K, K)``; ``bias`` if given is
    ``(1, C_out, 1, 1)``.
    """
    n, c, h, w = x.shape
    cout, cg, kh, kw = weight.shape
    if kh != kw:
        raise DimensionError(f"conv2d: kernel must be square, got {kh}x{kw} (axes 2, 3 of weight)")
    k = kh
    if groups < 1 or c % groups:
        raise DimensionError(f"conv2d: input channels (axis 1) = {c} not divisible by groups={groups}")
    if cg != c // groups:
        raise DimensionError(
            f"conv2d: weight axis 1 is {cg} but input channels / groups = {c // groups}"
        )
    if cout % groups:
        raise DimensionError(f"conv2d: output channels (weight axis 0) = {cout} not divisible by groups={groups}")
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise DimensionError(f"conv2d: bias must have shape (1, {cout}, 1, 1), got {bias.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise DimensionError(f"conv2d: padded input {hp}x{wp} smaller than kernel {k}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    og = cout // groups
    kk = k * k

    xp = _pad(x.data, padding)
    if k == 1 and stride == 1:
        cols = xp.reshape(n, groups, cg, ho * wo)
    else:
        cols = _im2col(xp, k, stride).reshape(n, groups, cg * kk, ho * wo)
    w_g = weight.data.reshape(groups, og, cg * kk)
    out = _grouped_matmul(w_g, cols).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out)

    def bw(g):
        g_g = g.reshape(n, groups, og, ho * wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = _grouped_weight_grad(g_g, cols).reshape(weight.shape)
        if x.requires_grad:
            gcols = _grouped_matmul(w_g.transpose(0, 2, 1), g_g)  # (N, G, Cg*kk, L)
            if k == 1 and stride == 1:
                gxp = gcols.reshape(xp.shape)
            else:
                gxp = _col2im(gcols.reshape(n, c, k, k, ho, wo), xp.shape, k, stride)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3), keepdims=True)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, bw, "conv2d")


def transposed_conv2d(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2, padding: int = 0
) -> Tensor:
    """Transposed convolution (the input-adjoint of :func:`conv2d`).

    ``weight`` has shape ``(C_in, C_out, K, K)``; output spatial size is
    ``(H - 1) * stride + K - 2 * padding``.
    """
    n, c, h, w = x.shape
    cin, cout, k, k2 = weight.shape
    if k != k2:
        raise DimensionError(f"transposed_conv2d: kernel must be square, got {k}x{k2}")
    if cin != c:
        raise DimensionError(f"transposed_conv2d: input channels (axis 1) = {c}, weight expects {cin}")
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise DimensionError(f"transposed_conv2d: bias must have shape (1, {cout}, 1, 1), got {bias.shape}")
    hp, wp = (h - 1) * stride + k, (w - 1) * stride + k
    ho, wo = hp - 2 * padding, wp - 2 * padding
    if ho <= 0 or wo <= 0:
        raise DimensionError("transposed_conv2d: padding removes the whole output")

    x_cols = x.data.reshape(n, 1, c, h * w)
    w_t = weight.data.reshape(1, c, cout * k * k).transpose(0, 2, 1)  # (1, Cout*kk, C)
    cols = _grouped_matmul(w_t, x_cols).reshape(n, cout, k, k, h, w)
    full = _col2im(cols, (n, cout, hp, wp), k, stride)
    out = full[:, :, padding : padding + ho, padding : padding + wo]
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out)

    def bw(g):
        gcols = _im2col(_pad(g, padding), k, stride).reshape(n, 1, cout * k * k, h * w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _grouped_matmul(w_t.transpose(0, 2, 1), gcols).reshape(x.shape)
        if weight.requires_grad:
            gw = _grouped_weight_grad(x_cols, gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3), keepdims=True)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, bw, "transposed_conv2d")


# ---------------------------------------------------------------------------
# pooling and resampling


def _pool_out(size: int, k: int, stride: int, axis: int, op: str) -> int:
    if size < k:
        raise DimensionError(f"{op}: axis {axis} has size {size} < window {k}")
    return (size - k) // stride + 1


def avg_pool(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    ho, wo = _pool_out(h, k, stride, 2, "avg_pool"), _pool_out(w, k, stride, 3, "avg_pool")
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = win.mean(axis=(4, 5))

    def bw(g):
        gx = np.zeros_like(x.data)
        share = g / (k * k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += share
        return (gx,)

    return Tensor.from_op(out, (x,), bw, "avg_pool")


def max_pool_with_argmax(x: Tensor, k: int, stride: int | None = None) -> tuple[Tensor, np.ndarray]:
    """Max pooling that also returns flat (row * W + col) argmax positions per (n, c).

    Ties resolve to the first maximum in row-major order within the window.
    """
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    ho, wo = _pool_out(h, k, stride, 2, "max_pool"), _pool_out(w, k, stride, 3, "max_pool")
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, ho, wo, k * k)
    local = flat.argmax(axis=4)
    out = np.take_along_axis(flat, local[..., None], axis=4)[..., 0]
    rows = np.arange(ho)[:, None] * stride + local // k
    cols = np.arange(wo)[None, :] * stride + local % k
    argmax = rows * w + cols

    def bw(g):
        gx = np.zeros((n, c, h * w), dtype=g.dtype)
        gflat = g.reshape(n, c, ho * wo)
        idx = argmax.reshape(n, c, ho * wo)
        if stride >= k:
            np.put_along_axis(gx, idx, gflat, axis=2)
        else:
            for b in range(n):
                for ch in range(c):
                    np.add.at(gx[b, ch], idx[b, ch], gflat[b, ch])
        return (gx.reshape(x.shape),)

    return Tensor.from_op(np.ascontiguousarray(out), (x,), bw, "max_pool"), argmax


def max_unpool(x: Tensor, argmax: np.ndarray, output_size: tuple[int, int]) -> Tensor:
    """Place each value at its recorded argmax position; zeros elsewhere."""
    n, c, h, w = x.shape
    if argmax.shape != x.shape:
        raise DimensionError(f"max_unpool: indices shape {argmax.shape} does not match input {x.shape}")
    oh, ow = output_size
    idx = argmax.reshape(n, c, h * w)
    out = np.zeros((n, c, oh * ow), dtype=x.dtype)
    np.put_along_axis(out, idx, x.data.reshape(n, c, h * w), axis=2)

    def bw(g):
        return (np.take_along_axis(g.reshape(n, c, oh * ow), idx, axis=2).reshape(x.shape),)

    return Tensor.from_op(out.reshape(n, c, oh, ow), (x,), bw, "max_unpool")


def nearest_upsample(x: Tensor, factor: int) -> Tensor:
    n, c, h, w = x.shape
    f = factor
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, f, w, f)).reshape(n, c, h * f, w * f)

    def bw(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    return Tensor.from_op(np.ascontiguousarray(out), (x,), bw, "nearest_upsample")


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) linear interpolation matrix, half-pixel (align-corners=false) sampling."""
    scale_ = n_in / n_out
    src = np.clip((np.arange(n_out) + 0.5) * scale_ - 0.5, 0.0, None)
    i0 = np.minimum(np.floor(src).astype(np.intp), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    m = np.zeros((n_out, n_in), dtype=dtype)
    np.add.at(m, (np.arange(n_out), i0), 1.0 - lam)
    np.add.at(m, (np.arange(n_out), i1), lam)
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor with align-corners=false."""
    n, c, h, w = x.shape
    ah = bilinear_matrix(h, h * factor, x.dtype)
    aw = bilinear_matrix(w, w * factor, x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)

    def bw(g):
        return (np.matmul(np.matmul(ah.T, g), aw),)

    return Tensor.from_op(out, (x,), bw, "bilinear_upsample")


def _d2s(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(
        n, c // (r * r), h * r, w * r
    )


def _s2d(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, c * r * r, h // r, w // r
    )


def depth_to_space(x: Tensor, r: int) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r); channel c*r*r + i*r + j lands at offset (i, j)."""
    if x.shape[1] % (r * r):
        raise DimensionError(f"depth_to_space: channels (axis 1) = {x.shape[1]} not divisible by {r * r}")
    out = np.ascontiguousarray(_d2s(x.data, r))
    return Tensor.from_op(out, (x,), lambda g: (np.ascontiguousarray(_s2d(g, r)),), "depth_to_space")


def space_to_depth(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`depth_to_space`."""
    _check_divisible(x, r, "space_to_depth")
    out = np.ascontiguousarray(_s2d(x.data, r))
    return Tensor.from_op(out, (x,), lambda g: (np.ascontiguousarray(_d2s(g, r)),), "space_to_depth")


# ---------------------------------------------------------------------------
# losses


def l1_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    out = np.asarray(np.abs(diff).mean(), dtype=pred.dtype).reshape(1, 1, 1, 1)
    count = diff.size

    def bw(g):
        s = np.sign(diff) * (g.reshape(()) / count)
        return s, (-s if target.requires_grad else None)

    return Tensor.from_op(out, (pred, target), bw, "l1_loss")


def l2_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"l2_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    out = np.asarray((diff * diff).mean(), dtype=pred.dtype).reshape(1, 1, 1, 1)
    count = diff.size

    def bw(g):
        s = diff * (2.0 * g.reshape(()) / count)
        return s, (-s if target.requires_grad else None)

    return Tensor.from_op(out, (pred, target), bw, "l2_loss")


__all__ = [
    "Parameter",
    "add",
    "avg_pool",
    "batch_norm",
    "bilinear_matrix",
    "bilinear_upsample",
    "conv2d",
    "depth_to_space",
    "expand_channels",
    "l1_loss",
    "l2_loss",
    "max_pool_with_argmax",
    "max_unpool",
    "mean",
    "mul",
    "nearest_upsample",
    "region_softmax",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "space_to_depth",
    "take_channels",
    "total",
    "transposed_conv2d",
]
