"""Differentiable layer primitives: convolutions, GDN and CBAM."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError, NumericError
from .tensor import Tensor, _make, as_tensor


def _same_geometry(size: int, k: int, s: int) -> tuple[int, int, int]:
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return out, total // 2, total - total // 2


def _geometry(h, w, kh, kw, stride, padding):
    if padding == "same":
        ho, pt, pb = _same_geometry(h, kh, stride)
        wo, pl, pr = _same_geometry(w, kw, stride)
    else:
        if isinstance(padding, int):
            pt = pb = pl = pr = padding
        else:
            pt, pb, pl, pr = padding
        ho = (h + pt + pb - kh) // stride + 1
        wo = (w + pl + pr - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"kernel {kh}x{kw} does not fit input {h}x{w}")
    return ho, wo, (pt, pb, pl, pr)


def _im2col(xp: np.ndarray, kh: int, kw: int, s: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, shape_p, kh, kw, s, ho, wo) -> np.ndarray:
    n, c = shape_p[:2]
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros(shape_p, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += cols[:, :, i, j]
    return xp


def conv2d(x, kernel, bias=None, stride: int = 1, padding="same") -> Tensor:
    """2-D cross-correlation.

    ``kernel`` is ``out_ch x in_ch x kh x kw``. ``padding="same"`` zero-pads
    so the output is ``ceil(H / stride) x ceil(W / stride)`` (extra row and
    column go to the bottom/right). An int or ``(top, bottom, left, right)``
    gives explicit zero padding.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and kernel")
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    if c != ic:
        raise DimensionError(f"input has {c} channels, kernel expects {ic}")
    ho, wo, (pt, pb, pl, pr) = _geometry(h, w, kh, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    k2 = kernel.data.reshape(oc, -1)
    out = (k2 @ cols).reshape(n, oc, ho, wo)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (oc,):
            raise DimensionError(f"bias shape {bias.shape} != ({oc},)")
        out = out + bias.data.reshape(1, oc, 1, 1)
        parents.append(bias)

    def back(g):
        g2 = g.reshape(n, oc, ho * wo)
        gk = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = k2.T @ g2
            gxp = _col2im(gcols, xp.shape, kh, kw, stride, ho, wo)
            gx = gxp[:, :, pt : pt + h, pl : pl + w]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _make(out, parents, back, "conv2d")


def transposed_conv2d(x, kernel, bias=None, stride: int = 1) -> Tensor:
    """Adjoint of :func:`conv2d` with ``"same"`` padding; upsamples by ``stride``.

    ``kernel`` has the layout of the convolution this is the adjoint of,
    i.e. ``in_ch x out_ch x kh x kw`` from this op's point of view, so the
    same array can be passed to both ops.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("transposed_conv2d expects 4-D input and kernel")
    n, c, h, w = x.shape
    ic, oc, kh, kw = kernel.shape
    if c != ic:
        raise DimensionError(f"input has {c} channels, kernel expects {ic}")
    H, W = h * stride, w * stride
    ho, wo, (pt, pb, pl, pr) = _geometry(H, W, kh, kw, stride, "same")
    k2 = kernel.data.reshape(ic, -1)
    x2 = x.data.reshape(n, ic, h * w)
    cols = k2.T @ x2
    shape_p = (n, oc, H + pt + pb, W + pl + pr)
    out = _col2im(cols, shape_p, kh, kw, stride, ho, wo)[:, :, pt : pt + H, pl : pl + W]
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (oc,):
            raise DimensionError(f"bias shape {bias.shape} != ({oc},)")
        out = out + bias.data.reshape(1, oc, 1, 1)
        parents.append(bias)

    def back(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        gcols = _im2col(gp, kh, kw, stride, ho, wo)
        gx = (k2 @ gcols).reshape(x.shape) if x.requires_grad else None
        gk = np.tensordot(x2, gcols, axes=([0, 2], [0, 2])).reshape(kernel.shape) if kernel.requires_grad else None
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _make(np.ascontiguousarray(out), parents, back, "transposed_conv2d")


def gdn(x, beta, gamma, inverse: bool = False) -> Tensor:
    """Generalized divisive normalization (simplified, exponents fixed at 2 and 1/2).

    Per pixel ``z_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)``; with
    ``inverse=True`` the division becomes a multiplication. ``beta`` and
    ``gamma`` are the already-constrained (positive) values.
    """
    x, beta, gamma = as_tensor(x), as_tensor(beta), as_tensor(gamma)
    c = x.shape[1]
    if beta.shape != (c,) or gamma.shape != (c, c):
        raise DimensionError(f"gdn expects beta ({c},) and gamma ({c},{c})")
    norm = conv2d(T.square(x), T.reshape(gamma, (c, c, 1, 1)), beta, 1, padding=0)
    if np.any(norm.data <= 0):
        raise NumericError("gdn divisor is not positive")
    root = T.sqrt(norm)
    return x * root if inverse else x / root


def cbam(x, mlp_w1, mlp_b1, mlp_w2, mlp_b2, spatial_w, spatial_b) -> Tensor:
    """Convolutional block attention: channel gate, then spatial gate.

    The shared channel MLP is two 1x1 convolutions (``C -> C/r -> C``) with a
    ReLU between them, applied to the average- and max-pooled descriptors.
    The spatial gate convolves the stacked channel-mean and channel-max maps
    with ``spatial_w`` (``1 x 2 x k x k``, same padding).
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("cbam expects a 4-D input")
    n, c = x.shape[:2]
    if mlp_w1.shape[1] != c or mlp_w2.shape[0] != c:
        raise DimensionError(f"cbam MLP does not match {c} channels")
    pooled = T.concat([T.mean(x, (2, 3), keepdims=True), T.amax(x, (2, 3), keepdims=True)], axis=0)
    hidden = T.relu(conv2d(pooled, mlp_w1, mlp_b1, 1, padding=0))
    logits = conv2d(hidden, mlp_w2, mlp_b2, 1, padding=0)
    channel_gate = T.sigmoid(logits[:n] + logits[n:])
    x = x * channel_gate

    maps = T.concat([T.mean(x, 1, keepdims=True), T.amax(x, 1, keepdims=True)], axis=1)
    spatial_gate = T.sigmoid(conv2d(maps, spatial_w, spatial_b, 1, padding="same"))
    return x * spatial_gate
