"""Dense tensor ops for the auto-encoder engine.

All tensors are float64 numpy arrays laid out (batch, height, width,
channels).  Convolution filters are laid out (fh, fw, c_in, c_out).
Padding follows the SAME convention: output size ceil(in/stride), zeros
split evenly with the odd pixel on the bottom/right edge.

Convolutions run as one GEMM over a gathered patch matrix.  Patch and
padding buffers come from a small thread-local pool so the hot loops never
re-fault fresh pages; the adjoint (transposed) convolution at stride one
runs as a plain convolution with spatially flipped, channel-swapped
filters, which keeps the GEMM inner dimension large.
"""

from __future__ import annotations

import threading

import numpy as np

from ..errors import ShapeError

_tls = threading.local()


def _workspace(slot: str, size: int) -> np.ndarray:
    """Reusable flat float64 buffer; grows monotonically per slot."""
    bufs = getattr(_tls, "bufs", None)
    if bufs is None:
        bufs = _tls.bufs = {}
    buf = bufs.get(slot)
    if buf is None or buf.size < size:
        buf = bufs[slot] = np.empty(max(size, 1), dtype=np.float64)
    return buf[:size]


def same_geometry(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """Return (out_size, pad_before, pad_after) for one spatial axis."""
    out = -(-size // stride)  # ceil
    pad_total = max((out - 1) * stride + k - size, 0)
    before = pad_total // 2
    return out, before, pad_total - before


def _pad_into(slot: str, x: np.ndarray, pt: int, pb: int, pl: int, pr: int,
              value: float = 0.0) -> np.ndarray:
    """Zero/value padding via the buffer pool instead of np.pad."""
    n, h, w, c = x.shape
    hp, wp = h + pt + pb, w + pl + pr
    xp = _workspace(slot, n * hp * wp * c).reshape(n, hp, wp, c)
    if pt or pb or pl or pr:
        xp.fill(value)
    xp[:, pt:pt + h, pl:pl + w, :] = x
    return xp


def _gather_cols(slot: str, xp: np.ndarray, kh: int, kw: int, sh: int, sw: int,
                 oh: int, ow: int) -> np.ndarray:
    """Sliding windows of a padded tensor as a (N*oh*ow, kh*kw*C) matrix."""
    n, _, _, c = xp.shape
    cols = _workspace(slot, n * oh * ow * kh * kw * c)
    cols6 = cols.reshape(n, oh, ow, kh, kw, c)
    for i in range(kh):
        ie = i + sh * oh
        for j in range(kw):
            je = j + sw * ow
            cols6[:, :, :, i, j, :] = xp[:, i:ie:sh, j:je:sw, :]
    return cols.reshape(n * oh * ow, kh * kw * c)


def im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int,
           pad_value: float = 0.0) -> tuple[np.ndarray, int, int]:
    """SAME-padded sliding windows as fresh rows: (N*oh*ow, kh*kw*C)."""
    n, h, w, c = x.shape
    oh, pt, pb = same_geometry(h, kh, sh)
    ow, pl, pr = same_geometry(w, kw, sw)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=pad_value)
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        ie = i + sh * oh
        for j in range(kw):
            je = j + sw * ow
            cols[:, :, :, i, j, :] = xp[:, i:ie:sh, j:je:sw, :]
    return cols.reshape(n * oh * ow, kh * kw * c), oh, ow


def col2im_add(cols: np.ndarray, x_shape: tuple, kh: int, kw: int,
               sh: int, sw: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add rows back onto the input grid."""
    n, h, w, c = x_shape
    oh, pt, pb = same_geometry(h, kh, sh)
    ow, pl, pr = same_geometry(w, kw, sw)
    xp = np.zeros((n, h + pt + pb, w + pl + pr, c), dtype=cols.dtype)
    cols6 = cols.reshape(n, oh, ow, kh, kw, c)
    for i in range(kh):
        ie = i + sh * oh
        for j in range(kw):
            je = j + sw * ow
            xp[:, i:ie:sh, j:je:sw, :] += cols6[:, :, :, i, j, :]
    return xp[:, pt:pt + h, pl:pl + w, :]


def _conv_taps(xp: np.ndarray, filters: np.ndarray, oh: int, ow: int,
               sh: int, sw: int) -> np.ndarray:
    """One GEMM per kernel tap, accumulated; patch copies go through the
    pool and land contiguous, which is what keeps this memory-friendly."""
    n = xp.shape[0]
    fh, fw, ci, co = filters.shape
    rows = n * oh * ow
    patch = _workspace("tap_patch", rows * ci).reshape(n, oh, ow, ci)
    tmp = _workspace("tap_gemm", rows * co).reshape(rows, co)
    y = np.zeros((rows, co), dtype=xp.dtype)
    for i in range(fh):
        ie = i + sh * oh
        for j in range(fw):
            je = j + sw * ow
            np.copyto(patch, xp[:, i:ie:sh, j:je:sw, :])
            np.matmul(patch.reshape(rows, ci), filters[i, j], out=tmp)
            y += tmp
    return y.reshape(n, oh, ow, co)


def conv2d_same(x: np.ndarray, filters: np.ndarray, bias: np.ndarray,
                stride: int | tuple[int, int]) -> np.ndarray:
    """SAME convolution."""
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    fh, fw, cin, cout = filters.shape
    if x.shape[3] != cin:
        raise ShapeError(f"input has {x.shape[3]} channels, filters expect {cin}")
    n, h, w, _ = x.shape
    oh, pt, pb = same_geometry(h, fh, sh)
    ow, pl, pr = same_geometry(w, fw, sw)
    xp = _pad_into("fwd_pad", x, pt, pb, pl, pr)
    return _conv_taps(xp, filters, oh, ow, sh, sw) + bias


def _flip_swap(filters: np.ndarray) -> np.ndarray:
    """Spatially flipped filters with input/output channels exchanged: the
    kernel of the adjoint convolution."""
    return np.ascontiguousarray(filters[::-1, ::-1].transpose(0, 1, 3, 2))


def conv_backward_data(dy: np.ndarray, filters: np.ndarray, x_shape: tuple,
                       stride: int | tuple[int, int]) -> np.ndarray:
    """Adjoint of conv2d_same applied to dy (gradient w.r.t. the input).

    At stride one this is a stride-one convolution of dy with the flipped
    kernel under mirrored SAME pads; other strides use an explicit
    scatter-add over a patch matrix.
    """
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    n, h, w, cin = x_shape
    fh, fw, _, cout = filters.shape
    _, pt, pb = same_geometry(h, fh, sh)
    _, pl, pr = same_geometry(w, fw, sw)
    if sh == 1 and sw == 1:
        g = _flip_swap(filters)
        dyp = _pad_into("bwd_pad", dy, pb, pt, pr, pl)
        cols = _gather_cols("bwd_cols", dyp, fh, fw, 1, 1, h, w)
        dx = cols @ g.reshape(fh * fw * cout, cin)
        return dx.reshape(n, h, w, cin)
    dcols = dy.reshape(-1, cout) @ filters.reshape(fh * fw * cin, cout).T
    return col2im_add(dcols, x_shape, fh, fw, sh, sw)


def conv_dw(x: np.ndarray, dy: np.ndarray, filters_shape: tuple,
            stride: int | tuple[int, int]) -> np.ndarray:
    """Filter gradient: one patch-against-output GEMM per kernel tap."""
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    fh, fw, cin, cout = filters_shape
    n, h, w, _ = x.shape
    oh, pt, pb = same_geometry(h, fh, sh)
    ow, pl, pr = same_geometry(w, fw, sw)
    rows = n * oh * ow
    xp = _pad_into("dw_pad", x, pt, pb, pl, pr)
    patch = _workspace("dw_patch", rows * cin).reshape(n, oh, ow, cin)
    dy_flat = np.ascontiguousarray(dy.reshape(rows, cout))
    dw = np.empty(filters_shape, dtype=x.dtype)
    for i in range(fh):
        ie = i + sh * oh
        for j in range(fw):
            je = j + sw * ow
            np.copyto(patch, xp[:, i:ie:sh, j:je:sw, :])
            np.matmul(patch.reshape(rows, cin).T, dy_flat, out=dw[i, j])
    return dw


def conv2d_same_grads(dy: np.ndarray, x: np.ndarray, filters: np.ndarray,
                      stride: int | tuple[int, int]):
    """Gradients of conv2d_same: (dx, dfilters, dbias)."""
    dfilters = conv_dw(x, dy, filters.shape, stride)
    dbias = dy.reshape(-1, filters.shape[3]).sum(axis=0)
    dx = conv_backward_data(dy, filters, x.shape, stride)
    return dx, dfilters, dbias


def _check_deconv_geometry(x, filters, stride, target_hw):
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    fh, fw, ct, cin = filters.shape
    n, ih, iw, c = x.shape
    if c != cin:
        raise ShapeError(f"input has {c} channels, filters expect {cin}")
    th, tw = target_hw
    oh, _, _ = same_geometry(th, fh, sh)
    ow, _, _ = same_geometry(tw, fw, sw)
    if (oh, ow) != (ih, iw):
        raise ShapeError(
            f"target {th}x{tw} with stride {sh}x{sw} implies input {oh}x{ow}, got {ih}x{iw}")


def deconv(x: np.ndarray, filters: np.ndarray, bias: np.ndarray,
           stride: int | tuple[int, int], target_hw: tuple[int, int]) -> np.ndarray:
    """Transposed convolution: the exact adjoint of conv2d_same.

    `filters` keeps the conv layout (fh, fw, c_target, c_in): the op maps
    c_in channels back onto c_target channels on the target spatial grid.
    `bias` has one entry per target channel.
    """
    _check_deconv_geometry(x, filters, stride, target_hw)
    th, tw = target_hw
    n = x.shape[0]
    ct = filters.shape[2]
    z = conv_backward_data(x, filters, (n, th, tw, ct), stride)
    return z + bias


def deconv_grads(dz: np.ndarray, x: np.ndarray, filters: np.ndarray,
                 stride: int | tuple[int, int]):
    """Gradients of deconv: (dx, dfilters, dbias)."""
    fh, fw, ct, cin = filters.shape
    dx = conv2d_same(dz, filters, np.zeros(cin, dtype=x.dtype), stride)
    dfilters = conv_dw(dz, x, (fh, fw, ct, cin), stride)
    dbias = dz.sum(axis=(0, 1, 2))
    return dx, dfilters, dbias


def maxpool(x: np.ndarray, kernel: int | tuple[int, int],
            stride: int | tuple[int, int]):
    """SAME max pooling.  Returns (y, argmax) with argmax kept for backward.

    Edge windows may reach past the input; padded cells are -inf and can
    never win, so every argmax points at a real input cell.
    """
    kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    n, h, w, c = x.shape
    cols, oh, ow = im2col(x, kh, kw, sh, sw, pad_value=-np.inf)
    cols = cols.reshape(n, oh, ow, kh * kw, c)
    arg = cols.argmax(axis=3)
    y = np.take_along_axis(cols, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return y, arg


def maxpool_backward(dy: np.ndarray, arg: np.ndarray, x_shape: tuple,
                     kernel: int | tuple[int, int],
                     stride: int | tuple[int, int]) -> np.ndarray:
    """Route each output gradient to the input cell that produced the max."""
    kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    n, h, w, c = x_shape
    _, pt, _ = same_geometry(h, kh, sh)
    _, pl, _ = same_geometry(w, kw, sw)
    _, oh, ow, _ = dy.shape
    ki, kj = arg // kw, arg % kw
    rows = np.arange(oh)[None, :, None, None] * sh - pt + ki
    cols_ = np.arange(ow)[None, None, :, None] * sw - pl + kj
    flat = ((np.arange(n)[:, None, None, None] * h + rows) * w + cols_) * c \
        + np.arange(c)[None, None, None, :]
    dx = np.zeros(n * h * w * c, dtype=dy.dtype)
    np.add.at(dx, flat.ravel(), dy.ravel())
    return dx.reshape(x_shape)


def upsample_nearest(x: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize to the target spatial dims."""
    th, tw = target_hw
    n, h, w, c = x.shape
    ri = np.arange(th) * h // th
    ci = np.arange(tw) * w // tw
    return x[:, ri][:, :, ci]


def upsample_nearest_backward(dy: np.ndarray, x_shape: tuple,
                              target_hw: tuple[int, int]) -> np.ndarray:
    th, tw = target_hw
    n, h, w, c = x_shape
    ri = np.arange(th) * h // th
    ci = np.arange(tw) * w // tw
    tmp = np.zeros((n, h, tw, c), dtype=dy.dtype)
    np.add.at(tmp, (slice(None), ri), dy)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    np.add.at(dx, (slice(None), slice(None), ci), tmp)
    return dx


def recon_loss_and_grad(xhat: np.ndarray, x: np.ndarray):
    """Reconstruction error: per-image sum of squared pixel differences,
    averaged over the batch.  Returns (loss, dloss/dxhat)."""
    n = x.shape[0]
    diff = xhat - x
    loss = float(np.sum(diff * diff) / n)
    return loss, 2.0 * diff / n


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch.  Returns (loss, dlogits, probs)."""
    n = logits.shape[0]
    p = softmax(logits)
    loss = float(-np.mean(np.log(p[np.arange(n), labels] + 1e-300)))
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n, p


def xavier_fans(shape: tuple) -> tuple[int, int]:
    if len(shape) == 4:  # conv filters (fh, fw, cin, cout)
        fh, fw, cin, cout = shape
        return fh * fw * cin, fh * fw * cout
    if len(shape) == 2:  # dense (in, out)
        return shape[0], shape[1]
    raise ShapeError(f"no fan convention for shape {shape}")


def xavier_init(shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """Uniform [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = xavier_fans(shape)
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)
