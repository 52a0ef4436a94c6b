"""Independent reference routes for the numeric self-checks.

Deliberately naive implementations (nested loops, plain recurrences) kept
separate from the production ops so that the two can cross-check each
other.  Used by `fcae selfcheck` and by the test suite.
"""

from __future__ import annotations

import numpy as np

from .nn.ops import same_geometry


def conv2d_same_bruteforce(x: np.ndarray, filters: np.ndarray,
                           bias: np.ndarray, stride) -> np.ndarray:
    """SAME convolution via explicit loops over every output element."""
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    n, h, w, cin = x.shape
    fh, fw, _, cout = filters.shape
    oh, pt, _ = same_geometry(h, fh, sh)
    ow, pl, _ = same_geometry(w, fw, sw)
    y = np.zeros((n, oh, ow, cout))
    for b in range(n):
        for oy in range(oh):
            for ox in range(ow):
                for oc in range(cout):
                    acc = bias[oc]
                    for i in range(fh):
                        for j in range(fw):
                            iy = oy * sh - pt + i
                            ix = ox * sw - pl + j
                            if 0 <= iy < h and 0 <= ix < w:
                                for ic in range(cin):
                                    acc += x[b, iy, ix, ic] * filters[i, j, ic, oc]
                    y[b, oy, ox, oc] = acc
    return y


def deconv_bruteforce(y: np.ndarray, filters: np.ndarray, bias: np.ndarray,
                      stride, target_hw) -> np.ndarray:
    """Transposed convolution as an explicit scatter of conv contributions."""
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    n, oh, ow, cout = y.shape
    fh, fw, ct, _ = filters.shape
    th, tw = target_hw
    _, pt, _ = same_geometry(th, fh, sh)
    _, pl, _ = same_geometry(tw, fw, sw)
    z = np.zeros((n, th, tw, ct))
    for b in range(n):
        for oy in range(oh):
            for ox in range(ow):
                for oc in range(cout):
                    v = y[b, oy, ox, oc]
                    for i in range(fh):
                        for j in range(fw):
                            iy = oy * sh - pt + i
                            ix = ox * sw - pl + j
                            if 0 <= iy < th and 0 <= ix < tw:
                                for ic in range(ct):
                                    z[b, iy, ix, ic] += v * filters[i, j, ic, oc]
    return z + bias


def finite_diff_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. one array."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        fp = f()
        arr[idx] = orig - h
        fm = f()
        arr[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
        it.iternext()
    return g


def adam_reference(w0: float, grad_fn, steps: int, alpha: float = 0.001,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> list[float]:
    """Textbook scalar Adam recurrence; returns the parameter trajectory."""
    w = w0
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        w = w - alpha * m_hat / (np.sqrt(v_hat) + eps)
        out.append(w)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, floor)."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
