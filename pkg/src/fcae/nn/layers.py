"""Layer objects with cached forward state and explicit backward passes."""

from __future__ import annotations

import numpy as np

from . import ops


class Layer:
    """Base: parameter-free, shape-preserving identity."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Conv2D(Layer):
    def __init__(self, fh: int, fw: int, cin: int, cout: int, stride: int,
                 rng: np.random.Generator, l2: float = 0.0):
        super().__init__()
        self.stride = stride
        self.l2 = l2
        self.params = {"w": ops.xavier_init((fh, fw, cin, cout), rng),
                       "b": np.zeros(cout)}
        self.zero_grads()
        self._cache = None

    def forward(self, x, train=False):
        self._cache = x
        return ops.conv2d_same(x, self.params["w"], self.params["b"], self.stride)

    def backward(self, dy):
        dx, dw, db = ops.conv2d_same_grads(dy, self._cache, self.params["w"],
                                           self.stride)
        self.grads["w"] += dw
        self.grads["b"] += db
        return dx


class Deconv2D(Layer):
    """Transposed conv with untied weights; target spatial dims are fixed."""

    def __init__(self, fh: int, fw: int, cout: int, cin: int, stride: int,
                 target_hw: tuple[int, int], rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.target_hw = target_hw
        # conv filter layout (fh, fw, c_target, c_in); bias per target channel
        self.params = {"w": ops.xavier_init((fh, fw, cout, cin), rng),
                       "b": np.zeros(cout)}
        self.zero_grads()
        self._cache = None

    def forward(self, x, train=False):
        self._cache = x
        return ops.deconv(x, self.params["w"], self.params["b"], self.stride,
                          self.target_hw)

    def backward(self, dy):
        dx, dw, db = ops.deconv_grads(dy, self._cache, self.params["w"], self.stride)
        self.grads["w"] += dw
        self.grads["b"] += db
        return dx


class MaxPool2D(Layer):
    def __init__(self, kernel: int | tuple[int, int], stride: int | tuple[int, int]):
        super().__init__()
        self.kernel = kernel
        self.stride = stride
        self._cache = None

    def forward(self, x, train=False):
        y, arg = ops.maxpool(x, self.kernel, self.stride)
        self._cache = (arg, x.shape)
        return y

    def backward(self, dy):
        arg, x_shape = self._cache
        return ops.maxpool_backward(dy, arg, x_shape, self.kernel, self.stride)


class UpsampleNearest(Layer):
    def __init__(self, target_hw: tuple[int, int]):
        super().__init__()
        self.target_hw = target_hw
        self._cache = None

    def forward(self, x, train=False):
        self._cache = x.shape
        return ops.upsample_nearest(x, self.target_hw)

    def backward(self, dy):
        return ops.upsample_nearest_backward(dy, self._cache, self.target_hw)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.params = {"w": ops.xavier_init((n_in, n_out), rng),
                       "b": np.zeros(n_out)}
        self.zero_grads()
        self._cache = None

    def forward(self, x, train=False):
        self._cache = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy):
        x = self._cache
        self.grads["w"] += x.T @ dy
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["w"].T


class Dropout(Layer):
    """Inverted dropout; draws masks only on training passes."""

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask
