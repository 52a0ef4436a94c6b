"""Auto-encoder and classifier models assembled from decoded architectures.

The encoder runs the genome's conv layers (each followed by ReLU) and then
its max-pool layers.  The decoder mirrors the encoder in reverse: one
nearest-neighbor upsample per pool layer back to the recorded pre-pool
size, then one transposed conv per conv layer back to the recorded
pre-conv size, with untied weights.  Hidden activations are ReLU; the
final reconstruction layer is linear.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, TrainingError
from ..genome import DecodedArchitecture
from . import ops
from .layers import (Conv2D, Deconv2D, Dense, Dropout, Flatten, Layer,
                     MaxPool2D, ReLU, UpsampleNearest)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def encoder_shape_chain(arch: DecodedArchitecture,
                        input_shape: tuple[int, int, int]):
    """Shapes (h, w, c) seen at the input of every encoder layer, plus the
    final feature shape.  Returns (conv_inputs, pool_inputs, out_shape)."""
    h, w, c = input_shape
    conv_inputs = []
    for layer in arch.conv_layers:
        conv_inputs.append((h, w, c))
        h, w = _ceil_div(h, layer.stride_h), _ceil_div(w, layer.stride_w)
        c = layer.feature_maps
    pool_inputs = []
    for layer in arch.pool_layers:
        pool_inputs.append((h, w, c))
        h, w = _ceil_div(h, layer.stride_h), _ceil_div(w, layer.stride_w)
    return conv_inputs, pool_inputs, (h, w, c)


@dataclass
class LossParts:
    recon: float
    l2: float

    @property
    def total(self) -> float:
        return self.recon + self.l2


class _LayerStack:
    """Shared plumbing: ordered named layers with chained forward/backward."""

    def __init__(self):
        self.layers: list[tuple[str, Layer]] = []

    def _add(self, name: str, layer: Layer) -> Layer:
        self.layers.append((name, layer))
        return layer

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for _, layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for _, layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grads(self) -> None:
        for _, layer in self.layers:
            layer.zero_grads()

    def param_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers:
            for key, arr in layer.params.items():
                out[f"{name}.{key}"] = arr
        return out

    def grad_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers:
            for key, arr in layer.grads.items():
                out[f"{name}.{key}"] = arr
        return out

    @property
    def param_count(self) -> int:
        return sum(arr.size for arr in self.param_arrays().values())

    def first_nonfinite_layer(self, x: np.ndarray) -> str | None:
        """Replay the forward pass and name the first layer emitting
        non-finite values (diagnostic path, eval mode)."""
        if not np.isfinite(x).all():
            return "input"
        for name, layer in self.layers:
            x = layer.forward(x, train=False)
            if not np.isfinite(x).all():
                return name
        return None


class FcaeModel(_LayerStack):
    def __init__(self, arch: DecodedArchitecture,
                 input_shape: tuple[int, int, int], rng: np.random.Generator):
        super().__init__()
        self.arch = arch
        self.input_shape = input_shape
        conv_inputs, pool_inputs, feat = encoder_shape_chain(arch, input_shape)
        self.feature_shape = feat

        self.encoder_convs: list[Conv2D] = []
        for i, spec in enumerate(arch.conv_layers):
            cin = conv_inputs[i][2]
            conv = Conv2D(spec.filter_h, spec.filter_w, cin, spec.feature_maps,
                          (spec.stride_h, spec.stride_w), rng, l2=spec.l2)
            self.encoder_convs.append(conv)
            self._add(f"enc_conv{i}", conv)
            self._add(f"enc_relu{i}", ReLU())
        for j, spec in enumerate(arch.pool_layers):
            self._add(f"enc_pool{j}", MaxPool2D((spec.kernel_h, spec.kernel_w),
                                                (spec.stride_h, spec.stride_w)))
        self.n_encoder_layers = len(self.layers)

        for j in reversed(range(arch.n_p)):
            h, w, _ = pool_inputs[j]
            self._add(f"dec_upsample{j}", UpsampleNearest((h, w)))
        for i in reversed(range(arch.n_c)):
            spec = arch.conv_layers[i]
            h, w, cout = conv_inputs[i]
            deconv = Deconv2D(spec.filter_h, spec.filter_w, cout,
                              spec.feature_maps, (spec.stride_h, spec.stride_w),
                              (h, w), rng)
            self._add(f"dec_deconv{i}", deconv)
            if i > 0:
                self._add(f"dec_relu{i}", ReLU())

    def forward(self, x, train=False):
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"expected input {self.input_shape}, got {x.shape[1:]}")
        return super().forward(x, train=train)

    def encode(self, x: np.ndarray) -> np.ndarray:
        """Features produced by the encoder half alone."""
        for _, layer in self.layers[:self.n_encoder_layers]:
            x = layer.forward(x, train=False)
        return x

    def l2_terms(self) -> list[tuple[float, Conv2D]]:
        """Weight-decay coefficients paired with their encoder conv layers.

        Decay applies to encoder conv filter weights only, never biases,
        decoder weights, or classifier heads.
        """
        return [(conv.l2, conv) for conv in self.encoder_convs if conv.l2 > 0.0]


class FcaeClassifier(_LayerStack):
    """Encoder features into FC(units)+ReLU+Dropout then an FC logit layer."""

    def __init__(self, fcae: FcaeModel, n_classes: int, fc_units: int,
                 dropout_rate: float, rng: np.random.Generator,
                 copy_encoder: bool = True):
        super().__init__()
        self.input_shape = fcae.input_shape
        self.n_classes = n_classes
        self.fc_units = fc_units
        self.dropout_rate = dropout_rate
        for name, layer in fcae.layers[:fcae.n_encoder_layers]:
            clone = copy.copy(layer)
            if copy_encoder:
                clone.params = {k: v.copy() for k, v in layer.params.items()}
            clone.zero_grads()
            self._add(name, clone)
        h, w, c = fcae.feature_shape
        self._add("head_flatten", Flatten())
        self._add("head_fc1", Dense(h * w * c, fc_units, rng))
        self._add("head_relu", ReLU())
        self._add("head_dropout", Dropout(dropout_rate, rng))
        self._add("head_fc2", Dense(fc_units, n_classes, rng))


def forward_backward(model: FcaeModel, batch: np.ndarray,
                     train: bool = True) -> LossParts:
    """One reconstruction pass: loss parts computed, gradients accumulated.

    Raises TrainingError naming the first offending layer if the loss or
    any activation goes non-finite.
    """
    model.zero_grads()
    xhat = model.forward(batch, train=train)
    recon, dxhat = ops.recon_loss_and_grad(xhat, batch)
    l2 = 0.0
    for coef, conv in model.l2_terms():
        w = conv.params["w"]
        l2 += coef * float(np.sum(w * w))
        conv.grads["w"] += 2.0 * coef * w
    if not np.isfinite(recon + l2):
        where = model.first_nonfinite_layer(batch) or "loss"
        raise TrainingError(f"non-finite loss (first bad layer: {where})")
    model.backward(dxhat)
    return LossParts(recon=recon, l2=l2)
