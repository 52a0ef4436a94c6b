"""Fitness evaluation: short reconstruction training (the real objective)
and a cheap architecture-distance surrogate for exercising the swarm.

Training minimizes reconstruction error plus the per-layer weight decay,
but the reported fitness is the mean reconstruction error alone, measured
over all training batches with weights frozen, so that the particle's
quality reflects the architecture rather than its weight count.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetHandle, batches
from .errors import TrainingError
from .genome import ArchGenome, DecodedArchitecture, GeneBounds, decode
from .nn.model import FcaeModel, forward_backward
from .nn.optim import AdamState, adam_step
from .pso import derive_rng

log = logging.getLogger(__name__)


@dataclass
class FitnessReport:
    fitness: float
    train_loss_curve: list[float] = field(default_factory=list)
    wall_ms: float = 0.0
    param_count: int = 0
    diagnostic: str = ""


def degenerate_reason(arch: DecodedArchitecture,
                      input_shape: tuple[int, int, int]) -> str:
    """Non-empty string when the architecture collapses a spatial dim."""
    h, w, c = input_shape
    if h < 1 or w < 1 or c < 1:
        return f"input shape {input_shape} has a non-positive dimension"
    for i, layer in enumerate(arch.conv_layers):
        h, w = -(-h // layer.stride_h), -(-w // layer.stride_w)
        if h < 1 or w < 1:
            return f"conv layer {i} collapses spatial dims to {h}x{w}"
    for j, layer in enumerate(arch.pool_layers):
        h, w = -(-h // layer.stride_h), -(-w // layer.stride_w)
        if h < 1 or w < 1:
            return f"pool layer {j} collapses spatial dims to {h}x{w}"
    return ""


def build_model(arch: DecodedArchitecture, data: DatasetHandle,
                seed: int) -> FcaeModel:
    return FcaeModel(arch, data.image_shape, derive_rng(seed, 0))


def run_training(model: FcaeModel, data: DatasetHandle, epochs: int,
                 batch_size: int, seed: int, on_epoch=None) -> list[float]:
    """Adam training loop shared by fitness evaluation and deep training;
    returns the per-epoch mean training loss (reconstruction + decay)."""
    params = model.param_arrays()
    state = AdamState(params)
    # batch shuffling gets its own stream, distinct from weight init
    shuffle_seed = int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])
    curve = []
    for epoch in range(epochs):
        losses = []
        for x, _ in batches(data, batch_size, shuffle_seed, epoch):
            parts = forward_backward(model, x, train=True)
            adam_step(params, model.grad_arrays(), state)
            losses.append(parts.total)
        curve.append(float(np.mean(losses)))
        if on_epoch is not None:
            on_epoch(epoch, model, curve[-1])
    return curve


def train_reconstruction(arch: DecodedArchitecture, data: DatasetHandle,
                         epochs: int, batch_size: int, seed: int
                         ) -> tuple[FcaeModel, list[float]]:
    """Train a fresh model for a fixed number of epochs."""
    model = build_model(arch, data, seed)
    return model, run_training(model, data, epochs, batch_size, seed)


def mean_reconstruction_error(model: FcaeModel, data: DatasetHandle,
                              batch_size: int) -> float:
    """Frozen-weight fitness: mean over sequential training batches of the
    per-batch reconstruction error.  No training, no stochastic layers."""
    errors = []
    for x, _ in batches(data, batch_size, 0, shuffle=False):
        xhat = model.forward(x, train=False)
        diff = xhat - x
        errors.append(float(np.sum(diff * diff) / x.shape[0]))
    return float(np.mean(errors))


@dataclass
class CaeEvaluator:
    """Trains the decoded architecture briefly and scores reconstruction."""

    data: DatasetHandle
    bounds: GeneBounds
    train_epochs: int = 5
    batch_size: int = 32

    def report(self, genome: ArchGenome, seed: int) -> FitnessReport:
        start = time.perf_counter()
        arch = decode(genome, self.bounds)
        reason = degenerate_reason(arch, self.data.image_shape)
        if reason:
            return FitnessReport(fitness=np.inf, diagnostic=reason,
                                 wall_ms=(time.perf_counter() - start) * 1e3)
        try:
            model, curve = train_reconstruction(arch, self.data, self.train_epochs,
                                                self.batch_size, seed)
            fitness = mean_reconstruction_error(model, self.data, self.batch_size)
        except TrainingError as exc:
            log.warning("training failed (%s); fitness := +inf", exc)
            return FitnessReport(fitness=np.inf, diagnostic=str(exc),
                                 wall_ms=(time.perf_counter() - start) * 1e3)
        return FitnessReport(fitness=fitness, train_loss_curve=curve,
                             wall_ms=(time.perf_counter() - start) * 1e3,
                             param_count=model.param_count)

    def __call__(self, genome: ArchGenome, seed: int) -> float:
        return self.report(genome, seed).fitness


def _decoded_conv_fields(arch: DecodedArchitecture) -> np.ndarray:
    return np.array([[l.filter_w, l.filter_h, l.stride_w, l.stride_h,
                      l.feature_maps] for l in arch.conv_layers], dtype=float)


def _decoded_pool_fields(arch: DecodedArchitecture) -> np.ndarray:
    return np.array([[l.kernel_w, l.kernel_h, l.stride_w, l.stride_h]
                     for l in arch.pool_layers], dtype=float)


def _resize(mat: np.ndarray, n: int) -> np.ndarray:
    if mat.shape[0] >= n:
        return mat[:n]
    return np.vstack([mat, np.zeros((n - mat.shape[0], mat.shape[1]))])


def surrogate_distance(genome: ArchGenome, target: ArchGenome,
                       bounds: GeneBounds) -> float:
    """Distance between decoded architectures: one unit per layer-count
    difference plus span-normalized L1 over aligned integer gene fields.

    The target's gene matrices are truncated or zero-padded to the
    candidate's lengths before the field comparison.  The continuous decay
    coefficient is excluded so the distance is zero exactly when the two
    decoded layer geometries are identical.
    """
    a = decode(genome, bounds)
    b = decode(target, bounds)
    dist = float(abs(a.n_c - b.n_c) + abs(a.n_p - b.n_p))

    conv_spans = bounds.conv_spans()[:5]
    ac = _decoded_conv_fields(a)
    bc = _resize(_decoded_conv_fields(b), a.n_c)
    dist += float(np.sum(np.abs(ac - bc) / conv_spans))

    pool_spans = bounds.pool_spans()
    ap = _decoded_pool_fields(a)
    bp = _resize(_decoded_pool_fields(b), a.n_p)
    dist += float(np.sum(np.abs(ap - bp) / pool_spans))
    return dist


@dataclass
class SurrogateEvaluator:
    """Architecture-distance fitness with a known optimum at `target`."""

    target: ArchGenome
    bounds: GeneBounds

    def __call__(self, genome: ArchGenome, seed: int = 0) -> float:
        return surrogate_distance(genome, self.target, self.bounds)
