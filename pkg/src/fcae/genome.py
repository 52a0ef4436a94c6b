"""Variable-length encoding of convolutional auto-encoder architectures.

A genome encodes only the encoder half of the network: an ordered run of
convolutional genes followed by an ordered run of pooling genes (the two
kinds are never interleaved).  Gene fields are continuous reals so that
swarm velocity arithmetic stays ordinary vector math; integer semantics
appear only when a genome is decoded into a concrete architecture.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, DescriptorError

CONV_FIELDS = ("filter_w", "filter_h", "stride_w", "stride_h", "feature_maps", "l2")
POOL_FIELDS = ("kernel_w", "kernel_h", "stride_w", "stride_h")


@dataclass(frozen=True)
class ConvGene:
    """Continuous parameters of one convolutional layer."""

    filter_w: float
    filter_h: float
    stride_w: float
    stride_h: float
    feature_maps: float
    l2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.filter_w, self.filter_h, self.stride_w,
                         self.stride_h, self.feature_maps, self.l2], dtype=float)

    @classmethod
    def from_array(cls, a: Iterable[float]) -> "ConvGene":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class PoolGene:
    """Continuous parameters of one max-pooling layer."""

    kernel_w: float
    kernel_h: float
    stride_w: float
    stride_h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.kernel_w, self.kernel_h, self.stride_w,
                         self.stride_h], dtype=float)

    @classmethod
    def from_array(cls, a: Iterable[float]) -> "PoolGene":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class ArchGenome:
    """One candidate architecture: conv genes first, pool genes after.

    Immutable; position updates build a fresh genome from matrices.
    """

    conv_genes: tuple[ConvGene, ...]
    pool_genes: tuple[PoolGene, ...]

    def __post_init__(self):
        if len(self.conv_genes) < 1 or len(self.pool_genes) < 1:
            raise ConfigError("genome needs at least one conv gene and one pool gene")

    @property
    def n_c(self) -> int:
        return len(self.conv_genes)

    @property
    def n_p(self) -> int:
        return len(self.pool_genes)

    def conv_matrix(self) -> np.ndarray:
        """(n_c, 6) array of the conv part, rows ordered as in the genome."""
        return np.stack([g.as_array() for g in self.conv_genes])

    def pool_matrix(self) -> np.ndarray:
        """(n_p, 4) array of the pool part."""
        return np.stack([g.as_array() for g in self.pool_genes])

    @classmethod
    def from_matrices(cls, conv: np.ndarray, pool: np.ndarray) -> "ArchGenome":
        conv = np.atleast_2d(conv)
        pool = np.atleast_2d(pool)
        return cls(tuple(ConvGene.from_array(r) for r in conv),
                   tuple(PoolGene.from_array(r) for r in pool))


@dataclass(frozen=True)
class GeneBounds:
    """Sampling box for gene fields plus layer-count limits.

    Strides carry static bounds [1, max filter/kernel size] for sampling and
    velocity clamping; decoding additionally clamps each stride to the
    decoded size of its own filter/kernel.
    """

    filter_size: tuple[float, float] = (2.0, 5.0)
    conv_stride: tuple[float, float] = (1.0, 5.0)
    feature_maps: tuple[float, float] = (20.0, 100.0)
    l2: tuple[float, float] = (0.0001, 0.01)
    pool_kernel: tuple[float, float] = (2.0, 5.0)
    pool_stride: tuple[float, float] = (1.0, 5.0)
    max_conv_layers: int = 5
    max_pool_layers: int = 1
    square_mode: bool = True
    fix_conv_stride: bool = True

    def validate(self) -> None:
        for name in ("filter_size", "conv_stride", "feature_maps", "l2",
                     "pool_kernel", "pool_stride"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"bounds.{name}: lower {lo!r} must be < upper {hi!r}")
        if self.max_conv_layers < 1:
            raise ConfigError("max_conv_layers must be >= 1")
        if self.max_pool_layers < 1:
            raise ConfigError("max_pool_layers must be >= 1")

    def conv_bounds(self) -> np.ndarray:
        """(6, 2) lower/upper rows aligned with CONV_FIELDS."""
        return np.array([self.filter_size, self.filter_size,
                         self.conv_stride, self.conv_stride,
                         self.feature_maps, self.l2], dtype=float)

    def pool_bounds(self) -> np.ndarray:
        """(4, 2) lower/upper rows aligned with POOL_FIELDS."""
        return np.array([self.pool_kernel, self.pool_kernel,
                         self.pool_stride, self.pool_stride], dtype=float)

    def conv_spans(self) -> np.ndarray:
        b = self.conv_bounds()
        return b[:, 1] - b[:, 0]

    def pool_spans(self) -> np.ndarray:
        b = self.pool_bounds()
        return b[:, 1] - b[:, 0]


# ---------------------------------------------------------------------------
# decoded (concrete) architectures


@dataclass(frozen=True)
class DecodedConvLayer:
    filter_w: int
    filter_h: int
    stride_w: int
    stride_h: int
    feature_maps: int
    l2: float


@dataclass(frozen=True)
class DecodedPoolLayer:
    kernel_w: int
    kernel_h: int
    stride_w: int
    stride_h: int


@dataclass(frozen=True)
class DecodedArchitecture:
    conv_layers: tuple[DecodedConvLayer, ...]
    pool_layers: tuple[DecodedPoolLayer, ...]

    @property
    def n_c(self) -> int:
        return len(self.conv_layers)

    @property
    def n_p(self) -> int:
        return len(self.pool_layers)


def _round_half_up(x: float) -> int:
    # round-to-nearest with .5 going up; avoids banker's-rounding surprises
    return int(np.floor(x + 0.5))


def _clamp(v, lo, hi):
    return min(max(v, lo), hi)


def init_genome(bounds: GeneBounds, rng: np.random.Generator) -> ArchGenome:
    """Draw a random genome: uniform layer counts, uniform continuous fields."""
    bounds.validate()
    n_c = int(rng.integers(1, bounds.max_conv_layers + 1))
    n_p = int(rng.integers(1, bounds.max_pool_layers + 1))
    cb = bounds.conv_bounds()
    pb = bounds.pool_bounds()
    conv = rng.uniform(cb[:, 0], cb[:, 1], size=(n_c, 6))
    pool = rng.uniform(pb[:, 0], pb[:, 1], size=(n_p, 4))
    return ArchGenome.from_matrices(conv, pool)


def decode(genome: ArchGenome, bounds: GeneBounds) -> DecodedArchitecture:
    """Round-then-clamp a continuous genome into a concrete architecture.

    Total and deterministic: any real-valued genome decodes to layers that
    satisfy every field bound.  The l2 coefficient is clamped but kept real.
    """
    conv_layers = []
    for g in genome.conv_genes:
        fw = _clamp(_round_half_up(g.filter_w), int(bounds.filter_size[0]),
                    int(bounds.filter_size[1]))
        if bounds.square_mode:
            fh = fw
        else:
            fh = _clamp(_round_half_up(g.filter_h), int(bounds.filter_size[0]),
                        int(bounds.filter_size[1]))
        if bounds.fix_conv_stride:
            sw = sh = 1
        else:
            sw = _clamp(_round_half_up(g.stride_w), 1, min(fw, fh))
            sh = sw if bounds.square_mode else _clamp(_round_half_up(g.stride_h), 1, min(fw, fh))
        maps = _clamp(_round_half_up(g.feature_maps), int(bounds.feature_maps[0]),
                      int(bounds.feature_maps[1]))
        l2 = _clamp(float(g.l2), bounds.l2[0], bounds.l2[1])
        conv_layers.append(DecodedConvLayer(fw, fh, sw, sh, maps, l2))

    pool_layers = []
    for g in genome.pool_genes:
        kw = _clamp(_round_half_up(g.kernel_w), int(bounds.pool_kernel[0]),
                    int(bounds.pool_kernel[1]))
        kh = kw if bounds.square_mode else _clamp(_round_half_up(g.kernel_h),
                                                  int(bounds.pool_kernel[0]),
                                                  int(bounds.pool_kernel[1]))
        sw = _clamp(_round_half_up(g.stride_w), 1, min(kw, kh))
        sh = sw if bounds.square_mode else _clamp(_round_half_up(g.stride_h), 1, min(kw, kh))
        pool_layers.append(DecodedPoolLayer(kw, kh, sw, sh))

    return DecodedArchitecture(tuple(conv_layers), tuple(pool_layers))


def encode(arch: DecodedArchitecture) -> ArchGenome:
    """Re-embed a decoded architecture as a real-valued genome."""
    conv = [ConvGene(float(l.filter_w), float(l.filter_h), float(l.stride_w),
                     float(l.stride_h), float(l.feature_maps), l.l2)
            for l in arch.conv_layers]
    pool = [PoolGene(float(l.kernel_w), float(l.kernel_h), float(l.stride_w),
                     float(l.stride_h)) for l in arch.pool_layers]
    return ArchGenome(tuple(conv), tuple(pool))


# ---------------------------------------------------------------------------
# descriptor text


def serialize(genome: ArchGenome) -> str:
    """Render a genome as key=value records, one layer per line, in order.

    Floats use repr, so deserialize(serialize(g)) reproduces g bit-exactly.
    """
    lines = []
    for g in genome.conv_genes:
        vals = [repr(float(v)) for v in g.as_array()]
        pairs = " ".join(f"{k}={v}" for k, v in zip(CONV_FIELDS, vals))
        lines.append(f"type=conv {pairs}")
    for g in genome.pool_genes:
        vals = [repr(float(v)) for v in g.as_array()]
        pairs = " ".join(f"{k}={v}" for k, v in zip(POOL_FIELDS, vals))
        lines.append(f"type=pool {pairs}")
    return "\n".join(lines) + "\n"


def _parse_record(line: str, lineno: int) -> tuple[str, dict]:
    fields = {}
    for token in line.split():
        if "=" not in token:
            raise DescriptorError(f"line {lineno}: token {token!r} is not key=value")
        key, _, raw = token.partition("=")
        if key in fields:
            raise DescriptorError(f"line {lineno}: duplicate field {key!r}")
        fields[key] = raw
    kind = fields.pop("type", None)
    if kind is None:
        raise DescriptorError(f"line {lineno}: missing field 'type'")
    if kind not in ("conv", "pool"):
        raise DescriptorError(f"line {lineno}: field 'type' has unknown value {kind!r}")
    expected = CONV_FIELDS if kind == "conv" else POOL_FIELDS
    for name in expected:
        if name not in fields:
            raise DescriptorError(f"line {lineno}: missing field {name!r}")
    for name in fields:
        if name not in expected:
            raise DescriptorError(f"line {lineno}: unexpected field {name!r}")
    values = {}
    for name in expected:
        try:
            values[name] = float(fields[name])
        except ValueError:
            raise DescriptorError(
                f"line {lineno}: field {name!r} is not a number: {fields[name]!r}") from None
    return kind, values


def deserialize(text: str) -> ArchGenome:
    """Parse descriptor text back into a genome; strict about layout."""
    conv, pool = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        kind, values = _parse_record(line, lineno)
        if kind == "conv":
            if pool:
                raise DescriptorError(
                    f"line {lineno}: field 'type'=conv after a pool layer (layers must not interleave)")
            conv.append(ConvGene(**values))
        else:
            pool.append(PoolGene(**values))
    if not conv:
        raise DescriptorError("descriptor has no conv layer (field 'type'=conv required)")
    if not pool:
        raise DescriptorError("descriptor has no pool layer (field 'type'=pool required)")
    return ArchGenome(tuple(conv), tuple(pool))
