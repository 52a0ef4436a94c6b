"""Dataset loading and synthesis: IDX files, CIFAR-10 binaries, synthetic
image generators, stratified subsets, and epoch batching.

Images are float64 (N, H, W, C) scaled into [0, 1].  Gzipped IDX files
(the form MNIST is normally distributed in) are handled transparently.
"""

from __future__ import annotations

import gzip
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .pso import derive_rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
_CIFAR_RECORD = 3073  # 1 label byte + 32*32*3 pixel bytes

SYNTH_KINDS = ("constant", "gradient", "gaussian-blobs")


class IdxParseError(ValueError):
    pass


class CifarParseError(ValueError):
    pass


@dataclass
class DatasetHandle:
    images: np.ndarray  # (N, H, W, C) in [0, 1]
    labels: np.ndarray | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def n_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1 if self.labels.size else 0


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, path) -> tuple[int, np.ndarray]:
    if len(raw) < 4:
        raise IdxParseError(f"{path}: truncated at offset {len(raw)}: no magic")
    magic = int.from_bytes(raw[0:4], "big")
    if raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise IdxParseError(f"{path}: invalid magic 0x{magic:08X} at offset 0")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxParseError(f"{path}: truncated at offset {len(raw)}: "
                            f"expected {ndim} dimension sizes")
    dims = [int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim)]
    count = int(np.prod(dims)) if dims else 0
    if len(raw) != header + count:
        raise IdxParseError(f"{path}: truncated at offset {len(raw)}: "
                            f"expected {header + count} bytes total")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)
    return magic, data


def load_idx(path, labels_path=None) -> DatasetHandle:
    """Parse an IDX image file (and optional IDX label file) bit-exactly."""
    magic, data = _parse_idx(_read_bytes(path), path)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxParseError(f"{path}: magic 0x{magic:08X} is not an image file "
                            f"(expected 0x{IDX_IMAGE_MAGIC:08X})")
    images = data.astype(np.float64)[..., np.newaxis] / 255.0
    labels = None
    if labels_path is not None:
        lmagic, ldata = _parse_idx(_read_bytes(labels_path), labels_path)
        if lmagic != IDX_LABEL_MAGIC:
            raise IdxParseError(f"{labels_path}: magic 0x{lmagic:08X} is not a "
                                f"label file (expected 0x{IDX_LABEL_MAGIC:08X})")
        if ldata.shape[0] != images.shape[0]:
            raise IdxParseError(f"{labels_path}: {ldata.shape[0]} labels for "
                                f"{images.shape[0]} images")
        labels = ldata.astype(np.int64)
    return DatasetHandle(images=images, labels=labels, name=str(path))


def write_idx_images(path, handle: DatasetHandle) -> None:
    """Inverse of load_idx for image data (u8, magic 0x803)."""
    n, h, w, c = handle.images.shape
    if c != 1:
        raise IdxParseError("IDX image files hold single-channel data")
    pix = np.clip(np.rint(handle.images[..., 0] * 255.0), 0, 255).astype(np.uint8)
    header = IDX_IMAGE_MAGIC.to_bytes(4, "big") + n.to_bytes(4, "big") \
        + h.to_bytes(4, "big") + w.to_bytes(4, "big")
    Path(path).write_bytes(header + pix.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    header = IDX_LABEL_MAGIC.to_bytes(4, "big") + len(labels).to_bytes(4, "big")
    Path(path).write_bytes(header + np.asarray(labels, dtype=np.uint8).tobytes())


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find_idx_file(root: Path, stem: str) -> Path:
    for cand in (root / stem, root / (stem + ".gz")):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"{root}: no {stem}[.gz]")


def load_mnist(root, split: str = "train") -> DatasetHandle:
    """Load the conventional MNIST file pair from a directory."""
    root = Path(root)
    img_stem, lbl_stem = _MNIST_FILES[split]
    handle = load_idx(_find_idx_file(root, img_stem), _find_idx_file(root, lbl_stem))
    handle.name = f"mnist-{split}"
    return handle


def _parse_cifar_file(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) % _CIFAR_RECORD != 0:
        raise CifarParseError(f"{path}: length {len(raw)} is not a multiple "
                              f"of {_CIFAR_RECORD}")
    n = len(raw) // _CIFAR_RECORD
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(n, _CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    # channel-planar R,G,B planes of 32x32 row-major pixels
    images = rec[:, 1:].reshape(n, 3, 32, 32).transpose(0, 2, 3, 1)
    return images.astype(np.float64) / 255.0, labels


def load_cifar10_binary(path, split: str = "train") -> DatasetHandle:
    """Load CIFAR-10 binary batches from a directory (or one .bin file)."""
    path = Path(path)
    if path.is_file():
        files = [path]
    elif split == "train":
        files = [path / f"data_batch_{i}.bin" for i in range(1, 6)]
        files = [f for f in files if f.exists()]
        if not files:
            raise FileNotFoundError(f"{path}: no data_batch_*.bin files")
    else:
        files = [path / "test_batch.bin"]
    parts = [_parse_cifar_file(f) for f in files]
    images = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, 32, 32, 3))
    labels = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    return DatasetHandle(images=images, labels=labels, name=f"cifar10-{split}")


def synth_dataset(kind: str, n: int, h: int, w: int, c: int, seed: int,
                  n_classes: int = 0) -> DatasetHandle:
    """Deterministic synthetic images in [0, 1].

    With n_classes > 0, labels are attached; for 'gaussian-blobs' and
    'gradient' the image content depends on the label, so the classes are
    learnable.  'constant' images are all-zero regardless of label.
    """
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    rng = derive_rng(seed)
    labels = rng.integers(0, n_classes, size=n) if n_classes > 0 else None
    images = np.zeros((n, h, w, c))
    ys, xs = np.mgrid[0:h, 0:w]
    if kind == "gradient":
        for i in range(n):
            angle = (rng.uniform(0, 2 * np.pi) if labels is None
                     else 2 * np.pi * labels[i] / n_classes + rng.uniform(-0.2, 0.2))
            ramp = np.cos(angle) * xs / max(w - 1, 1) + np.sin(angle) * ys / max(h - 1, 1)
            lo, hi = ramp.min(), ramp.max()
            images[i, :, :, :] = ((ramp - lo) / (hi - lo + 1e-12))[:, :, None]
    elif kind == "gaussian-blobs":
        grid = max(1, int(np.ceil(np.sqrt(n_classes)))) if n_classes > 0 else 0
        for i in range(n):
            img = np.zeros((h, w))
            for _ in range(int(rng.integers(1, 4))):
                if labels is None:
                    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
                else:
                    k = int(labels[i])
                    cy = (k // grid + 0.5) * h / grid + rng.uniform(-1, 1)
                    cx = (k % grid + 0.5) * w / grid + rng.uniform(-1, 1)
                sigma = rng.uniform(1.0, max(h, w) / 4)
                amp = rng.uniform(0.4, 1.0)
                img += amp * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma ** 2))
            images[i, :, :, :] = np.clip(img, 0.0, 1.0)[:, :, None]
    return DatasetHandle(images=images, labels=labels, name=f"synth-{kind}",
                         meta={"seed": seed})


def subset(handle: DatasetHandle, n: int, seed: int) -> DatasetHandle:
    """Seeded subset; class-stratified when labels exist.

    Per-class counts are n // n_classes each, with the remainder going to
    the lowest class indices, so counts differ by at most one.
    """
    if n > handle.n:
        raise ValueError(f"subset size {n} exceeds dataset size {handle.n}")
    rng = derive_rng(seed)
    if handle.labels is None:
        idx = rng.permutation(handle.n)[:n]
    else:
        classes = np.unique(handle.labels)
        base, extra = divmod(n, len(classes))
        picks = []
        for rank, cls in enumerate(sorted(classes)):
            want = base + (1 if rank < extra else 0)
            pool = np.flatnonzero(handle.labels == cls)
            if want > pool.size:
                raise ValueError(f"class {cls}: need {want} samples, have {pool.size}")
            picks.append(rng.choice(pool, size=want, replace=False))
        idx = rng.permutation(np.concatenate(picks))
    return DatasetHandle(images=handle.images[idx],
                         labels=None if handle.labels is None else handle.labels[idx],
                         name=f"{handle.name}[{n}]", meta=dict(handle.meta))


def batches(handle: DatasetHandle, batch_size: int, seed: int,
            epoch: int = 0, shuffle: bool = True
            ) -> Iterator[tuple[np.ndarray, np.ndarray | None]]:
    """Yield (images, labels) batches; one fresh shuffle per epoch, short
    final batch kept."""
    order = (derive_rng(seed, epoch).permutation(handle.n) if shuffle
             else np.arange(handle.n))
    for start in range(0, handle.n, batch_size):
        idx = order[start:start + batch_size]
        labels = None if handle.labels is None else handle.labels[idx]
        yield handle.images[idx], labels


def downsample(handle: DatasetHandle, factor: int) -> DatasetHandle:
    """Block-mean downsampling by an integer factor (crops any remainder)."""
    if factor <= 1:
        return handle
    n, h, w, c = handle.images.shape
    h2, w2 = h // factor, w // factor
    img = handle.images[:, :h2 * factor, :w2 * factor, :]
    img = img.reshape(n, h2, factor, w2, factor, c).mean(axis=(2, 4))
    return DatasetHandle(images=img, labels=handle.labels,
                         name=f"{handle.name}/ds{factor}", meta=dict(handle.meta))


def dataset_root(explicit: str = "") -> Path:
    """Dataset directory: explicit path, else the FCAE_DATA_DIR env var."""
    if explicit:
        return Path(explicit)
    env = os.environ.get("FCAE_DATA_DIR", "")
    if env:
        return Path(env)
    raise FileNotFoundError("no dataset root: pass data.root or set FCAE_DATA_DIR")
