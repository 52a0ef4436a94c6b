"""Model checkpoints: one .npz holding the architecture and all weights.

Self-describing: the decoded architecture travels as exact field matrices,
so a checkpoint reloads without the gene bounds that produced it.
"""

from __future__ import annotations

import numpy as np

from ..genome import DecodedArchitecture, DecodedConvLayer, DecodedPoolLayer
from .model import FcaeClassifier, FcaeModel

FORMAT_VERSION = 1


def _arch_matrices(arch: DecodedArchitecture):
    conv = np.array([[l.filter_w, l.filter_h, l.stride_w, l.stride_h,
                      l.feature_maps, l.l2] for l in arch.conv_layers])
    pool = np.array([[l.kernel_w, l.kernel_h, l.stride_w, l.stride_h]
                     for l in arch.pool_layers], dtype=float)
    return conv, pool


def _arch_from_matrices(conv: np.ndarray, pool: np.ndarray) -> DecodedArchitecture:
    convs = tuple(DecodedConvLayer(int(r[0]), int(r[1]), int(r[2]), int(r[3]),
                                   int(r[4]), float(r[5])) for r in conv)
    pools = tuple(DecodedPoolLayer(*(int(v) for v in r)) for r in pool)
    return DecodedArchitecture(convs, pools)


def save_checkpoint(path, fcae: FcaeModel, genome_text: str = "",
                    classifier: FcaeClassifier | None = None) -> None:
    conv, pool = _arch_matrices(fcae.arch)
    payload = {
        "version": np.array(FORMAT_VERSION),
        "genome_text": np.array(genome_text),
        "input_shape": np.array(fcae.input_shape),
        "arch_conv": conv,
        "arch_pool": pool,
    }
    for name, arr in fcae.param_arrays().items():
        payload[f"fcae/{name}"] = arr
    if classifier is not None:
        payload["clf_meta"] = np.array([classifier.n_classes, classifier.fc_units])
        payload["clf_dropout"] = np.array(classifier.dropout_rate)
        for name, arr in classifier.param_arrays().items():
            payload[f"clf/{name}"] = arr
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[FcaeModel, FcaeClassifier | None, str]:
    """Rebuild the saved models; returns (fcae, classifier-or-None, genome_text)."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        arch = _arch_from_matrices(z["arch_conv"], z["arch_pool"])
        input_shape = tuple(int(v) for v in z["input_shape"])
        genome_text = str(z["genome_text"])
        rng = np.random.default_rng(0)  # placeholder weights, overwritten below
        fcae = FcaeModel(arch, input_shape, rng)
        for name, arr in fcae.param_arrays().items():
            arr[...] = z[f"fcae/{name}"]
        classifier = None
        if "clf_meta" in z.files:
            n_classes, fc_units = (int(v) for v in z["clf_meta"])
            dropout = float(z["clf_dropout"])
            classifier = FcaeClassifier(fcae, n_classes, fc_units, dropout, rng)
            for name, arr in classifier.param_arrays().items():
                arr[...] = z[f"clf/{name}"]
    return fcae, classifier, genome_text
