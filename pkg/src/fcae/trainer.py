"""Deep training of a chosen architecture and the optional classifier head.

Deep training is the fitness-evaluation training path run with a larger
epoch budget; with equal budgets the two are bit-identical.  The classifier
wraps the trained encoder with FC(units) + ReLU + Dropout + FC(classes)
and fine-tunes everything end to end under softmax cross-entropy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetHandle, batches
from .errors import ConfigError, TrainingError
from .fitness import (build_model, degenerate_reason, mean_reconstruction_error,
                      run_training)
from .genome import ArchGenome, GeneBounds, decode
from .nn.model import FcaeClassifier, FcaeModel
from .nn.ops import softmax_cross_entropy
from .nn.optim import AdamState, adam_step
from .pso import derive_rng, derive_seed

log = logging.getLogger(__name__)

CLASSIFIER_NONE = "none"
CLASSIFIER_FC_HEAD = "fc_head"


@dataclass(frozen=True)
class DeepTrainConfig:
    epochs: int = 100
    batch_size: int = 32
    classifier: str = CLASSIFIER_NONE
    fc_units: int = 512
    dropout_rate: float = 0.5
    classifier_epochs: int = 20
    classifier_runs: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.classifier not in (CLASSIFIER_NONE, CLASSIFIER_FC_HEAD):
            raise ConfigError(f"unknown classifier {self.classifier!r}")


@dataclass
class DeepTrainResult:
    model: FcaeModel
    final_recon_error: float
    loss_curve: list[float]
    diverged: bool = False


@dataclass
class AccuracyReport:
    accuracies: list[float]
    seeds: list[int]
    epochs: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


def deep_train(genome: ArchGenome, data: DatasetHandle, cfg: DeepTrainConfig,
               bounds: GeneBounds) -> DeepTrainResult:
    """Long reconstruction training; on divergence, keeps the weights from
    the last epoch whose loss was finite."""
    cfg.validate()
    arch = decode(genome, bounds)
    reason = degenerate_reason(arch, data.image_shape)
    if reason:
        raise ConfigError(f"architecture degenerate for this dataset: {reason}")
    model = build_model(arch, data, cfg.seed)
    snapshot = {k: v.copy() for k, v in model.param_arrays().items()}
    curve: list[float] = []

    def keep(epoch, m, loss):
        curve.append(loss)
        if np.isfinite(loss):
            for k, arr in m.param_arrays().items():
                snapshot[k] = arr.copy()

    diverged = False
    try:
        run_training(model, data, cfg.epochs, cfg.batch_size, cfg.seed,
                     on_epoch=keep)
    except TrainingError as exc:
        log.warning("deep training diverged (%s); restoring last good epoch", exc)
        for k, arr in model.param_arrays().items():
            arr[...] = snapshot[k]
        diverged = True

    final = mean_reconstruction_error(model, data, cfg.batch_size)
    return DeepTrainResult(model=model, final_recon_error=final,
                           loss_curve=curve, diverged=diverged)


def evaluate_accuracy(clf: FcaeClassifier, data: DatasetHandle,
                      batch_size: int = 256) -> float:
    """Deterministic evaluation pass (dropout off)."""
    correct = 0
    for x, y in batches(data, batch_size, 0, shuffle=False):
        logits = clf.forward(x, train=False)
        correct += int(np.sum(logits.argmax(axis=1) == y))
    return correct / data.n


def _fit_classifier(clf: FcaeClassifier, train_data: DatasetHandle,
                    epochs: int, batch_size: int, seed: int) -> list[float]:
    params = clf.param_arrays()
    state = AdamState(params)
    shuffle_seed = derive_seed(seed, 3)
    curve = []
    for epoch in range(epochs):
        losses = []
        for x, y in batches(train_data, batch_size, shuffle_seed, epoch):
            clf.zero_grads()
            logits = clf.forward(x, train=True)
            loss, dlogits, _ = softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise TrainingError("non-finite classifier loss")
            clf.backward(dlogits)
            adam_step(params, clf.grad_arrays(), state)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return curve


def train_classifier(fcae: FcaeModel, train_data: DatasetHandle,
                     test_data: DatasetHandle, cfg: DeepTrainConfig
                     ) -> tuple[AccuracyReport, FcaeClassifier]:
    """Fine-tune encoder + head over several seeded runs; nothing frozen.

    Every run restarts from the trained encoder weights with a fresh head.
    Returns the accuracy report and the classifier from the last run.
    """
    cfg.validate()
    if cfg.classifier != CLASSIFIER_FC_HEAD:
        raise ConfigError("train_classifier requires classifier=fc_head")
    if train_data.labels is None or test_data.labels is None:
        raise ConfigError("labeled train and test data required")
    n_classes = max(train_data.n_classes(), test_data.n_classes())

    accuracies, seeds = [], []
    clf = None
    for run in range(cfg.classifier_runs):
        run_seed = derive_seed(cfg.seed, 4, run)
        clf = FcaeClassifier(fcae, n_classes, cfg.fc_units, cfg.dropout_rate,
                             derive_rng(run_seed))
        _fit_classifier(clf, train_data, cfg.classifier_epochs,
                        cfg.batch_size, run_seed)
        accuracies.append(evaluate_accuracy(clf, test_data))
        seeds.append(run_seed)
    return AccuracyReport(accuracies=accuracies, seeds=seeds,
                          epochs=cfg.classifier_epochs), clf


def format_metrics(result: DeepTrainResult,
                   report: AccuracyReport | None = None) -> str:
    """metrics.txt payload: key = value lines."""
    lines = [f"final_recon_error = {result.final_recon_error!r}",
             f"epochs = {len(result.loss_curve)}",
             f"diverged = {str(result.diverged).lower()}"]
    if report is not None:
        lines += [f"accuracy_mean = {report.mean!r}",
                  f"accuracy_std = {report.std!r}",
                  f"accuracy_runs = {len(report.accuracies)}",
                  f"classifier_epochs = {report.epochs}",
                  f"seeds = {','.join(str(s) for s in report.seeds)}"]
    return "\n".join(lines) + "\n"
