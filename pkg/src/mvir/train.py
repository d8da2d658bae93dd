"""Training loop: seeded shuffling, summed-loss batches, one optimizer step
per batch, per-epoch validation, and best-validation-accuracy retention."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import DatasetManifest, FeatureRecord, batches, build_manifest, select_split
from .errors import UsageError
from .metrics import MetricsReport, compute_metrics
from .model import MViRParams, bce_loss, forward
from .optim import AdaBelief


@dataclass
class EpochStats:
    epoch: int
    train_loss: float  # mean per-record loss over the epoch
    val: MetricsReport


@dataclass
class TrainResult:
    params: MViRParams
    history: list[EpochStats] = field(default_factory=list)
    manifest: DatasetManifest | None = None
    best_epoch: int = 0


def evaluate(records: list[FeatureRecord], params: MViRParams,
             config: RunConfig) -> tuple[list[float], list[int]]:
    """Eval-mode fake probabilities and labels, in record order."""
    preds = [forward(rec, params, config, mode="eval").value for rec in records]
    return preds, [rec.label for rec in records]


def train(records: list[FeatureRecord], config: RunConfig,
          manifest: DatasetManifest | None = None) -> TrainResult:
    """Train on the manifest's train split, validating per epoch.

    Every random choice (init, shuffles, dropout masks) derives from
    config.seed, so a (seed, config, fixture) triple fully determines the
    result. The returned parameters are the best-validation-accuracy
    snapshot, ties broken toward the earlier epoch.
    """
    config.validate()
    if not records:
        raise UsageError("training on an empty dataset")
    if manifest is None:
        manifest = build_manifest(records, config.split, config.seed)
    train_records = select_split(records, manifest, "train")
    val_records = select_split(records, manifest, "val")
    if not train_records:
        raise UsageError("manifest assigns no records to the train split")
    if not val_records:
        raise UsageError("manifest assigns no records to the val split")

    r, c_img = train_records[0].image_features.shape
    c_txt = train_records[0].text_features.shape[1]
    init_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 101]))
    params = MViRParams.build(config, c_img, c_txt, init_rng)
    optimizer = AdaBelief(params.tensors, lr=config.learning_rate)

    best_acc = -1.0
    best_epoch = 0
    best_data = {name: t.data.copy() for name, t in params.tensors.items()}
    history: list[EpochStats] = []

    for epoch in range(config.epochs):
        dropout_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 202, epoch]))
        loss_total = 0.0
        for batch in batches(train_records, config.batch_size, config.seed, epoch):
            params.zero_grads()
            preds = [forward(rec, params, config, mode="train", rng=dropout_rng).fake_prob
                     for rec in batch]
            loss = bce_loss(preds, [rec.label for rec in batch])
            loss.backward()
            optimizer.step()
            loss_total += loss.item()
        preds, labels = evaluate(val_records, params, config)
        val = compute_metrics(preds, labels)
        history.append(EpochStats(epoch=epoch,
                                  train_loss=loss_total / len(train_records),
                                  val=val))
        if val.accuracy > best_acc:
            best_acc = val.accuracy
            best_epoch = epoch
            best_data = {name: t.data.copy() for name, t in params.tensors.items()}

    for name, t in params.tensors.items():
        t.data = best_data[name]
    params.zero_grads()
    return TrainResult(params=params, history=history, manifest=manifest,
                       best_epoch=best_epoch)
