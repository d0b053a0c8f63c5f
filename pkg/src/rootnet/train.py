"""Epoch loop with seeded shuffling, streaming held-out evaluation, and
multi-trial orchestration. Fully deterministic for a fixed config and seed."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics, transfer
from . import tensor as T
from . import unet
from .data import SampleRecord, to_batch
from .tensor import OptState, Tensor
from .transfer import InitMode
from .unet import ArchSpec, ParamSet


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    arch: ArchSpec
    lr: float = 1e-4
    momentum: float = 0.8
    batch_size: int = 2
    epochs: int = 100
    pos_weight: float = 1.0
    seed: int = 0
    init_mode: InitMode = field(default_factory=InitMode)
    eval_every: int = 1  # epochs between held-out metric snapshots
    hist_bins: int = metrics.DEFAULT_BINS

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class Snapshot:
    epoch: int
    roc_auc: float
    pr_auc: float


@dataclass
class TrialReport:
    seed: int
    losses: list[float]  # mean batch loss per epoch
    snapshots: list[Snapshot]
    params: ParamSet

    @property
    def final_roc_auc(self) -> float:
        return self.snapshots[-1].roc_auc

    @property
    def final_pr_auc(self) -> float:
        return self.snapshots[-1].pr_auc


def evaluate(spec: ArchSpec, params: ParamSet, samples: list[SampleRecord], bins: int = metrics.DEFAULT_BINS):
    """Streaming evaluation: accumulate predicted probabilities against the
    ground-truth masks; returns the filled ScoreHistogram."""
    hist = metrics.ScoreHistogram(bins)
    for s in samples:
        imgs, masks = to_batch([s])
        probs = unet.forward(spec, params, Tensor(imgs)).data
        metrics.accumulate(hist, probs, masks)
    return hist


def train(config: TrainConfig, train_set: list[SampleRecord], eval_set: list[SampleRecord]) -> TrialReport:
    """Run the epoch loop and return the full trial report.

    Shuffles the training tiles each epoch with a seeded generator, keeps
    the last partial batch, and snapshots ROC/PR AUC on the eval set every
    `eval_every` epochs (plus the final epoch)."""
    if not train_set:
        raise ValueError("train set is empty")
    params, _ = transfer.init_model(config.arch, config.init_mode, config.seed)
    states = {name: OptState(lr=config.lr, momentum=config.momentum) for name in params.names()}
    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    snapshots: list[Snapshot] = []

    def snapshot(epoch):
        if not eval_set:
            return
        hist = evaluate(config.arch, params, eval_set, config.hist_bins)
        snapshots.append(
            Snapshot(epoch, metrics.roc_curve(hist).auc, metrics.pr_curve(hist).auc)
        )

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        epoch_losses = []
        for bi, start in enumerate(range(0, len(train_set), config.batch_size)):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            imgs, masks = to_batch(batch)
            logits = unet.forward_logits(config.arch, params, Tensor(imgs))
            loss = T.weighted_bce(logits, masks, config.pos_weight)
            if not np.isfinite(loss.data):
                raise DivergenceError(epoch, bi)
            loss.backward()
            for name, t in params.items():
                T.sgd_momentum_step(t, states[name])
            epoch_losses.append(float(loss.data))
        losses.append(float(np.mean(epoch_losses)))
        if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
            snapshot(epoch + 1)
    if config.epochs == 0:
        snapshot(0)
    return TrialReport(seed=config.seed, losses=losses, snapshots=snapshots, params=params)


def run_trials(config: TrainConfig, n_trials: int, train_set, eval_set, seeds=None):
    """n_trials independent runs differing only in seed.

    By default trial i uses config.seed + i; an explicit seed list
    overrides that (identical seeds give identical trials, std 0).
    Returns (reports, summary dict). With a single trial the std is 0 by
    convention and flagged as such."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if seeds is None:
        seeds = [config.seed + i for i in range(n_trials)]
    elif len(seeds) != n_trials:
        raise ValueError("seeds must have one entry per trial")
    reports = []
    for s in seeds:
        reports.append(train(replace(config, seed=s), train_set, eval_set))
    roc = [r.final_roc_auc for r in reports]
    pr = [r.final_pr_auc for r in reports]
    summary = metrics.summary_csv_row("model", roc, pr)
    summary["single_trial"] = n_trials == 1
    return reports, summary


def write_metrics_csv(path, reports: list[TrialReport]) -> None:
    """Per-epoch CSV: trial,epoch,loss,roc_auc,pr_auc (AUC cells empty on
    non-snapshot epochs)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trial", "epoch", "loss", "roc_auc", "pr_auc"])
        for ti, rep in enumerate(reports):
            snaps = {s.epoch: s for s in rep.snapshots}
            for ei, loss in enumerate(rep.losses, start=1):
                s = snaps.get(ei)
                w.writerow(
                    [
                        ti,
                        ei,
                        f"{loss:.6f}",
                        f"{s.roc_auc:.6f}" if s else "",
                        f"{s.pr_auc:.6f}" if s else "",
                    ]
                )
            if not rep.losses and rep.snapshots:  # 0-epoch run
                s = rep.snapshots[0]
                w.writerow([ti, 0, "", f"{s.roc_auc:.6f}", f"{s.pr_auc:.6f}"])
