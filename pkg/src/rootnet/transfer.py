"""Weight-initialization regimes and classifier-to-encoder weight mapping.

Four regimes mirror the transfer study: train from scratch, seed the
encoder from a classification network's conv stack, seed the encoder from
a segmentation checkpoint, or seed encoder and decoder from a
segmentation checkpoint. The 1x1 head is always freshly initialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from . import unet
from .tensor import OptState, Tensor
from .unet import ArchSpec, ParamSet

SCRATCH = "scratch"
ENCODER_FROM_CLASSIFIER = "encoder_from_classifier"
ENCODER_FROM_CHECKPOINT = "encoder_from_checkpoint"
ENCODER_DECODER_FROM_CHECKPOINT = "encoder_decoder_from_checkpoint"

MODES = (SCRATCH, ENCODER_FROM_CLASSIFIER, ENCODER_FROM_CHECKPOINT, ENCODER_DECODER_FROM_CHECKPOINT)


class TransferError(ValueError):
    """Source weights incompatible with the target architecture."""


@dataclass(frozen=True)
class InitMode:
    """One of the four initialization regimes, plus its source checkpoint
    path (None for scratch)."""

    mode: str = SCRATCH
    source: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise TransferError(f"unknown init mode {self.mode!r}; expected one of {MODES}")
        if self.mode != SCRATCH and self.source is None:
            raise TransferError(f"init mode {self.mode!r} requires a source checkpoint")


def _copy_from(target: ParamSet, source: ParamSet, names: list[str]) -> None:
    for name in names:
        if name not in source:
            raise TransferError(f"source checkpoint missing parameter {name!r}")
        src = source[name].data
        dst = target[name].data
        if src.shape != dst.shape:
            raise TransferError(f"parameter {name!r}: source shape {src.shape} != target shape {dst.shape}")
        np.copyto(dst, src.astype(dst.dtype))


def init_model(spec: ArchSpec, mode: InitMode, seed: int) -> tuple[ParamSet, dict]:
    """Build a ParamSet under the given regime.

    Returns (params, provenance) where provenance maps every parameter
    name to "copied" or "random"."""
    params = unet.build(spec, seed)
    provenance = {name: "random" for name in params.names()}
    if mode.mode == SCRATCH:
        return params, provenance
    if mode.mode == ENCODER_FROM_CLASSIFIER:
        copied = map_classifier_weights(mode.source, spec, params)
    else:
        _, source = ckpt.load(mode.source)
        parts = {"encoder"} if mode.mode == ENCODER_FROM_CHECKPOINT else {"encoder", "decoder"}
        copied = [n for n in params.names() if unet.partition(n) in parts]
        _copy_from(params, source, copied)
    for name in copied:
        provenance[name] = "copied"
    return params, provenance


# ---------------------------------------------------------------------------
# classifier surrogate


def classifier_param_shapes(spec: ArchSpec, n_classes: int) -> list[tuple[str, tuple]]:
    """Conv stack matching the target encoder schedule (two convs + pool per
    block), then global-average-pool and a linear head."""
    shapes: list[tuple[str, tuple]] = []
    cin = spec.in_channels
    for i, (c0, c1) in enumerate(spec.encoder_channels()):
        shapes.append((f"enc{i}.conv0.weight", (c0, cin, 3, 3)))
        shapes.append((f"enc{i}.conv0.bias", (c0,)))
        shapes.append((f"enc{i}.conv1.weight", (c1, c0, 3, 3)))
        shapes.append((f"enc{i}.conv1.bias", (c1,)))
        cin = c1
    shapes.append(("fc.weight", (n_classes, cin)))
    shapes.append(("fc.bias", (n_classes,)))
    return shapes


def build_classifier(spec: ArchSpec, n_classes: int, seed: int) -> ParamSet:
    return ParamSet(
        [
            (name, Tensor(unet.init_tensor(name, shape, seed), requires_grad=True))
            for name, shape in classifier_param_shapes(spec, n_classes)
        ]
    )


def classifier_logits(spec: ArchSpec, params: ParamSet, batch: Tensor) -> Tensor:
    x = batch
    for i in range(len(spec.encoder_channels())):
        x = T.relu(T.conv2d(x, params[f"enc{i}.conv0.weight"], params[f"enc{i}.conv0.bias"]))
        x = T.relu(T.conv2d(x, params[f"enc{i}.conv1.weight"], params[f"enc{i}.conv1.bias"]))
        if min(x.data.shape[2], x.data.shape[3]) >= 2:
            x, _ = T.maxpool2(x)
    pooled = T.global_avg_pool(x)
    return T.linear(pooled, params["fc.weight"], params["fc.bias"])


def save_classifier(params: ParamSet, spec: ArchSpec, path) -> None:
    ckpt.save(params, spec, path)


def map_classifier_weights(source_path, spec: ArchSpec, params: ParamSet) -> list[str]:
    """Copy the classifier's conv stack onto the encoder conv layers, in
    network order (weights and biases; bottleneck untouched).

    Returns the copied names. Raises TransferError with the full expected
    vs found shape listing on any schedule mismatch."""
    _, source = ckpt.load(source_path)
    expected = []
    cin = spec.in_channels
    for i, (c0, c1) in enumerate(spec.encoder_channels()):
        expected.append((f"enc{i}.conv0.weight", (c0, cin, 3, 3)))
        expected.append((f"enc{i}.conv0.bias", (c0,)))
        expected.append((f"enc{i}.conv1.weight", (c1, c0, 3, 3)))
        expected.append((f"enc{i}.conv1.bias", (c1,)))
        cin = c1
    problems = []
    for name, shape in expected:
        if name not in source:
            problems.append(f"  {name}: expected {shape}, missing from classifier")
        elif tuple(source[name].data.shape) != shape:
            problems.append(f"  {name}: expected {shape}, found {tuple(source[name].data.shape)}")
    if problems:
        raise TransferError(
            "classifier conv schedule does not match the target encoder:\n" + "\n".join(problems)
        )
    names = [name for name, _ in expected]
    _copy_from(params, source, names)
    return names


def train_surrogate_classifier(
    patches: np.ndarray,
    labels: np.ndarray,
    spec: ArchSpec,
    epochs: int,
    path,
    seed: int = 0,
    lr: float = 1e-2,
    momentum: float = 0.8,
    batch_size: int = 8,
) -> float:
    """Train the conv-stack classifier on labeled patches and write its
    checkpoint; returns final training accuracy.

    Desk-scale stand-in for large-scale classification pre-training: it
    exercises the identical conv-stack-to-encoder weight mapping."""
    n_classes = int(labels.max()) + 1
    params = build_classifier(spec, n_classes, seed)
    states = {name: OptState(lr=lr, momentum=momentum) for name in params.names()}
    rng = np.random.default_rng(seed)
    n = patches.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            logits = classifier_logits(spec, params, Tensor(patches[idx]))
            loss = T.softmax_cross_entropy(logits, labels[idx])
            if not np.isfinite(loss.data):
                raise FloatingPointError("surrogate classifier diverged (non-finite loss)")
            loss.backward()
            for name, t in params.items():
                T.sgd_momentum_step(t, states[name])
    correct = 0
    for start in range(0, n, 64):
        logits = classifier_logits(spec, params, Tensor(patches[start : start + 64]))
        correct += int((logits.data.argmax(axis=1) == labels[start : start + 64]).sum())
    save_classifier(params, spec, path)
    return correct / n
