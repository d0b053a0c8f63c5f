"""Declarative U-Net construction: channel schedules, deterministic
parameter naming, He initialization, and a forward pass that zero-pads any
input up to a multiple of 2^depth and crops the output back.

Two variants: a generic depth-D net with doubling channel widths, and a
VGG13 down path (10 conv layers, 5 pools) for classifier weight transfer.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ConfigError(ValueError):
    """Invalid architecture description."""


class NameFormatError(ValueError):
    """Parameter name does not parse under the naming grammar."""


VGG13_ENCODER_CHANNELS = [(64, 64), (128, 128), (256, 256), (512, 512), (512, 512)]

_NAME_RE = re.compile(
    r"^(enc(?P<enc>\d+)\.conv(?P<ej>\d+)"
    r"|bottleneck\.conv(?P<bj>\d+)"
    r"|dec(?P<dec>\d+)\.(up|conv(?P<dj>\d+))"
    r"|head)\.(weight|bias)$"
)


@dataclass(frozen=True)
class ArchSpec:
    """U-Net shape description from which parameters and graph derive."""

    variant: str = "generic"  # "generic" | "vgg13"
    depth: int = 4
    base_width: int = 64
    in_channels: int = 3
    out_channels: int = 1

    def __post_init__(self):
        if self.variant not in ("generic", "vgg13"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.depth < 2:
            raise ConfigError(f"depth must be >= 2, got {self.depth}")
        if self.variant == "vgg13" and self.depth != 5:
            raise ConfigError("vgg13 variant has a fixed depth of 5")
        if self.base_width < 1:
            raise ConfigError("base_width must be >= 1")

    def encoder_channels(self) -> list[tuple[int, int]]:
        """Output channels of (conv0, conv1) for each encoder block."""
        if self.variant == "vgg13":
            return list(VGG13_ENCODER_CHANNELS)
        return [(self.base_width * 2**i,) * 2 for i in range(self.depth)]

    def bottleneck_channels(self) -> int:
        if self.variant == "vgg13":
            return 512
        return self.base_width * 2**self.depth

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "depth": self.depth,
            "base_width": self.base_width,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(**{k: d[k] for k in ("variant", "depth", "base_width", "in_channels", "out_channels")})


class ParamSet:
    """Ordered, named parameter tensors with dict-style access."""

    def __init__(self, items: list[tuple[str, Tensor]]):
        self._names = [n for n, _ in items]
        self._by_name = dict(items)
        if len(self._by_name) != len(self._names):
            raise ConfigError("duplicate parameter names")

    def names(self) -> list[str]:
        return list(self._names)

    def items(self):
        return [(n, self._by_name[n]) for n in self._names]

    def tensors(self) -> list[Tensor]:
        return [self._by_name[n] for n in self._names]

    def __getitem__(self, name: str) -> Tensor:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self._names)

    def copy(self) -> "ParamSet":
        return ParamSet([(n, Tensor(t.data.copy(), requires_grad=t.requires_grad)) for n, t in self.items()])


def partition(name: str) -> str:
    """Assign a parameter name to one of {encoder, decoder, head}."""
    m = _NAME_RE.match(name)
    if m is None:
        raise NameFormatError(f"unparseable parameter name: {name!r}")
    if name.startswith(("enc", "bottleneck")):
        return "encoder"
    if name.startswith("dec"):
        return "decoder"
    return "head"


def _layer_shapes(spec: ArchSpec) -> list[tuple[str, tuple]]:
    """Deterministic (name, shape) schedule for every trainable tensor.

    Decoder blocks are indexed in application order: dec0 runs right after
    the bottleneck (deepest resolution), dec{depth-1} produces full
    resolution.
    """
    enc = spec.encoder_channels()
    shapes: list[tuple[str, tuple]] = []
    cin = spec.in_channels
    for i, (c0, c1) in enumerate(enc):
        shapes.append((f"enc{i}.conv0.weight", (c0, cin, 3, 3)))
        shapes.append((f"enc{i}.conv0.bias", (c0,)))
        shapes.append((f"enc{i}.conv1.weight", (c1, c0, 3, 3)))
        shapes.append((f"enc{i}.conv1.bias", (c1,)))
        cin = c1
    cb = spec.bottleneck_channels()
    shapes.append(("bottleneck.conv0.weight", (cb, cin, 3, 3)))
    shapes.append(("bottleneck.conv0.bias", (cb,)))
    shapes.append(("bottleneck.conv1.weight", (cb, cb, 3, 3)))
    shapes.append(("bottleneck.conv1.bias", (cb,)))
    cur = cb
    for j in range(spec.depth):
        skip = enc[spec.depth - 1 - j][1]
        shapes.append((f"dec{j}.up.weight", (cur, skip, 2, 2)))
        shapes.append((f"dec{j}.up.bias", (skip,)))
        shapes.append((f"dec{j}.conv0.weight", (skip, 2 * skip, 3, 3)))
        shapes.append((f"dec{j}.conv0.bias", (skip,)))
        shapes.append((f"dec{j}.conv1.weight", (skip, skip, 3, 3)))
        shapes.append((f"dec{j}.conv1.bias", (skip,)))
        cur = skip
    shapes.append(("head.weight", (spec.out_channels, cur, 1, 1)))
    shapes.append(("head.bias", (spec.out_channels,)))
    return shapes


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # per-name stream so weight surgery on one partition never perturbs
    # the initialization of another
    return np.random.default_rng(np.random.SeedSequence((seed, zlib.crc32(name.encode()))))


def init_tensor(name: str, shape: tuple, seed: int, dtype=np.float32) -> np.ndarray:
    """He fan-in normal for weights, zeros for biases; deterministic per
    (seed, name)."""
    if name.endswith("bias"):
        return np.zeros(shape, dtype=dtype)
    if len(shape) == 4 and shape[2] == 2:  # transpose conv: (Cin,Cout,kh,kw)
        fan_in = shape[0] * shape[2] * shape[3]
    elif len(shape) == 4:
        fan_in = shape[1] * shape[2] * shape[3]
    else:  # linear (K, F)
        fan_in = shape[1]
    std = np.sqrt(2.0 / fan_in)
    return (_param_rng(seed, name).standard_normal(shape) * std).astype(dtype)


def build(spec: ArchSpec, seed: int, dtype=np.float32) -> ParamSet:
    """Allocate and He-initialize all parameters of the network."""
    return ParamSet(
        [
            (name, Tensor(init_tensor(name, shape, seed, dtype), requires_grad=True))
            for name, shape in _layer_shapes(spec)
        ]
    )


def count_params(spec: ArchSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in _layer_shapes(spec))


@dataclass(frozen=True)
class PadRecord:
    """Zero padding applied to make spatial dims divisible by 2^depth."""

    height: int
    width: int
    padded_height: int
    padded_width: int

    @property
    def pad_bottom(self) -> int:
        return self.padded_height - self.height

    @property
    def pad_right(self) -> int:
        return self.padded_width - self.width


def pad_record(h: int, w: int, depth: int) -> PadRecord:
    m = 2**depth
    return PadRecord(h, w, -(-h // m) * m, -(-w // m) * m)


def pad_input(x: np.ndarray, rec: PadRecord) -> np.ndarray:
    if rec.pad_bottom == 0 and rec.pad_right == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (0, rec.pad_bottom), (0, rec.pad_right)))


def crop_output(x: np.ndarray, rec: PadRecord) -> np.ndarray:
    return x[:, :, : rec.height, : rec.width]


def _double_conv(x: Tensor, params: ParamSet, prefix: str) -> Tensor:
    x = T.relu(T.conv2d(x, params[f"{prefix}.conv0.weight"], params[f"{prefix}.conv0.bias"]))
    return T.relu(T.conv2d(x, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"]))


def forward_logits(spec: ArchSpec, params: ParamSet, batch: Tensor) -> Tensor:
    """Run the network up to (and including) the 1x1 head; no sigmoid.

    Pads the input so every pooling halves cleanly, and crops the result
    back to the original extent, so any input size flows through.
    """
    n, c, h, w = batch.data.shape
    if c != spec.in_channels:
        raise T.ShapeError(f"expected {spec.in_channels} input channels, got {c}")
    rec = pad_record(h, w, spec.depth)
    x = Tensor(pad_input(batch.data, rec), requires_grad=batch.requires_grad)
    if batch.requires_grad:
        x._parents = (batch,)
        x._backward = lambda g: batch._accum(g[:, :, :h, :w])
    skips = []
    for i in range(spec.depth):
        x = _double_conv(x, params, f"enc{i}")
        skips.append(x)
        x, _ = T.maxpool2(x)
    x = _double_conv(x, params, "bottleneck")
    for j in range(spec.depth):
        skip = skips[spec.depth - 1 - j]
        x = T.transpose_conv2(x, params[f"dec{j}.up.weight"], params[f"dec{j}.up.bias"])
        assert x.data.shape[2:] == skip.data.shape[2:], "skip misalignment (padding bug)"
        x = concat = T.concat_channels(skip, x)
        x = _double_conv(concat, params, f"dec{j}")
    x = T.conv1x1(x, params["head.weight"], params["head.bias"])
    out = Tensor(crop_output(x.data, rec), requires_grad=x.requires_grad)
    if x.requires_grad:
        out._parents = (x,)

        def _crop_backward(g, inner=x, rec=rec):
            gp = np.zeros_like(inner.data)
            gp[:, :, : rec.height, : rec.width] = g
            inner._accum(gp)

        out._backward = _crop_backward
    return out


def forward(spec: ArchSpec, params: ParamSet, batch: Tensor) -> Tensor:
    """Full forward pass: probabilities in (0,1), same H and W as input."""
    return T.sigmoid(forward_logits(spec, params, batch))
