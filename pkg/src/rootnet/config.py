"""Declarative run configuration: a flat INI-style file with sections,
validated fully before any compute starts (fail-fast contract)."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields

from .synth import GenParams
from .transfer import MODES, SCRATCH
from .unet import ArchSpec


class ConfigFileError(ValueError):
    """Malformed or inconsistent run configuration."""


_ARCH_KEYS = {"variant": str, "depth": int, "base_width": int, "in_channels": int, "out_channels": int}
_TRAIN_KEYS = {
    "lr": float,
    "momentum": float,
    "batch_size": int,
    "epochs": int,
    "pos_weight": float,
    "eval_every": int,
    "train_frac": float,
    "tile_rows": int,
    "tile_cols": int,
}
_GEN_FLOAT = {
    "diameter_wobble",
    "curvature",
    "soil_contrast",
    "soil_smoothness",
    "root_contrast",
    "occlusion_prob",
    "bubble_density",
    "target_density",
}


@dataclass
class RunConfig:
    name: str = "run"
    seed: int = 0
    trials: int = 1
    arch: ArchSpec = field(default_factory=lambda: ArchSpec(depth=4, base_width=8))
    lr: float = 1e-4
    momentum: float = 0.8
    batch_size: int = 2
    epochs: int = 100
    pos_weight: float = 1.0
    eval_every: int = 1
    train_frac: float = 0.9
    tile_rows: int = 1
    tile_cols: int = 1
    init_mode: str = SCRATCH
    init_source: str | None = None
    dataset: str | None = None
    gen: GenParams | None = None
    gen_count: int = 28
    gen_pair: bool = False
    bins: int = 65536
    threshold: float = 0.4
    fpr_target: float = 0.01
    svg: bool = False
    out_dir: str | None = None
    # transfer-experiment extras
    source_dataset: str | None = None
    source_checkpoint: str | None = None
    classifier_checkpoint: str | None = None
    source_epochs: int = 20
    lr_scratch: float = 5e-3
    lr_pretrained: float = 1e-3
    regimes: tuple[str, ...] = ()
    raw_text: str = ""


def _coerce(section: str, key: str, raw: str, typ):
    try:
        if typ is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigFileError(f"[{section}] {key} = {raw!r}: expected {typ.__name__}") from None


def _tuple2(section, key, raw, typ):
    parts = [p.strip() for p in raw.replace(",", " ").split()]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ConfigFileError(f"[{section}] {key} = {raw!r}: expected one or two values")
    return tuple(_coerce(section, key, p, typ) for p in parts)


def _tuple3(section, key, raw):
    parts = [p.strip() for p in raw.replace(",", " ").split()]
    if len(parts) != 3:
        raise ConfigFileError(f"[{section}] {key} = {raw!r}: expected three values")
    return tuple(_coerce(section, key, p, float) for p in parts)


def _parse_gen(cp: configparser.ConfigParser) -> tuple[GenParams, int, bool]:
    kwargs = {}
    count = 28
    pair = False
    gp_fields = {f.name for f in fields(GenParams)}
    for key, raw in cp.items("gen"):
        if key == "count":
            count = _coerce("gen", key, raw, int)
        elif key == "pair":
            pair = _coerce("gen", key, raw, bool)
        elif key in ("height", "width", "seed"):
            kwargs[key] = _coerce("gen", key, raw, int)
        elif key in ("root_count",):
            kwargs[key] = _tuple2("gen", key, raw, int)
        elif key == "diameter":
            kwargs[key] = _tuple2("gen", key, raw, float)
        elif key in ("soil_rgb", "root_rgb"):
            kwargs[key] = _tuple3("gen", key, raw)
        elif key in _GEN_FLOAT:
            kwargs[key] = _coerce("gen", key, raw, float)
        elif key in gp_fields:
            kwargs[key] = _coerce("gen", key, raw, float)
        else:
            raise ConfigFileError(f"[gen] unknown key {key!r}")
    try:
        return GenParams(**kwargs), count, pair
    except ValueError as e:
        raise ConfigFileError(f"[gen] {e}") from None


def load_config(path) -> RunConfig:
    """Parse and validate a run configuration file."""
    if not os.path.exists(path):
        raise ConfigFileError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    with open(path) as f:
        text = f.read()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigFileError(f"{path}: {e}") from None
    cfg = RunConfig(raw_text=text)

    known_sections = {"experiment", "arch", "train", "init", "data", "gen", "metrics", "transfer"}
    unknown = set(cp.sections()) - known_sections
    if unknown:
        raise ConfigFileError(f"unknown config sections: {sorted(unknown)}")

    if cp.has_section("experiment"):
        for key, raw in cp.items("experiment"):
            if key == "name":
                cfg.name = raw
            elif key == "seed":
                cfg.seed = _coerce("experiment", key, raw, int)
            elif key == "trials":
                cfg.trials = _coerce("experiment", key, raw, int)
            elif key == "out_dir":
                cfg.out_dir = raw
            else:
                raise ConfigFileError(f"[experiment] unknown key {key!r}")
        if cfg.trials < 1:
            raise ConfigFileError("[experiment] trials must be >= 1")

    if cp.has_section("arch"):
        arch_kwargs = {}
        for key, raw in cp.items("arch"):
            if key not in _ARCH_KEYS:
                raise ConfigFileError(f"[arch] unknown key {key!r}")
            arch_kwargs[key] = _coerce("arch", key, raw, _ARCH_KEYS[key])
        try:
            cfg.arch = ArchSpec(**arch_kwargs)
        except ValueError as e:
            raise ConfigFileError(f"[arch] {e}") from None

    if cp.has_section("train"):
        for key, raw in cp.items("train"):
            if key not in _TRAIN_KEYS:
                raise ConfigFileError(f"[train] unknown key {key!r}")
            setattr(cfg, key, _coerce("train", key, raw, _TRAIN_KEYS[key]))
        if cfg.batch_size < 1 or cfg.epochs < 0:
            raise ConfigFileError("[train] batch_size must be >= 1 and epochs >= 0")
        if not 0.0 < cfg.train_frac <= 1.0:
            raise ConfigFileError("[train] train_frac must be in (0, 1]")

    if cp.has_section("init"):
        for key, raw in cp.items("init"):
            if key == "mode":
                if raw not in MODES:
                    raise ConfigFileError(f"[init] unknown mode {raw!r}; expected one of {MODES}")
                cfg.init_mode = raw
            elif key == "source":
                cfg.init_source = raw
            else:
                raise ConfigFileError(f"[init] unknown key {key!r}")
        if cfg.init_mode != SCRATCH:
            if cfg.init_source is None:
                raise ConfigFileError(f"[init] mode {cfg.init_mode!r} requires source =")
            if not os.path.exists(cfg.init_source):
                raise ConfigFileError(f"[init] source checkpoint not found: {cfg.init_source}")

    if cp.has_section("data"):
        for key, raw in cp.items("data"):
            if key == "dataset":
                cfg.dataset = raw
            elif key == "source_dataset":
                cfg.source_dataset = raw
            else:
                raise ConfigFileError(f"[data] unknown key {key!r}")
        if cfg.dataset is not None and not os.path.isdir(cfg.dataset):
            raise ConfigFileError(f"[data] dataset directory not found: {cfg.dataset}")
        if cfg.source_dataset is not None and not os.path.isdir(cfg.source_dataset):
            raise ConfigFileError(f"[data] source dataset directory not found: {cfg.source_dataset}")

    if cp.has_section("gen"):
        cfg.gen, cfg.gen_count, cfg.gen_pair = _parse_gen(cp)

    if cfg.dataset is not None and cfg.gen is not None:
        raise ConfigFileError("exactly one of [data] dataset and [gen] may be present, not both")

    if cp.has_section("metrics"):
        for key, raw in cp.items("metrics"):
            if key == "bins":
                cfg.bins = _coerce("metrics", key, raw, int)
            elif key == "threshold":
                cfg.threshold = _coerce("metrics", key, raw, float)
            elif key == "fpr_target":
                cfg.fpr_target = _coerce("metrics", key, raw, float)
            elif key == "svg":
                cfg.svg = _coerce("metrics", key, raw, bool)
            else:
                raise ConfigFileError(f"[metrics] unknown key {key!r}")
        if not 0.0 < cfg.threshold < 1.0:
            raise ConfigFileError("[metrics] threshold must be in (0, 1)")
        if cfg.bins < 2:
            raise ConfigFileError("[metrics] bins must be >= 2")

    if cp.has_section("transfer"):
        for key, raw in cp.items("transfer"):
            if key == "source_checkpoint":
                cfg.source_checkpoint = raw
            elif key == "classifier_checkpoint":
                cfg.classifier_checkpoint = raw
            elif key == "source_epochs":
                cfg.source_epochs = _coerce("transfer", key, raw, int)
            elif key == "lr_scratch":
                cfg.lr_scratch = _coerce("transfer", key, raw, float)
            elif key == "lr_pretrained":
                cfg.lr_pretrained = _coerce("transfer", key, raw, float)
            elif key == "regimes":
                cfg.regimes = tuple(r.strip() for r in raw.replace(",", " ").split())
            else:
                raise ConfigFileError(f"[transfer] unknown key {key!r}")
        for path in (cfg.source_checkpoint, cfg.classifier_checkpoint):
            if path is not None and not os.path.exists(path):
                raise ConfigFileError(f"[transfer] checkpoint not found: {path}")
        bad = set(cfg.regimes) - {"S", "I", "P-En", "P-EnDe"}
        if bad:
            raise ConfigFileError(f"[transfer] unknown regimes: {sorted(bad)}")
    return cfg
