"""Sample records, stratified splitting, image tiling, class-imbalance
weighting, and the on-disk dataset layout
(images/<id>.png, masks/<id>.png, strata.csv)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class DataError(ValueError):
    """Invalid sample data or dataset layout."""


@dataclass
class SampleRecord:
    """One (image, mask) pair with its stratification key."""

    id: str
    image: np.ndarray  # uint8 (H, W, 3)
    mask: np.ndarray  # uint8 (H, W), values in {0, 1}
    stratum: tuple[str, str, str]  # (date, tube, depth window)

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise DataError(
                f"sample {self.id}: image {self.image.shape[:2]} and mask {self.mask.shape} extents differ"
            )
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise DataError(f"sample {self.id}: mask must be binary (0/1)")


def stratified_split(samples: list[SampleRecord], train_frac: float, seed: int):
    """Per-stratum split: ceil(train_frac * n) samples to train, rest to
    test; deterministic per seed."""
    if not samples:
        raise DataError("cannot split an empty sample set")
    if not 0.0 < train_frac < 1.0:
        raise DataError(f"train_frac must be in (0, 1), got {train_frac}")
    strata: dict[tuple, list[SampleRecord]] = {}
    for s in samples:
        strata.setdefault(s.stratum, []).append(s)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for key in sorted(strata):
        group = strata[key]
        order = rng.permutation(len(group))
        n_train = int(np.ceil(train_frac * len(group)))
        train.extend(group[i] for i in order[:n_train])
        test.extend(group[i] for i in order[n_train:])
    return train, test


def tile_image(sample: SampleRecord, grid_rows: int, grid_cols: int) -> list[SampleRecord]:
    """Split a sample into non-overlapping row-major tiles inheriting the
    parent stratum. Dimensions must divide exactly."""
    h, w = sample.mask.shape
    if h % grid_rows or w % grid_cols:
        raise DataError(
            f"sample {sample.id}: {h}x{w} does not tile into a {grid_rows}x{grid_cols} grid; "
            f"pick a grid that divides both dimensions"
        )
    th, tw = h // grid_rows, w // grid_cols
    tiles = []
    for r in range(grid_rows):
        for c in range(grid_cols):
            tiles.append(
                SampleRecord(
                    id=f"{sample.id}_t{r}{c}",
                    image=sample.image[r * th : (r + 1) * th, c * tw : (c + 1) * tw].copy(),
                    mask=sample.mask[r * th : (r + 1) * th, c * tw : (c + 1) * tw].copy(),
                    stratum=sample.stratum,
                )
            )
    return tiles


def compute_pos_weight(masks: list[np.ndarray]) -> float:
    """Median over masks of the non-root / root pixel ratio.

    Masks without any root pixel are excluded from the median; raises if
    every mask is root-free."""
    ratios = []
    skipped = 0
    for m in masks:
        pos = int((m != 0).sum())
        if pos == 0:
            skipped += 1
            continue
        ratios.append((m.size - pos) / pos)
    if not ratios:
        raise DataError(f"pos_weight undefined: all {skipped} masks are root-free")
    return float(np.median(ratios))


def binarize(prob_map: np.ndarray, threshold: float) -> np.ndarray:
    """Pixel is root iff probability >= threshold (boundary inclusive)."""
    if not 0.0 < threshold < 1.0:
        raise DataError(f"threshold must be in (0, 1), got {threshold}")
    return (np.asarray(prob_map) >= threshold).astype(np.uint8)


def to_batch(samples: list[SampleRecord]):
    """Stack samples into float32 (N,3,H,W) in [0,1] and (N,1,H,W) masks."""
    shapes = {s.mask.shape for s in samples}
    if len(shapes) != 1:
        raise DataError(f"cannot batch samples of differing sizes: {sorted(shapes)}")
    imgs = np.stack([s.image for s in samples]).transpose(0, 3, 1, 2).astype(np.float32) / 255.0
    masks = np.stack([s.mask for s in samples])[:, None].astype(np.float32)
    return imgs, masks


# ---------------------------------------------------------------------------
# on-disk layout


def save_sampleset(samples: list[SampleRecord], root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    with open(root / "strata.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "date", "tube", "depth"])
        for s in samples:
            Image.fromarray(s.image).save(root / "images" / f"{s.id}.png")
            Image.fromarray((s.mask * 255).astype(np.uint8)).save(root / "masks" / f"{s.id}.png")
            w.writerow([s.id, *s.stratum])


def load_sampleset(root) -> list[SampleRecord]:
    root = Path(root)
    strata_path = root / "strata.csv"
    if not strata_path.exists():
        raise DataError(f"{root}: not a dataset directory (missing strata.csv)")
    samples = []
    with open(strata_path, newline="") as f:
        for row in csv.DictReader(f):
            img_path = root / "images" / f"{row['id']}.png"
            mask_path = root / "masks" / f"{row['id']}.png"
            if not img_path.exists() or not mask_path.exists():
                raise DataError(f"{root}: missing image or mask for sample {row['id']!r}")
            image = np.asarray(Image.open(img_path).convert("RGB"))
            mask = (np.asarray(Image.open(mask_path).convert("L")) >= 128).astype(np.uint8)
            samples.append(SampleRecord(row["id"], image, mask, (row["date"], row["tube"], row["depth"])))
    return samples
