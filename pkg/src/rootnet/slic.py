"""SLIC superpixels: localized k-means over joint color/position space,
4-connectivity enforcement, and superpixel-level mask rasterization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class SuperpixelMap:
    labels: np.ndarray  # int32 (H, W), ids 0..K-1 with no gaps
    sizes: np.ndarray  # pixel count per id
    centroids: np.ndarray  # (K, 2) mean (y, x) per id
    mean_colors: np.ndarray  # (K, 3) mean color per id

    @property
    def count(self) -> int:
        return len(self.sizes)


def _rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """sRGB uint8 -> CIELAB (the perceptual space the clustering runs in)."""
    rgb = image.astype(np.float64) / 255.0
    rgb = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    m = np.array(
        [[0.4124564, 0.3575761, 0.1804375],
         [0.2126729, 0.7151522, 0.0721750],
         [0.0193339, 0.1191920, 0.9503041]]
    )
    xyz = rgb @ m.T
    xyz /= np.array([0.95047, 1.0, 1.08883])
    f = np.where(xyz > 0.008856, np.cbrt(xyz), 7.787 * xyz + 16.0 / 116.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def _summarize(labels: np.ndarray, image: np.ndarray) -> SuperpixelMap:
    k = int(labels.max()) + 1
    flat = labels.reshape(-1)
    sizes = np.bincount(flat, minlength=k)
    yy, xx = np.mgrid[0 : labels.shape[0], 0 : labels.shape[1]]
    cy = np.bincount(flat, weights=yy.reshape(-1), minlength=k) / sizes
    cx = np.bincount(flat, weights=xx.reshape(-1), minlength=k) / sizes
    colors = np.stack(
        [np.bincount(flat, weights=image[..., c].reshape(-1).astype(np.float64), minlength=k) / sizes for c in range(3)],
        axis=1,
    )
    return SuperpixelMap(labels.astype(np.int32), sizes, np.stack([cy, cx], axis=1), colors)


def slic(image: np.ndarray, target_size: float = 100.0, compactness: float = 10.0, iterations: int = 10) -> SuperpixelMap:
    """Cluster pixels into superpixels of roughly target_size pixels.

    Grid-initialized centers at spacing S = sqrt(target_size), 2S x 2S
    search windows, distance d = d_color + (compactness / S) * d_xy,
    fixed iteration count, then connectivity enforcement."""
    if target_size < 4:
        raise ValueError(f"target_size must be >= 4, got {target_size}")
    h, w = image.shape[:2]
    lab = _rgb_to_lab(image)
    s = np.sqrt(target_size)
    if h * w <= target_size or min(h, w) < s:
        return _summarize(np.zeros((h, w), dtype=np.int64), image)
    grid_y = np.arange(s / 2, h, s)
    grid_x = np.arange(s / 2, w, s)
    centers_yx = np.array([(y, x) for y in grid_y for x in grid_x])
    k = len(centers_yx)
    iy = np.clip(centers_yx[:, 0].round().astype(int), 0, h - 1)
    ix = np.clip(centers_yx[:, 1].round().astype(int), 0, w - 1)
    centers_lab = lab[iy, ix]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ratio = compactness / s
    for _ in range(iterations):
        best_d = np.full((h, w), np.inf)
        labels = np.zeros((h, w), dtype=np.int64)
        for ci in range(k):
            cy, cx = centers_yx[ci]
            y0, y1 = max(int(cy - s), 0), min(int(cy + s) + 1, h)
            x0, x1 = max(int(cx - s), 0), min(int(cx + s) + 1, w)
            dc = np.sqrt(((lab[y0:y1, x0:x1] - centers_lab[ci]) ** 2).sum(axis=-1))
            dxy = np.hypot(yy[y0:y1, x0:x1] - cy, xx[y0:y1, x0:x1] - cx)
            d = dc + ratio * dxy
            win_best = best_d[y0:y1, x0:x1]
            better = d < win_best
            win_best[better] = d[better]
            labels[y0:y1, x0:x1][better] = ci
        flat = labels.reshape(-1)
        counts = np.bincount(flat, minlength=k).astype(np.float64)
        counts[counts == 0] = 1.0
        centers_yx = np.stack(
            [
                np.bincount(flat, weights=yy.reshape(-1), minlength=k) / counts,
                np.bincount(flat, weights=xx.reshape(-1), minlength=k) / counts,
            ],
            axis=1,
        )
        centers_lab = np.stack(
            [np.bincount(flat, weights=lab[..., c].reshape(-1), minlength=k) / counts for c in range(3)],
            axis=1,
        )
    return enforce_connectivity(labels, image, target_size)


def enforce_connectivity(labels: np.ndarray, image: np.ndarray, target_size: float = 100.0) -> SuperpixelMap:
    """Make every id a single 4-connected region.

    Fragments smaller than target_size/4 are absorbed into the largest
    adjacent superpixel; larger fragments become their own superpixels.
    Ids are re-compacted."""
    h, w = labels.shape
    # split every id into its 4-connected components
    frag = np.full((h, w), -1, dtype=np.int64)
    frag_count = 0
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)
    for lid in np.unique(labels):
        comp, n = ndimage.label(labels == lid, structure=four)
        frag[comp > 0] = comp[comp > 0] - 1 + frag_count
        frag_count += n
    sizes = np.bincount(frag.reshape(-1), minlength=frag_count)
    min_size = target_size / 4.0
    # absorb small fragments into the largest 4-adjacent fragment, largest
    # neighbours first, smallest fragments first (deterministic order)
    order = np.argsort(sizes, kind="stable")
    merged = np.arange(frag_count)  # union-find-ish forwarding map

    def resolve(i):
        while merged[i] != i:
            i = merged[i]
        return i

    for fid in order:
        if sizes[fid] >= min_size:
            continue
        region = frag == fid
        neigh_ids = set()
        shifted = np.zeros_like(region)
        for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
            shifted[:] = False
            if axis == 0 and shift == 1:
                shifted[1:, :] = region[:-1, :]
            elif axis == 0:
                shifted[:-1, :] = region[1:, :]
            elif shift == 1:
                shifted[:, 1:] = region[:, :-1]
            else:
                shifted[:, :-1] = region[:, 1:]
            neigh_ids.update(np.unique(frag[shifted & ~region]).tolist())
        neigh_ids.discard(fid)
        if not neigh_ids:
            continue  # whole-image fragment
        target = max(neigh_ids, key=lambda i: (sizes[i], -i))
        frag[region] = target
        sizes[target] += sizes[fid]
        sizes[fid] = 0
        merged[fid] = target
    # re-compact ids in raster order of first appearance
    flat = frag.reshape(-1)
    _, first_idx = np.unique(flat, return_index=True)
    remap = {int(flat[i]): rank for rank, i in enumerate(sorted(first_idx))}
    compact = np.vectorize(remap.get, otypes=[np.int64])(flat).reshape(h, w)
    return _summarize(compact, image)


def snap_mask(mask: np.ndarray, spmap: SuperpixelMap) -> np.ndarray:
    """Superpixel-level mask: a superpixel is root iff at least half of its
    pixels are root (ties go to root). Constant within each superpixel."""
    if mask.shape != spmap.labels.shape:
        raise ValueError(f"mask shape {mask.shape} != label shape {spmap.labels.shape}")
    flat = spmap.labels.reshape(-1)
    k = spmap.count
    pos = np.bincount(flat, weights=(np.asarray(mask).reshape(-1) != 0).astype(np.float64), minlength=k)
    frac = pos / np.maximum(spmap.sizes, 1)
    return (frac >= 0.5).astype(np.uint8)[spmap.labels]


def save_label_png(spmap: SuperpixelMap, path) -> None:
    """Serialize the label raster as 16-bit grayscale PNG (K <= 65535)."""
    from PIL import Image

    if spmap.count > 65535:
        raise ValueError(f"{spmap.count} superpixels exceed 16-bit PNG range")
    Image.fromarray(spmap.labels.astype(np.uint16)).save(path)
