"""Procedural minirhizotron-style imagery with exact ground truth.

Roots are smooth random-walk tubes of varying diameter drawn over a
textured soil background, optionally broken by soil occlusion patches and
bright bubble artifacts. The mask marks exactly the visible root pixels
(mask and image come from one rasterization pass). Also provides
rectangle-chain label degradation mimicking tracing-software defects, and
labeled texture patches for the surrogate classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize


@dataclass(frozen=True)
class GenParams:
    height: int = 192
    width: int = 192
    root_count: tuple[int, int] = (1, 12)
    diameter: tuple[float, float] = (3.0, 5.0)
    diameter_wobble: float = 0.25  # relative along-root amplitude
    curvature: float = 0.12  # heading noise (radians per step)
    soil_rgb: tuple[float, float, float] = (0.42, 0.33, 0.26)
    soil_contrast: float = 0.07
    soil_smoothness: float = 2.5  # texture blur sigma (pixels)
    root_rgb: tuple[float, float, float] = (0.82, 0.76, 0.64)
    root_contrast: float = 0.05
    occlusion_prob: float = 0.08  # fraction of the frame covered by soil patches
    bubble_density: float = 3e-5  # expected bubbles per pixel
    target_density: float = 1.0 / 21.0  # root pixels / all pixels
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.target_density < 0.5:
            raise ValueError(f"target_density must be in (0, 0.5), got {self.target_density}")
        if self.root_count[0] > self.root_count[1] or self.root_count[0] < 1:
            raise ValueError(f"bad root_count range {self.root_count}")
        if self.diameter[0] > self.diameter[1] or self.diameter[0] <= 0:
            raise ValueError(f"bad diameter range {self.diameter}")


def _smooth_noise(rng, h, w, sigma):
    field = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma)
    std = field.std()
    return field / std if std > 0 else field


def _draw_root(rng, h, w, params: GenParams, hidden=None, budget=None) -> np.ndarray:
    """Rasterize one random-walk tube; returns its boolean mask.

    When a visible-pixel budget is given, the walk stops once the tube's
    pixels outside `hidden` reach it, so the realized root density lands
    close to the target."""
    mask = np.zeros((h, w), dtype=bool)
    # start on a random border pixel, heading inward
    side = rng.integers(4)
    if side == 0:
        y, x, heading = 0.0, rng.uniform(0, w), np.pi / 2
    elif side == 1:
        y, x, heading = float(h - 1), rng.uniform(0, w), -np.pi / 2
    elif side == 2:
        y, x, heading = rng.uniform(0, h), 0.0, 0.0
    else:
        y, x, heading = rng.uniform(0, h), float(w - 1), np.pi
    d0 = rng.uniform(*params.diameter)
    wobble_freq = rng.uniform(0.01, 0.04)
    wobble_phase = rng.uniform(0, 2 * np.pi)
    max_steps = int(2.5 * max(h, w))
    margin = d0  # keep drawing slightly past the frame edge
    yy, xx = np.mgrid[0:h, 0:w]  # reused for disk stamping bounds below
    for step in range(max_steps):
        radius = 0.5 * d0 * (1.0 + params.diameter_wobble * np.sin(2 * np.pi * wobble_freq * step + wobble_phase))
        radius = max(radius, 0.5)
        y0, y1 = int(np.floor(y - radius)), int(np.ceil(y + radius))
        x0, x1 = int(np.floor(x - radius)), int(np.ceil(x + radius))
        y0c, y1c = max(y0, 0), min(y1 + 1, h)
        x0c, x1c = max(x0, 0), min(x1 + 1, w)
        if y0c < y1c and x0c < x1c:
            dy = yy[y0c:y1c, x0c:x1c] - y
            dx = xx[y0c:y1c, x0c:x1c] - x
            mask[y0c:y1c, x0c:x1c] |= dy * dy + dx * dx <= radius * radius
        heading += rng.normal(0.0, params.curvature)
        x += np.cos(heading)
        y += np.sin(heading)
        if step > 4 and not (-margin <= y < h + margin and -margin <= x < w + margin):
            break
        if budget is not None and step % 16 == 15:
            visible = int(mask.sum()) if hidden is None else int((mask & ~hidden).sum())
            if visible >= budget:
                break
    return mask


def gen_root_image(params: GenParams, seed: int | None = None):
    """Render one (RGB image, binary mask) pair; deterministic per seed.

    Roots are added until the visible root density reaches
    params.target_density or the root-count cap is hit; the mask marks
    visible root pixels only (occlusions and bubbles hide roots)."""
    rng = np.random.default_rng(params.seed if seed is None else seed)
    h, w = params.height, params.width
    soil = np.empty((h, w, 3), dtype=np.float64)
    for c in range(3):
        soil[:, :, c] = params.soil_rgb[c] + params.soil_contrast * _smooth_noise(rng, h, w, params.soil_smoothness)
    # occlusion patches: soil that covers roots
    occ = np.zeros((h, w), dtype=bool)
    if params.occlusion_prob > 0:
        field = _smooth_noise(rng, h, w, 6.0)
        occ = field > np.quantile(field, 1.0 - params.occlusion_prob)
    # bubbles: bright ellipses, also hiding roots
    bubble = np.zeros((h, w), dtype=bool)
    n_bubbles = rng.poisson(params.bubble_density * h * w)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_bubbles):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ay, ax = rng.uniform(2, 7), rng.uniform(2, 7)
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dy * np.cos(theta) + dx * np.sin(theta)
        v = -dy * np.sin(theta) + dx * np.cos(theta)
        bubble |= (u / ay) ** 2 + (v / ax) ** 2 <= 1.0
    root = np.zeros((h, w), dtype=bool)
    hidden = occ | bubble
    target_px = int(np.ceil(params.target_density * h * w))
    n_roots = 0
    count_min, count_max = params.root_count
    while n_roots < count_max:
        visible_px = int((root & ~hidden).sum())
        if n_roots >= count_min and visible_px >= target_px:
            break
        budget = None if n_roots < count_min else target_px - visible_px
        root |= _draw_root(rng, h, w, params, hidden, budget)
        n_roots += 1
    visible = root & ~occ & ~bubble
    img = soil
    shade = params.root_contrast * _smooth_noise(rng, h, w, 1.5)
    for c in range(3):
        img[:, :, c] = np.where(visible, params.root_rgb[c] + shade, img[:, :, c])
        img[:, :, c] = np.where(bubble, 0.92 + 0.05 * shade, img[:, :, c])
    img += rng.normal(0.0, 0.01, size=img.shape)  # sensor noise
    image = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    return image, visible.astype(np.uint8)


# ---------------------------------------------------------------------------
# tracing-software-style label degradation


def _chain_skeleton(skel: np.ndarray) -> list[list[tuple[int, int]]]:
    """Order skeleton pixels into walk chains (greedy 8-neighbour walks)."""
    pixels = set(zip(*np.nonzero(skel)))
    offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]

    def neighbours(p, pool):
        return [(p[0] + dy, p[1] + dx) for dy, dx in offsets if (p[0] + dy, p[1] + dx) in pool]

    chains = []
    while pixels:
        # prefer an endpoint so the walk traverses the curve once
        start = None
        for p in sorted(pixels):
            if len(neighbours(p, pixels)) <= 1:
                start = p
                break
        if start is None:
            start = min(pixels)
        chain = [start]
        pixels.discard(start)
        cur = start
        while True:
            nxt = neighbours(cur, pixels)
            if not nxt:
                break
            cur = nxt[0]
            pixels.discard(cur)
            chain.append(cur)
        chains.append(chain)
    return chains


def degrade_to_winrhizo(mask: np.ndarray, gap_every: int = 4) -> np.ndarray:
    """Replace each root with a chain of axis-aligned constant-width
    rectangles fitted per straight-ish skeleton segment, leaving small
    gap pixels where the root bends - the two defects of rectangle-traced
    labels.

    Each rectangle spans a skeleton run whose off-axis drift stays within
    one pixel, so its long side follows the local root direction.  After
    every ``gap_every`` rectangles one skeleton pixel is skipped, leaving
    a gap; rectangles adjacent to a gap are stretched one pixel toward it
    so the gap stays a single pixel wide.  An empty mask is returned
    unchanged."""
    mask = np.asarray(mask) != 0
    if not mask.any():
        return mask.astype(np.uint8)
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.uint8)
    labels, n_comp = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    for comp_id in range(1, n_comp + 1):
        comp = labels == comp_id
        skel = skeletonize(comp)
        skel_len = int(skel.sum())
        if skel_len == 0:
            continue
        width = max(2, round(comp.sum() / skel_len))  # constant per root
        comp_yx = np.nonzero(comp)
        for chain in _chain_skeleton(skel):
            pts = np.asarray(chain)
            n = len(pts)
            i = 0
            n_rects = 0
            gap_before = False
            while i < n:
                # grow the run while its minor-axis span stays within 1 px
                j = i + 1
                while j < n:
                    seg = pts[i : j + 1]
                    span = seg.max(axis=0) - seg.min(axis=0)
                    if span.min() > 1:
                        break
                    j += 1
                n_rects += 1
                gap_after = n_rects % gap_every == 0 and j < n
                seg = pts[i:j]
                span = seg.max(axis=0) - seg.min(axis=0)
                major = 0 if span[0] >= span[1] else 1
                lo = int(seg[:, major].min()) - (1 if gap_before else 0)
                hi = int(seg[:, major].max()) + (1 if gap_after else 0)
                # centre the constant width on the root's own pixels near
                # this span (the skeleton drifts near blunt tube ends)
                skel_centre = float(seg[:, 1 - major].mean())
                slab_major = comp_yx[major]
                slab_minor = comp_yx[1 - major]
                near = (
                    (slab_major >= seg[:, major].min())
                    & (slab_major <= seg[:, major].max())
                    & (np.abs(slab_minor - skel_centre) <= width)
                )
                centre = float(slab_minor[near].mean()) if near.any() else skel_centre
                c0 = int(round(centre - width / 2.0))
                c1 = c0 + width
                if major == 0:
                    out[max(lo, 0) : hi + 1, max(c0, 0) : c1] = 1
                else:
                    out[max(c0, 0) : c1, max(lo, 0) : hi + 1] = 1
                i = j + (1 if gap_after else 0)
                gap_before = gap_after
    return out


# ---------------------------------------------------------------------------
# surrogate-classifier patches


def _texture_patch(rng, family: int, n_families: int, size: int) -> np.ndarray:
    """One (3, size, size) float32 patch from a procedural texture family."""
    if n_families == 2:
        # maximally distinct: dark vs bright smooth textures
        base = 0.2 if family == 0 else 0.8
        img = base + 0.05 * _smooth_noise(rng, size, size, 2.0)
        patch = np.stack([img] * 3)
    elif family == 0:  # soil-like
        img = 0.35 + 0.08 * _smooth_noise(rng, size, size, 2.5)
        patch = np.stack([img * s for s in (1.2, 1.0, 0.8)])
    elif family == 1:  # root-like: bright tube across a soil patch
        img = 0.35 + 0.06 * _smooth_noise(rng, size, size, 2.5)
        yy, xx = np.mgrid[0:size, 0:size]
        theta = rng.uniform(0, np.pi)
        c = rng.uniform(0.3 * size, 0.7 * size)
        dist = np.abs((yy - c) * np.cos(theta) - (xx - size / 2) * np.sin(theta))
        img = np.where(dist < rng.uniform(2, 4), 0.8, img)
        patch = np.stack([img * s for s in (1.1, 1.0, 0.85)])
    elif family == 2:  # bubble-like: bright ellipse
        img = 0.35 + 0.06 * _smooth_noise(rng, size, size, 2.5)
        yy, xx = np.mgrid[0:size, 0:size]
        cy, cx = rng.uniform(0.3, 0.7, 2) * size
        ay, ax = rng.uniform(size / 8, size / 4, 2)
        img = np.where(((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1, 0.9, img)
        patch = np.stack([img] * 3)
    else:  # stripes
        yy, xx = np.mgrid[0:size, 0:size]
        freq = rng.uniform(0.15, 0.35)
        theta = rng.uniform(0, np.pi)
        img = 0.5 + 0.3 * np.sin(freq * (yy * np.cos(theta) + xx * np.sin(theta)) + rng.uniform(0, 2 * np.pi))
        patch = np.stack([img] * 3)
    patch = patch + rng.normal(0, 0.02, size=patch.shape)
    return np.clip(patch, 0.0, 1.0).astype(np.float32)


def gen_classification_set(classes: int, n_per_class: int, patch_size: int = 32, seed: int = 0):
    """Labeled texture patches, exactly balanced across classes.

    Returns (patches float32 (N,3,s,s), labels int64 (N,))."""
    if classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    patches, labels = [], []
    for i in range(n_per_class):
        for fam in range(classes):
            patches.append(_texture_patch(rng, fam, classes, patch_size))
            labels.append(fam)
    order = rng.permutation(len(labels))
    return np.stack(patches)[order], np.asarray(labels, dtype=np.int64)[order]


# ---------------------------------------------------------------------------
# domain pairs for the transfer study


SOURCE_PARAMS = GenParams()
TARGET_PARAMS = GenParams(
    soil_rgb=(0.30, 0.34, 0.30),
    soil_contrast=0.10,
    soil_smoothness=1.5,
    root_rgb=(0.72, 0.70, 0.60),
    occlusion_prob=0.12,
)


def _make_set(params: GenParams, n: int, seed: int, prefix: str, n_strata: int = 4):
    from .data import SampleRecord

    samples = []
    for i in range(n):
        image, mask = gen_root_image(params, seed=seed * 1_000_003 + i)
        stratum = (f"d{i % n_strata}", f"t{(i // n_strata) % 2}", "w0")
        samples.append(SampleRecord(f"{prefix}{i:04d}", image, mask, stratum))
    return samples


def gen_domain_pair(
    seed_a: int,
    seed_b: int,
    n_source: int = 200,
    n_target: int = 28,
    source_params: GenParams = SOURCE_PARAMS,
    target_params: GenParams = TARGET_PARAMS,
    size: int | None = None,
):
    """A large source set and a small target set sharing root geometry but
    differing in background texture and color statistics."""
    if size is not None:
        source_params = replace(source_params, height=size, width=size)
        target_params = replace(target_params, height=size, width=size)
    source = _make_set(source_params, n_source, seed_a, "src")
    target = _make_set(target_params, n_target, seed_b, "tgt")
    return source, target
