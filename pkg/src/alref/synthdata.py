"""Deterministic synthetic scene generator.

Stands in for the unavailable source imagery: multi-band reflectance images
with ground-truth fine labels, built so the label-refinement dynamics stay
interesting (contiguous class regions, small objects, one near-identical
class pair that is only separable in a single band).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .raster import LabelRaster, MultiBandRaster

# Classes 0 and 1 get nearly identical spectra outside one designated band.
_SIMILAR_PAIR = (0, 1)
_MEAN_DRAW_ATTEMPTS = 1000


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    width: int = 256
    height: int = 256
    bands: int = 5
    num_classes: int = 4
    blob_count: int = 5
    noise_sigma: float = 0.05
    small_object_rate: float = 0.02

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1 or self.bands < 1:
            raise ValueError("width, height and bands must be >= 1")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.blob_count < 1:
            raise ValueError("blob_count must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.small_object_rate <= 1.0:
            raise ValueError("small_object_rate must be in [0, 1]")
        if self.num_classes * self.blob_count > self.width * self.height:
            raise ValueError("more seed sites than pixels")


def draw_class_means(rng: np.random.Generator, num_classes: int, bands: int,
                     noise_sigma: float) -> np.ndarray:
    """Per-class spectral means, shape (num_classes, bands), in [0, 1].

    Every class pair is separated by at least 2 * noise_sigma in at least one
    band (rejection sampled). The designated similar pair shares means within
    0.5 * noise_sigma in all but one band, where it is forced apart, so that
    the pair is distinguishable but easily confused.
    """
    sep = 2.0 * noise_sigma
    for _ in range(_MEAN_DRAW_ATTEMPTS):
        means = rng.uniform(0.15, 0.85, size=(num_classes, bands))
        if num_classes > 1:
            a, b = _SIMILAR_PAIR
            split_band = int(rng.integers(bands))
            jitter = rng.uniform(-0.5 * noise_sigma, 0.5 * noise_sigma, size=bands)
            means[b] = means[a] + jitter
            gap = max(2.5 * noise_sigma, 0.1)
            direction = 1.0 if means[a, split_band] < 0.5 else -1.0
            means[b, split_band] = means[a, split_band] + direction * gap
        means = np.clip(means, 0.0, 1.0)
        if _pairwise_separated(means, sep):
            return means
    raise RuntimeError("could not draw separated class means; lower noise_sigma")


def _pairwise_separated(means: np.ndarray, sep: float) -> bool:
    k = means.shape[0]
    for a in range(k):
        for b in range(a + 1, k):
            if not np.any(np.abs(means[a] - means[b]) >= sep):
                return False
    return True


def _seed_site_labels(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """Nearest-seed-site class map: blob_count sites per class on distinct
    cells, Manhattan distance, ties resolved to the lowest class id."""
    w, h, k = spec.width, spec.height, spec.num_classes
    cells = rng.choice(w * h, size=k * spec.blob_count, replace=False)
    sx, sy = cells // h, cells % h
    xs = np.arange(w)[:, None]
    ys = np.arange(h)[None, :]
    dist = np.empty((k, w, h), dtype=np.int64)
    for c in range(k):
        lo, hi = c * spec.blob_count, (c + 1) * spec.blob_count
        d = np.abs(xs - sx[lo]) + np.abs(ys - sy[lo])
        for s in range(lo + 1, hi):
            np.minimum(d, np.abs(xs - sx[s]) + np.abs(ys - sy[s]), out=d)
        dist[c] = d
    return np.argmin(dist, axis=0).astype(np.uint8)  # argmin picks lowest id on ties


def _stamp_small_objects(rng: np.random.Generator, labels: np.ndarray, spec: SceneSpec) -> None:
    """Overwrite roughly small_object_rate of the pixels with 1x1 or 2x2
    squares of a random class, mimicking small hard-to-label objects."""
    budget = int(round(spec.small_object_rate * spec.width * spec.height))
    while budget > 0:
        side = int(rng.integers(1, 3))
        if side * side > budget:
            side = 1
        x0 = int(rng.integers(0, spec.width - side + 1))
        y0 = int(rng.integers(0, spec.height - side + 1))
        labels[x0:x0 + side, y0:y0 + side] = int(rng.integers(spec.num_classes))
        budget -= side * side


def generate_scene(spec: SceneSpec,
                   class_means: np.ndarray | None = None) -> tuple[MultiBandRaster, LabelRaster]:
    """Generate one image/label pair, a pure function of the spec.

    When class_means is given (pool generation) the per-scene mean draw is
    skipped so all pool images share one spectral table.
    """
    rng = np.random.default_rng(spec.seed)
    if class_means is None:
        means = draw_class_means(rng, spec.num_classes, spec.bands, spec.noise_sigma)
    else:
        means = np.asarray(class_means, dtype=np.float64)
        if means.shape != (spec.num_classes, spec.bands):
            raise ValueError(f"class_means shape {means.shape} does not match spec")
    labels = _seed_site_labels(rng, spec)
    _stamp_small_objects(rng, labels, spec)
    base = np.moveaxis(means[labels], -1, 0)  # (bands, width, height)
    if spec.noise_sigma > 0:
        base = base + rng.normal(0.0, spec.noise_sigma, size=base.shape)
    values = np.clip(base, 0.0, 1.0).astype(np.float32)
    return MultiBandRaster(values), LabelRaster(labels, spec.num_classes)


def generate_pool(seed: int, n_images: int,
                  template: SceneSpec) -> list[tuple[MultiBandRaster, LabelRaster]]:
    """Generate n_images scenes with per-image seeds seed + i and one shared
    class-mean table drawn from seed, so a predictor can generalise across
    the pool."""
    if n_images < 2:
        raise ValueError("a pool needs at least 2 images for leave-one-out")
    master = np.random.default_rng(seed)
    means = draw_class_means(master, template.num_classes, template.bands,
                             template.noise_sigma)
    return [
        generate_scene(replace(template, seed=seed + i), class_means=means)
        for i in range(n_images)
    ]
