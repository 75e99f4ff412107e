"""Coarse-label simulation by repeated single-class enlargement.

Each enlargement dilates one class with a randomly sized rectangular
all-ones filter, relabelling every pixel near that class; running this over
all classes wipes out small details while keeping large areas intact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .raster import LabelRaster


@dataclass(frozen=True)
class CoarseSimConfig:
    seed: int
    min_filter: int = 2
    max_filter: int = 32
    class_order_policy: str = "random_permutation"  # or "fixed_list"
    class_order: tuple[int, ...] | None = None
    rounds: int = 1

    def __post_init__(self) -> None:
        if not 1 <= self.min_filter <= self.max_filter:
            raise ValueError("need 1 <= min_filter <= max_filter")
        if self.class_order_policy not in ("random_permutation", "fixed_list"):
            raise ValueError(f"unknown class_order_policy {self.class_order_policy!r}")
        if self.class_order_policy == "fixed_list" and not self.class_order:
            raise ValueError("fixed_list policy requires class_order")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


class EnlargeStep(NamedTuple):
    class_id: int
    fw: int
    fh: int


def _shift_or(ind: np.ndarray, f: int, axis: int) -> np.ndarray:
    """1-D sliding OR along axis with window f anchored at floor((f-1)/2).

    out[i] = OR of ind[i + d] for d in [-anchor, f - 1 - anchor], positions
    outside the array contributing 0 (window clipped at borders).
    """
    if f == 1:
        return ind
    anchor = (f - 1) // 2
    out = np.zeros_like(ind)
    n = ind.shape[axis]
    for d in range(-anchor, f - anchor):
        if d >= n or d <= -n:
            continue
        src = [slice(None)] * ind.ndim
        dst = [slice(None)] * ind.ndim
        if d >= 0:
            src[axis] = slice(d, n)
            dst[axis] = slice(0, n - d)
        else:
            src[axis] = slice(0, n + d)
            dst[axis] = slice(-d, n)
        out[tuple(dst)] |= ind[tuple(src)]
    return out


def enlarge_class(labels: LabelRaster, c: int, fw: int, fh: int) -> LabelRaster:
    """Dilate class c with an fw x fh all-ones filter.

    The filter is anchored at (floor((fw-1)/2), floor((fh-1)/2)), so a pixel
    becomes class c iff any class-c pixel lies in its anchored window; all
    other pixels keep their label. The input is unchanged.
    """
    if not 0 <= c < labels.num_classes:
        raise ValueError(f"class id {c} outside [0, {labels.num_classes})")
    if fw < 1 or fh < 1:
        raise ValueError("filter extent must be >= 1")
    ind = labels.labels == c
    dilated = _shift_or(_shift_or(ind, fw, axis=0), fh, axis=1)
    out = labels.labels.copy()
    out[dilated] = c
    return LabelRaster(out, labels.num_classes)


def simulate_coarse(labels: LabelRaster,
                    cfg: CoarseSimConfig) -> tuple[LabelRaster, list[EnlargeStep]]:
    """Enlarge each class once per round with independently drawn filter
    sizes, in a seeded random permutation (or the configured fixed list).

    Returns the coarse labels and the applied (class, fw, fh) log, which
    replays to the same result through enlarge_class.
    """
    rng = np.random.default_rng(cfg.seed)
    current = labels
    steps: list[EnlargeStep] = []
    for _ in range(cfg.rounds):
        if cfg.class_order_policy == "random_permutation":
            order = [int(c) for c in rng.permutation(labels.num_classes)]
        else:
            order = list(cfg.class_order or ())
        for c in order:
            fw = int(rng.integers(cfg.min_filter, cfg.max_filter + 1))
            fh = int(rng.integers(cfg.min_filter, cfg.max_filter + 1))
            current = enlarge_class(current, c, fw, fh)
            steps.append(EnlargeStep(c, fw, fh))
    return current, steps


def noise_rate(coarse: LabelRaster, fine: LabelRaster) -> float:
    """Fraction of pixels where the two label maps disagree."""
    if (coarse.width, coarse.height) != (fine.width, fine.height):
        raise ValueError("label rasters have different extents")
    return float(np.mean(coarse.labels != fine.labels))
