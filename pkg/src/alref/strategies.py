"""Candidate generation and the three acquisition strategies.

A cycle samples N equally-sized candidate areas, scores each with the
configured utility, and selects the K areas maximising the summed utility
(equivalently the K largest utilities, ties going to the lowest index).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .predictor import EntropyMap
from .raster import AcquisitionMask, Region


class StrategyKind(enum.Enum):
    RS = "rs"
    CS = "cs"
    US = "us"


@dataclass
class Candidate:
    region: Region
    utility: float = field(default=math.nan)


def sample_candidates(pool_dims: list[tuple[int, int]], n: int, size: int,
                      rng: np.random.Generator) -> list[Candidate]:
    """Draw n candidate regions: uniform image index, then uniform valid
    top-left offset. Duplicates and overlaps are permitted."""
    if n < 1:
        raise ValueError("need at least one candidate")
    if not pool_dims:
        raise ValueError("empty pool")
    for w, h in pool_dims:
        if size > w or size > h:
            raise ValueError(f"candidate size {size} exceeds image {w}x{h}")
    out = []
    for _ in range(n):
        idx = int(rng.integers(len(pool_dims)))
        w, h = pool_dims[idx]
        x0 = int(rng.integers(w - size + 1))
        y0 = int(rng.integers(h - size + 1))
        out.append(Candidate(Region(idx, x0, y0, size, size)))
    return out


def utility_cs(mask_crop: AcquisitionMask) -> float:
    """Coverage utility: count of not-yet-refined pixels in the candidate."""
    return float(mask_crop.bits.sum())


def utility_us(mask_crop: AcquisitionMask, entropy_crop: EntropyMap) -> float:
    """Uncertainty utility: summed entropy over not-yet-refined pixels."""
    if (mask_crop.width, mask_crop.height) != (entropy_crop.width, entropy_crop.height):
        raise ValueError("mask and entropy crops have different extents")
    return float((mask_crop.bits * entropy_crop.values).sum())


def utility_rs(rng: np.random.Generator) -> float:
    """Random utility in [0, 1); with top-K selection this realises a
    uniform random K-subset."""
    return float(rng.random())


def select_top_k(candidates: list[Candidate], k: int) -> list[int]:
    """Indices of the k highest-utility candidates, ties broken by lowest
    index; returned in descending-utility order."""
    n = len(candidates)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    utilities = np.array([c.utility for c in candidates], dtype=np.float64)
    if not np.all(np.isfinite(utilities)):
        raise ValueError("all candidate utilities must be finite")
    order = np.argsort(-utilities, kind="stable")
    return [int(i) for i in order[:k]]


def score_candidates(candidates: list[Candidate], kind: StrategyKind,
                     masks: list[AcquisitionMask],
                     entropies: list[EntropyMap] | None,
                     rng: np.random.Generator) -> None:
    """Fill each candidate's utility in place according to the strategy.

    Entropy maps are computed once per cycle per image and cropped here, not
    recomputed per candidate.
    """
    for cand in candidates:
        r = cand.region
        sx, sy = r.window()
        if kind is StrategyKind.RS:
            cand.utility = utility_rs(rng)
        elif kind is StrategyKind.CS:
            cand.utility = float(masks[r.image_index].bits[sx, sy].sum())
        elif kind is StrategyKind.US:
            if entropies is None:
                raise ValueError("uncertainty sampling needs entropy maps")
            bits = masks[r.image_index].bits[sx, sy]
            cand.utility = float((bits * entropies[r.image_index].values[sx, sy]).sum())
        else:  # pragma: no cover - exhaustive enum
            raise ValueError(f"unknown strategy {kind}")
