"""Simulated expert: refines labels inside selected areas from ground truth.

The ledger tracks the per-image acquisition masks, the cumulative refined
pixel count, and a per-cycle audit log.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .raster import AcquisitionMask, LabelRaster, Region, check_bounds


@dataclass
class RefinementEntry:
    cycle: int
    region: Region
    newly_refined: int


class RefinementLedger:
    """Acquisition bookkeeping for the training images of one fold."""

    def __init__(self, dims: list[tuple[int, int]]):
        self.masks = [AcquisitionMask.all_ones(w, h) for w, h in dims]
        self.refined_total = 0
        self.log: list[RefinementEntry] = []
        self.cycle = 0

    def total_ones(self) -> int:
        return sum(int(m.bits.sum()) for m in self.masks)

    def to_json(self) -> str:
        entries = [
            {
                "cycle": e.cycle,
                "image": e.region.image_index,
                "x0": e.region.x0,
                "y0": e.region.y0,
                "w": e.region.w,
                "h": e.region.h,
                "newly_refined": e.newly_refined,
            }
            for e in self.log
        ]
        return json.dumps({"refined_total": self.refined_total, "entries": entries})


def refine(current: LabelRaster, fine: LabelRaster, ledger: RefinementLedger, r: Region,
           keep_prob: float = 0.0, rng: np.random.Generator | None = None) -> int:
    """Refine region r of current in place from the fine labels, zero the
    acquisition mask there, and return how many mask bits flipped 1 -> 0.

    Repeating a region is a no-op that returns 0. keep_prob > 0 simulates a
    sloppy expert who keeps the existing label with that probability per
    pixel (the mask is still marked refined).
    """
    if (current.width, current.height) != (fine.width, fine.height):
        raise ValueError("current and fine labels have different extents")
    check_bounds(r, current.width, current.height)
    mask = ledger.masks[r.image_index]
    if (mask.width, mask.height) != (current.width, current.height):
        raise ValueError("ledger mask does not match the labels")
    sx, sy = r.window()
    newly = int((mask.bits[sx, sy] == 1).sum())
    if keep_prob > 0.0:
        if rng is None:
            raise ValueError("keep_prob > 0 requires an rng")
        keep = rng.random((r.w, r.h)) < keep_prob
        current.labels[sx, sy] = np.where(keep, current.labels[sx, sy], fine.labels[sx, sy])
    else:
        current.labels[sx, sy] = fine.labels[sx, sy]
    mask.bits[sx, sy] = 0
    ledger.refined_total += newly
    ledger.log.append(RefinementEntry(ledger.cycle, r, newly))
    return newly
