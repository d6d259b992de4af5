"""Exact object detection on token grids.

The scene world is procedural, so detection can be an oracle: connected
components of each color are classified by exact geometric tests against
the canonical shape masks (fill pattern inside the bounding box). A blob
that matches no canonical geometry is reported with shape "unknown" and
still counts as one object. Components below 3 cells are discarded as
noise; two touching same-color objects merge into a single component by
4-connectivity (documented semantics).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..scene.geometry import SHAPE_SIZES, shape_bbox, shape_cells
from ..vocab import TokenGrid

MIN_COMPONENT_CELLS = 3

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class DetectedObject:
    shape: str                      # canonical shape name or "unknown"
    color: int
    centroid: tuple[float, float]
    cell_count: int


def classify_cells(cells: set[tuple[int, int]]) -> str:
    """Classify a component by exact mask equality at its bounding box."""
    rows = [r for r, _ in cells]
    cols = [c for _, c in cells]
    r0, c0 = min(rows), min(cols)
    h = max(rows) - r0 + 1
    w = max(cols) - c0 + 1
    rel = {(r - r0, c - c0) for r, c in cells}
    for shape, sizes in SHAPE_SIZES.items():
        for size in sizes:
            if shape_bbox(shape, size) == (h, w) and rel == shape_cells(shape, size):
                return shape
    return "unknown"


def detect_objects(grid: TokenGrid) -> list[DetectedObject]:
    """All objects on the grid, ordered by (color, first cell)."""
    detections: list[DetectedObject] = []
    cells = grid.cells
    for color in np.unique(cells):
        color = int(color)
        if color == 0:
            continue
        labels, n = ndimage.label(cells == color, structure=FOUR_CONNECTED)
        for comp in range(1, n + 1):
            rr, cc = np.nonzero(labels == comp)
            if rr.size < MIN_COMPONENT_CELLS:
                continue
            comp_cells = set(zip(rr.tolist(), cc.tolist()))
            detections.append(DetectedObject(
                shape=classify_cells(comp_cells),
                color=color,
                centroid=(float(rr.mean()), float(cc.mean())),
                cell_count=int(rr.size),
            ))
    return detections
