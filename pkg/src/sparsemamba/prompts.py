"""Box prompts derived from coarse predictions and scribbles.

Per foreground class, the hard prediction mask and the class's scribble
pixels are unioned and wrapped in one tight bounding box. Falling back to the
scribble pixels keeps prompts non-empty early in training, when predictions
may miss a class entirely. Contours of prediction components are traced with
Moore neighbourhood walking and kept available for inspection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .tensor import Tensor

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

# Moore neighbourhood in clockwise order starting from west
_MOORE = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)]


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel-coordinate box for one class."""

    class_id: int
    min_row: int
    min_col: int
    max_row: int
    max_col: int

    def __post_init__(self):
        if self.min_row > self.max_row or self.min_col > self.max_col:
            raise ValueError(f"degenerate box {self}")

    def contains(self, r, c):
        return self.min_row <= r <= self.max_row and self.min_col <= c <= self.max_col

    def as_array(self):
        return np.array([self.class_id, self.min_row, self.min_col, self.max_row, self.max_col],
                        dtype=np.int64)


@dataclass
class Contour:
    """Ordered outer-boundary pixel cycle of one connected region."""

    class_id: int
    pixels: list

    def __len__(self):
        return len(self.pixels)


def trace_contour(mask, start):
    """Moore-neighbour walk around one 8-connected region's outer boundary.

    ``start`` must be the region's lexicographically smallest pixel (so its
    west neighbour is guaranteed outside). The walk scans neighbours clockwise
    from the backtrack direction and stops when it re-enters the start pixel
    through the same move as its first entry; single-pixel regions yield a
    one-element cycle.
    """
    h, w = mask.shape
    dir_index = {d: i for i, d in enumerate(_MOORE)}

    def is_set(p):
        return 0 <= p[0] < h and 0 <= p[1] < w and mask[p]

    def next_move(cur, bdir):
        """First set neighbour clockwise after the backtrack direction."""
        for step in range(1, 9):
            k = (bdir + step) % 8
            cand = (cur[0] + _MOORE[k][0], cur[1] + _MOORE[k][1])
            if is_set(cand):
                back_k = (bdir + step - 1) % 8
                back_pt = (cur[0] + _MOORE[back_k][0], cur[1] + _MOORE[back_k][1])
                return cand, k, dir_index[(back_pt[0] - cand[0], back_pt[1] - cand[1])]
        return None

    first = next_move(start, 0)
    if first is None:
        return [start]  # isolated pixel
    pixels = [start]
    cur, first_k, bdir = first
    max_steps = 8 * int(mask.sum()) + 8  # safety cap; never binding for valid masks
    for _ in range(max_steps):
        pixels.append(cur)
        move = next_move(cur, bdir)
        cand, k, next_bdir = move
        if cand == start:
            # arrived back at start: the cycle is closed iff the outgoing
            # move from here would repeat the very first move
            follow = next_move(start, next_bdir)
            if follow[0:2] == first[0:2]:
                return pixels
        cur, bdir = cand, next_bdir
    raise RuntimeError("contour trace failed to close (malformed mask?)")


def trace_contours(mask, class_id=0):
    """Contours of every 8-connected component, largest-first deterministic order."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    contours = []
    for comp in range(1, n + 1):
        comp_mask = labels == comp
        rows, cols = np.nonzero(comp_mask)
        start = (int(rows[0]), int(cols[0]))  # argwhere order is row-major
        contours.append(Contour(class_id, trace_contour(comp_mask, start)))
    return contours


def _tight_box(points, class_id):
    rows = points[:, 0]
    cols = points[:, 1]
    return BBox(class_id, int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))


def extract_bboxes(probs, scribbles, tau=0.5):
    """One prompt box per foreground class present in prediction or scribbles.

    The prediction contributes pixels where it both wins the argmax and
    clears the confidence threshold ``tau``; scribble pixels of the class are
    always included, so the emitted box contains the scribble-only box.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {tau}")
    data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    if data.ndim != 3:
        raise ValueError(f"expected (K, H, W) probabilities, got {data.shape}")
    hard = data.argmax(axis=0)
    boxes = []
    for c in range(1, data.shape[0]):
        pred_mask = (hard == c) & (data[c] >= tau)
        scrib_mask = scribbles.class_mask(c)
        union = pred_mask | scrib_mask
        if not union.any():
            continue
        boxes.append(_tight_box(np.argwhere(union), c))
    return boxes
