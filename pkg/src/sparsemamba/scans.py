"""Directional scan orders for 2-D selective state-space processing.

A scan order is a sequence of flat patch indices (row-major flattening of an
H x W grid). Dense mode produces four full-grid traversals; sparse mode
partitions the grid into p*p skip-sampling groups so every patch is visited
exactly once across all orders.

Direction conventions are pinned so results are reproducible:

* ``tl_row``  - start top-left, row-major (left-to-right, top-to-bottom)
* ``tl_col``  - start top-left, column-major (top-to-bottom, left-to-right)
* ``br_row``  - start bottom-right, reversed row-major
* ``br_col``  - start bottom-right, reversed column-major

Sparse groups are keyed by (row mod p, col mod p) in raster order of offsets
and assigned directions cyclically from the list above; each group traverses
only its own subgrid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T

DIRECTIONS = ("tl_row", "tl_col", "br_row", "br_col")


@dataclass(frozen=True)
class ScanOrder:
    """One traversal: flat indices in visit order plus its provenance tags."""

    indices: np.ndarray
    direction: str
    group_offset: tuple[int, int] | None = None

    def __len__(self):
        return int(self.indices.size)


def _directional_order(rows, cols, width, direction):
    """Traverse the subgrid rows x cols in the given direction convention."""
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    flat_rowmajor = (rr * width + cc).ravel()          # row-major over the subgrid
    flat_colmajor = (rr * width + cc).T.ravel()        # column-major over the subgrid
    if direction == "tl_row":
        return flat_rowmajor
    if direction == "tl_col":
        return flat_colmajor
    if direction == "br_row":
        return flat_rowmajor[::-1].copy()
    if direction == "br_col":
        return flat_colmajor[::-1].copy()
    raise ValueError(f"unknown direction {direction!r}")


def ss2d_orders(h, w):
    """The four dense traversals of an h x w grid, each a full permutation."""
    if h < 1 or w < 1:
        raise ValueError("grid extents must be positive")
    rows = np.arange(h)
    cols = np.arange(w)
    return [ScanOrder(_directional_order(rows, cols, w, d), d) for d in DIRECTIONS]


def sparse_orders(h, w, p=2):
    """Skip-sampling traversals: p*p disjoint groups jointly covering the grid.

    Group (dr, dc) holds the patches with row % p == dr and col % p == dc and
    is traversed in the direction DIRECTIONS[(dr*p + dc) % 4] over its own
    subgrid. Oversized steps (p exceeding an extent) leave some groups empty,
    which is tolerated with a warning.
    """
    if h < 1 or w < 1:
        raise ValueError("grid extents must be positive")
    if p < 1:
        raise ValueError("skip step must be >= 1")
    if p > min(h, w):
        warnings.warn(f"skip step {p} exceeds min grid extent {min(h, w)}; some groups are empty",
                      stacklevel=2)
    orders = []
    for dr in range(p):
        for dc in range(p):
            rows = np.arange(dr, h, p)
            cols = np.arange(dc, w, p)
            direction = DIRECTIONS[(dr * p + dc) % len(DIRECTIONS)]
            if rows.size == 0 or cols.size == 0:
                idx = np.empty(0, dtype=np.int64)
            else:
                idx = _directional_order(rows, cols, w, direction)
            orders.append(ScanOrder(idx, direction, (dr, dc)))
    return orders


def gather_seq(features, order):
    """Read a (C, H, W) tensor along ``order`` into a (len(order), C) sequence."""
    c = features.shape[0]
    flat = T.reshape(features, (c, features.shape[1] * features.shape[2]))
    return T.transpose(T.take_columns(flat, order.indices), (1, 0))


def scatter_seq(seq, order, h, w, accumulate="overwrite"):
    """Write a (len(order), C) sequence back onto a zeroed (C, H, W) grid.

    Scattering the gathered sequence of a full permutation (or all groups of
    a sparse cover) reconstructs the source exactly.
    """
    c = seq.shape[1]
    flat = T.put_columns(T.transpose(seq, (1, 0)), order.indices, h * w, accumulate=accumulate)
    return T.reshape(flat, (c, h, w))


def run_scan_roundtrip(features, orders, h, w):
    """Gather+scatter every order and sum the results onto one grid."""
    out = None
    for order in orders:
        part = scatter_seq(gather_seq(features, order), order, h, w)
        out = part if out is None else out + part
    return out
