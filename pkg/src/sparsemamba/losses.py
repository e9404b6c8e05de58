"""Training losses and evaluation metrics for probability and label maps.

Losses (soft Dice, partial cross-entropy and their weighted combination)
operate on (K, H, W) probability tensors and participate in the gradient
tape. Metrics (hard Dice coefficient, 95th-percentile Hausdorff distance)
operate on integer label maps and return plain floats.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from . import tensor as T
from .tensor import Tensor

DICE_EPS = 1e-6
LOG_FLOOR = 1e-12


def _check_probs_pair(y1, y2):
    if y1.shape != y2.shape:
        raise ValueError(f"probability maps differ in shape: {y1.shape} vs {y2.shape}")
    if y1.data.ndim != 3:
        raise ValueError(f"expected (K, H, W) probability maps, got {y1.shape}")


def dice_loss(y1, y2, *, squared_denominator=False, eps=DICE_EPS):
    """Soft Dice loss, averaged over classes.

    Per class: ``1 - 2*sum(y1*y2) / (sum(y1) + sum(y2) + eps)``. With
    ``squared_denominator`` the sums in the denominator are of squares, which
    makes y1 == y2 a stationary point (used when the second argument is a
    detached copy of the first, so self-agreement produces no pull).
    Symmetric in its arguments either way.
    """
    _check_probs_pair(y1, y2)
    k = y1.shape[0]
    flat1 = T.reshape(y1, (k, y1.shape[1] * y1.shape[2]))
    flat2 = T.reshape(y2, (k, y2.shape[1] * y2.shape[2]))
    inter = T.sum_(T.mul(flat1, flat2), axis=1)
    if squared_denominator:
        denom = T.add(T.sum_(T.mul(flat1, flat1), axis=1), T.sum_(T.mul(flat2, flat2), axis=1))
    else:
        denom = T.add(T.sum_(flat1, axis=1), T.sum_(flat2, axis=1))
    ratio = T.mul(T.mul(inter, 2.0), T.reciprocal(T.add(denom, eps)))
    return T.add(-T.mean(ratio), 1.0)


def pce_loss(y, labels):
    """Partial cross-entropy over the labeled pixel set only.

    Sums ``-log y[class(i), i]`` across labeled pixels and normalises by
    their count (the unnormalised variant is the same value times
    ``labeled_count``). Unlabeled pixels cannot influence the result.
    """
    if y.data.ndim != 3:
        raise ValueError(f"expected a (K, H, W) probability map, got {y.shape}")
    if y.shape[1:] != labels.shape:
        raise ValueError(f"probability map {y.shape[1:]} and labels {labels.shape} differ in size")
    mask = labels.labels != labels.unlabeled_code
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no supervision: label map has no labeled pixels")
    rows, cols = np.where(mask)
    classes = labels.labels[rows, cols].astype(np.int64)
    if classes.max() >= y.shape[0]:
        raise ValueError(f"label code {classes.max()} outside {y.shape[0]} classes")
    flat = T.reshape(y, (y.shape[0], y.shape[1] * y.shape[2]))
    picked = T.select_class_probs(flat, classes, rows * y.shape[2] + cols)
    return -T.mean(T.log(T.clamp_min(picked, LOG_FLOOR)))


def total_loss(y1, y2, labels, lam, *, dice_target=None, squared_dice=False):
    """Weighted sum: lam * Dice(y1, y2) + (1-lam) * (pCE(y1) + pCE(y2)).

    ``dice_target`` optionally replaces y2 inside the Dice term (the trainer
    passes a detached copy there so the Dice pull treats it as a constant).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"weighting factor must lie in [0, 1], got {lam}")
    target = y2 if dice_target is None else dice_target
    dice = dice_loss(y1, target, squared_denominator=squared_dice)
    pce = T.add(pce_loss(y1, labels), pce_loss(y2, labels))
    return T.add(T.mul(dice, float(lam)), T.mul(pce, float(1.0 - lam)))


# -- hard-label metrics ---------------------------------------------------------


def dice_coefficient(pred, gt, c):
    """2|P & G| / (|P| + |G|) for class c; 1.0 when both regions are empty."""
    p = pred.class_mask(c)
    g = gt.class_mask(c)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def boundary_pixels(mask):
    """Class pixels with a 4-neighbour outside the class (image border counts
    as outside). Returns an (n, 2) int array of (row, col) coordinates."""
    mask = np.asarray(mask, dtype=bool)
    cross = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=cross, border_value=0)
    return np.argwhere(mask & ~interior)


def _nearest_rank_percentile(sorted_values, q):
    n = sorted_values.size
    rank = max(1, int(np.ceil(q * n)))
    return float(sorted_values[rank - 1])


def _directed_min_sq_distances(src, dst):
    """For each src point, min squared Euclidean distance to dst (exact ints)."""
    src = src.astype(np.int64)
    dst = dst.astype(np.int64)
    out = np.empty(src.shape[0], dtype=np.int64)
    chunk = max(1, 2_000_000 // max(1, dst.shape[0]))
    for lo in range(0, src.shape[0], chunk):
        block = src[lo:lo + chunk]
        d2 = ((block[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
        out[lo:lo + chunk] = d2.min(axis=1)
    return out


def hd95(pred, gt, c, spacing=1.0):
    """Symmetric 95th-percentile boundary distance for class c, in mm.

    Distances run between boundary pixel sets (squared integer arithmetic,
    square root applied at the end); the percentile is nearest-rank. When one
    region is empty the full image diagonal is returned with ``degenerate``
    set; when both are empty the result is 0 with ``degenerate`` set.
    Returns (value_mm, degenerate_flag).
    """
    bp = boundary_pixels(pred.class_mask(c))
    bg = boundary_pixels(gt.class_mask(c))
    h, w = pred.shape
    if bp.shape[0] == 0 and bg.shape[0] == 0:
        return 0.0, True
    if bp.shape[0] == 0 or bg.shape[0] == 0:
        return float(np.sqrt(h * h + w * w) * spacing), True
    d_pg = np.sqrt(np.sort(_directed_min_sq_distances(bp, bg)).astype(np.float64))
    d_gp = np.sqrt(np.sort(_directed_min_sq_distances(bg, bp)).astype(np.float64))
    value = max(_nearest_rank_percentile(d_pg, 0.95), _nearest_rank_percentile(d_gp, 0.95))
    return value * float(spacing), False


def hd95_bruteforce(pred, gt, c, spacing=1.0):
    """Independent O(n^2) oracle for :func:`hd95`: plain loops, no chunking.

    Also returns the exact (100th percentile) Hausdorff distance so callers
    can check hd95 <= hd.
    """
    bp = boundary_pixels(pred.class_mask(c))
    bg = boundary_pixels(gt.class_mask(c))
    h, w = pred.shape
    if bp.shape[0] == 0 and bg.shape[0] == 0:
        return 0.0, 0.0, True
    if bp.shape[0] == 0 or bg.shape[0] == 0:
        sentinel = float(np.sqrt(h * h + w * w) * spacing)
        return sentinel, sentinel, True

    def directed(src, dst):
        mins = []
        for r, cc in src:
            best = None
            for r2, c2 in dst:
                d2 = (int(r) - int(r2)) ** 2 + (int(cc) - int(c2)) ** 2
                if best is None or d2 < best:
                    best = d2
            mins.append(best)
        return np.sqrt(np.sort(np.array(mins, dtype=np.int64)).astype(np.float64))

    d_pg = directed(bp, bg)
    d_gp = directed(bg, bp)
    p95 = max(_nearest_rank_percentile(d_pg, 0.95), _nearest_rank_percentile(d_gp, 0.95))
    p100 = max(float(d_pg[-1]), float(d_gp[-1]))
    return p95 * float(spacing), p100 * float(spacing), False


def evaluate_case(pred, gt, classes, spacing=1.0):
    """Per-class (dice, hd95, flag) rows for one predicted/reference pair."""
    rows = []
    for c in classes:
        d = dice_coefficient(pred, gt, c)
        h, degenerate = hd95(pred, gt, c, spacing=spacing)
        rows.append({"class": c, "dice": d, "hd95_mm": h, "degenerate": degenerate})
    return rows
