"""Boundary estimation by iterative scribble propagation.

Starting from sparse per-class scribbles, each round dilates the scribbles
with a growing square kernel, gates candidate pixels by a counting map that
limits how many edge pixels may accumulate locally, and intersects the result
with an image edge map. Surviving pixels are unioned into the per-class
boundary map, and finally merged back into the scribbles as extra supervision.

All maps are plain numpy arrays; LabelMap/BoundaryMap carry the metadata that
matters (class codes, kernel schedule, per-iteration snapshots).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

UNLABELED = 255

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T


@dataclass
class LabelMap:
    """Integer class image; pixels are class codes in [0, num_classes) or 255."""

    labels: np.ndarray
    num_classes: int
    unlabeled_code: int = UNLABELED

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ValueError("labels must be a 2-D array")
        if self.labels.dtype != np.uint8:
            self.labels = self.labels.astype(np.uint8)

    @property
    def shape(self):
        return self.labels.shape

    def validate(self):
        valid = (self.labels < self.num_classes) | (self.labels == self.unlabeled_code)
        if not valid.all():
            bad = np.unique(self.labels[~valid])
            raise ValueError(f"labels contain invalid codes {bad.tolist()} "
                             f"for {self.num_classes} classes")
        return self

    def present_classes(self):
        codes = np.unique(self.labels)
        return [int(c) for c in codes if c != self.unlabeled_code]

    def class_mask(self, c):
        return self.labels == c

    def copy(self):
        return LabelMap(self.labels.copy(), self.num_classes, self.unlabeled_code)


@dataclass
class BoundaryMap:
    """Per-class boundary pixels plus the run's schedule and snapshots.

    ``per_class[c]`` is the accumulated boundary mask for class c;
    ``snapshots[c][i]`` is its state after iteration i (for monotonicity
    checks and debugging); ``edge_map`` is the detector output the run
    intersected against.
    """

    per_class: dict
    schedule: tuple
    thresholds: dict
    snapshots: dict = field(default_factory=dict)
    edge_map: np.ndarray | None = None

    def classes(self):
        return sorted(self.per_class)


def _check_grayscale(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("expected a single-channel 2-D image")
    if image.min() < -1e-6 or image.max() > 1 + 1e-6:
        raise ValueError("image values must lie in [0, 1]")
    return np.clip(image, 0.0, 1.0)


def _sobel_magnitude(image):
    """Gradient magnitude with edge-replicated borders.

    Unnormalised kernel sums: a clean unit step produces magnitude 4, so
    thresholds are expressed on that scale.
    """
    gx = ndimage.correlate(image, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(image, SOBEL_Y, mode="nearest")
    return np.sqrt(gx * gx + gy * gy), gx, gy


def detect_edges(image, method="canny", *, threshold=0.5, sigma=1.0, low=0.1, high=0.2):
    """Binary edge map of a [0, 1] grayscale image.

    ``sobel`` thresholds the raw gradient magnitude; ``canny`` runs the usual
    pipeline (gaussian blur, gradient, non-maximum suppression along the
    quantised gradient direction, double threshold with hysteresis linking).
    """
    image = _check_grayscale(image)
    if method == "sobel":
        mag, _, _ = _sobel_magnitude(image)
        return mag > threshold
    if method != "canny":
        raise ValueError(f"unknown edge method {method!r}")
    if low >= high:
        raise ValueError(f"canny thresholds must satisfy low < high, got {low} >= {high}")
    blurred = ndimage.gaussian_filter(image, sigma=sigma, mode="nearest")
    mag, gx, gy = _sobel_magnitude(blurred)
    # non-maximum suppression: compare against the two neighbours along the
    # gradient direction, quantised to 4 orientations
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    padded = np.pad(mag, 1, mode="constant")
    h, w = mag.shape
    center = padded[1:h + 1, 1:w + 1]
    offsets = {
        0: ((0, 1), (0, -1)),      # horizontal gradient: compare left/right
        45: ((1, 1), (-1, -1)),    # gradient towards lower-right
        90: ((1, 0), (-1, 0)),     # vertical gradient: compare up/down
        135: ((1, -1), (-1, 1)),   # gradient towards lower-left
    }
    bins = np.zeros_like(mag, dtype=np.int64)
    bins[(angle >= 22.5) & (angle < 67.5)] = 45
    bins[(angle >= 67.5) & (angle < 112.5)] = 90
    bins[(angle >= 112.5) & (angle < 157.5)] = 135
    keep = np.zeros_like(mag, dtype=bool)
    for direction, ((dr1, dc1), (dr2, dc2)) in offsets.items():
        sel = bins == direction
        n1 = padded[1 + dr1:h + 1 + dr1, 1 + dc1:w + 1 + dc1]
        n2 = padded[1 + dr2:h + 1 + dr2, 1 + dc2:w + 1 + dc2]
        keep |= sel & (center >= n1) & (center >= n2)
    thin = np.where(keep, mag, 0.0)
    strong = thin > high
    weak = thin > low
    # hysteresis: keep weak components touching a strong pixel (8-connected)
    structure = np.ones((3, 3), dtype=bool)
    labels, n = ndimage.label(weak, structure=structure)
    if n == 0:
        return np.zeros_like(weak)
    strong_ids = np.unique(labels[strong])
    strong_ids = strong_ids[strong_ids != 0]
    return np.isin(labels, strong_ids)


def dilate_class(scribbles, c, k):
    """Square k x k dilation of class-c scribble pixels (window clamped at borders)."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"dilation kernel must be a positive odd size, got {k}")
    mask = scribbles.class_mask(c)
    if k == 1:
        return mask.copy()
    return ndimage.maximum_filter(mask, size=k, mode="constant", cval=False)


def counting_map(prev_boundary, k, n_c):
    """Gate that closes where the k x k window already holds >= n_c boundary pixels.

    Windows are zero-padded at the borders: missing pixels contribute nothing
    to the count.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"counting kernel must be a positive odd size, got {k}")
    if n_c < 1:
        raise ValueError(f"threshold must be positive, got {n_c}")
    counts = ndimage.correlate(prev_boundary.astype(np.int64), np.ones((k, k), dtype=np.int64),
                               mode="constant", cval=0)
    return counts < n_c


def default_thresholds(schedule, classes):
    """Per-class gate thresholds: twice the current kernel size works well as a
    cap on newly admitted edge pixels, so the default ties n_c to max(schedule)."""
    cap = 2 * max(schedule)
    return {c: cap for c in classes}


def spobe(image, scribbles, *, edge_method="canny", schedule=(3, 5, 7, 9, 11),
          thresholds=None, edge_params=None):
    """Estimate per-class object boundary pixels from scribbles and edges.

    Iteration 1 admits every edge pixel inside the first dilation (its gate is
    all-ones); later iterations dilate with strictly larger kernels and gate on
    the accumulated boundary map. Classes whose scribbles are empty are
    skipped with a warning.
    """
    schedule = tuple(int(k) for k in schedule)
    if len(schedule) == 0:
        raise ValueError("schedule must contain at least one kernel size")
    if any(k % 2 == 0 or k < 1 for k in schedule):
        raise ValueError(f"schedule must hold odd positive sizes, got {schedule}")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError(f"schedule must be strictly increasing, got {schedule}")
    scribbles.validate()
    edge_map = detect_edges(image, method=edge_method, **(edge_params or {}))
    if edge_map.shape != scribbles.shape:
        raise ValueError(f"image {edge_map.shape} and scribbles {scribbles.shape} differ in size")
    classes = list(range(scribbles.num_classes))
    if thresholds is None:
        thresholds = default_thresholds(schedule, classes)
    per_class = {}
    snapshots = {}
    for c in classes:
        if not scribbles.class_mask(c).any():
            warnings.warn(f"class {c} has no scribble pixels; skipped", stacklevel=2)
            continue
        n_c = int(thresholds[c])
        accum = np.zeros(scribbles.shape, dtype=bool)
        steps = []
        for i, k in enumerate(schedule):
            dilated = dilate_class(scribbles, c, k)
            gate = np.ones(scribbles.shape, dtype=bool) if i == 0 else counting_map(accum, k, n_c)
            accum = accum | (dilated & gate & edge_map)
            steps.append(accum.copy())
        per_class[c] = accum
        snapshots[c] = steps
    return BoundaryMap(per_class=per_class, schedule=schedule,
                       thresholds={c: int(thresholds[c]) for c in per_class},
                       snapshots=snapshots, edge_map=edge_map)


def enrich_scribbles(scribbles, boundaries):
    """Merge boundary pixels into the scribbles as additional labels.

    Original scribble labels always win; an unlabeled pixel claimed by exactly
    one class's boundary takes that class; pixels claimed by several classes
    stay unlabeled (never inject contradictory supervision).
    """
    out = scribbles.copy()
    if not boundaries.per_class:
        return out
    classes = boundaries.classes()
    stackmaps = np.stack([boundaries.per_class[c] for c in classes])
    if stackmaps.shape[1:] != scribbles.shape:
        raise ValueError(f"boundary maps {stackmaps.shape[1:]} do not match scribbles {scribbles.shape}")
    claims = stackmaps.sum(axis=0)
    winner = np.take(np.asarray(classes, dtype=np.uint8), stackmaps.argmax(axis=0))
    unlabeled = out.labels == out.unlabeled_code
    assign = unlabeled & (claims == 1)
    out.labels[assign] = winner[assign]
    return out
