"""Dataset handling: file formats, synthetic case generation, augmentation.

Images are 8/16-bit single-channel PGM or PNG files normalised to [0, 1] on
load; label maps are 8-bit files with class codes 0..K-1 and 255 reserved
for unlabeled pixels. A dataset directory holds three subfolders (images/,
scribbles/, labels/) with matching file names per case.

The synthetic generator renders smooth elliptical structures (with an
annular shell for three-class setups) on a noisy background and derives
1-pixel-wide scribbles by skeletonising each class region.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.morphology import skeletonize

from .spobe import UNLABELED, LabelMap

IMAGE_DIR = "images"
SCRIBBLE_DIR = "scribbles"
LABEL_DIR = "labels"


@dataclass
class Case:
    case_id: str
    image: np.ndarray          # float64 in [0, 1]
    scribbles: LabelMap
    ground_truth: LabelMap     # evaluation / scribble synthesis only


@dataclass
class Dataset:
    cases: list
    num_classes: int

    def __len__(self):
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)


# -- file IO -------------------------------------------------------------------


def _atomic_save(img, path):
    tmp = f"{path}.tmp"
    img.save(tmp, format="PNG" if str(path).lower().endswith(".png") else "PPM")
    os.replace(tmp, path)


def save_image(image, path):
    """Store a [0, 1] float image as 8-bit grayscale (atomic write)."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    _atomic_save(Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="L"), path)


def load_image(path):
    """Load a grayscale image file and normalise to [0, 1]."""
    with Image.open(path) as img:
        if img.mode == "I;16":
            return np.asarray(img, dtype=np.float64) / 65535.0
        if img.mode != "L":
            img = img.convert("L")
        return np.asarray(img, dtype=np.float64) / 255.0


def save_labelmap(labelmap, path):
    """Store class codes verbatim as an 8-bit image (atomic write)."""
    _atomic_save(Image.fromarray(labelmap.labels, mode="L"), path)


def load_labelmap(path, num_classes):
    with Image.open(path) as img:
        if img.mode != "L":
            raise ValueError(f"{path}: label maps must be 8-bit single channel, got mode {img.mode}")
        labels = np.asarray(img, dtype=np.uint8)
    return LabelMap(labels.copy(), num_classes).validate()


def resize_image(image, size):
    """Bilinear resize to a square (size x size) float image."""
    img = Image.fromarray(np.asarray(image, dtype=np.float32), mode="F")
    out = img.resize((size, size), resample=Image.BILINEAR)
    return np.clip(np.asarray(out, dtype=np.float64), 0.0, 1.0)


def resize_labelmap(labelmap, size):
    """Nearest-neighbour resize; codes never mix or bleed."""
    img = Image.fromarray(labelmap.labels, mode="L")
    out = img.resize((size, size), resample=Image.NEAREST)
    return LabelMap(np.asarray(out, dtype=np.uint8).copy(), labelmap.num_classes,
                    labelmap.unlabeled_code)


def save_dataset(dataset, root):
    for sub in (IMAGE_DIR, SCRIBBLE_DIR, LABEL_DIR):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    for case in dataset.cases:
        name = f"{case.case_id}.png"
        save_image(case.image, os.path.join(root, IMAGE_DIR, name))
        save_labelmap(case.scribbles, os.path.join(root, SCRIBBLE_DIR, name))
        save_labelmap(case.ground_truth, os.path.join(root, LABEL_DIR, name))
    with open(os.path.join(root, "dataset.txt"), "w") as fh:
        fh.write(f"num_classes={dataset.num_classes}\n")
        fh.write(f"cases={len(dataset.cases)}\n")


def load_dataset(root, resize=None):
    """Read a dataset directory; optional square resize applied per case."""
    meta_path = os.path.join(root, "dataset.txt")
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"{root}: missing dataset.txt manifest")
    meta = {}
    with open(meta_path) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                meta[key] = value
    num_classes = int(meta["num_classes"])
    names = sorted(os.listdir(os.path.join(root, IMAGE_DIR)))
    cases = []
    for name in names:
        image_path = os.path.join(root, IMAGE_DIR, name)
        scribble_path = os.path.join(root, SCRIBBLE_DIR, name)
        label_path = os.path.join(root, LABEL_DIR, name)
        image = load_image(image_path)
        scribbles = load_labelmap(scribble_path, num_classes)
        gt = load_labelmap(label_path, num_classes)
        if image.shape != scribbles.shape or image.shape != gt.shape:
            raise ValueError(f"size mismatch between {image_path} ({image.shape}), "
                             f"{scribble_path} ({scribbles.shape}) and {label_path} ({gt.shape})")
        if resize is not None:
            image = resize_image(image, resize)
            scribbles = resize_labelmap(scribbles, resize)
            gt = resize_labelmap(gt, resize)
        cases.append(Case(os.path.splitext(name)[0], image, scribbles, gt))
    return Dataset(cases, num_classes)


PALETTE = [(230, 60, 60), (60, 200, 80), (70, 110, 240), (240, 200, 40),
           (200, 70, 220), (70, 220, 220)]


def save_boundary_overlay(image, boundaries, path, scribbles=None):
    """Colour overlay: boundary pixels per class over the grayscale image."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0, 1)
    rgb = np.stack([(arr * 255).astype(np.uint8)] * 3, axis=-1)
    if scribbles is not None:
        rgb[scribbles.labels != scribbles.unlabeled_code] = (255, 255, 255)
    for i, c in enumerate(boundaries.classes()):
        rgb[boundaries.per_class[c]] = PALETTE[i % len(PALETTE)]
    _atomic_save(Image.fromarray(rgb, mode="RGB"), path)


def save_class_masks(boundaries, out_dir, prefix="boundary"):
    """One 8-bit PGM per class (255 = boundary pixel)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for c in boundaries.classes():
        path = os.path.join(out_dir, f"{prefix}_class{c}.pgm")
        _atomic_save(Image.fromarray((boundaries.per_class[c] * 255).astype(np.uint8), mode="L"),
                     path)
        paths.append(path)
    return paths


# -- synthetic generation --------------------------------------------------------


def _ellipse_mask(size, center, axes, angle):
    yy, xx = np.mgrid[0:size, 0:size]
    dy = yy - center[0]
    dx = xx - center[1]
    cos, sin = np.cos(angle), np.sin(angle)
    u = dx * cos + dy * sin
    v = -dx * sin + dy * cos
    return (u / axes[1]) ** 2 + (v / axes[0]) ** 2 <= 1.0


def _skeleton_scribble(mask, rng):
    """1-pixel-wide scribble inside a region via skeletonisation.

    Falls back to the region's first pixel if the skeleton vanishes.
    """
    if not mask.any():
        return np.zeros_like(mask)
    skel = skeletonize(mask)
    if not skel.any():
        rows, cols = np.nonzero(mask)
        skel = np.zeros_like(mask)
        skel[rows[0], cols[0]] = True
    return skel & mask


def synth_case(rng, size, num_classes):
    """Render one case: ground-truth labels, noisy image, skeleton scribbles."""
    gt = np.zeros((size, size), dtype=np.uint8)
    margin = size // 4
    center = (rng.uniform(margin, size - margin), rng.uniform(margin, size - margin))
    outer = (rng.uniform(size * 0.18, size * 0.30), rng.uniform(size * 0.18, size * 0.30))
    angle = rng.uniform(0, np.pi)
    blob = _ellipse_mask(size, center, outer, angle)
    if num_classes == 2:
        gt[blob] = 1
    else:
        # annular shell (class 2) around the interior structure (class 1)
        inner = (outer[0] * rng.uniform(0.45, 0.6), outer[1] * rng.uniform(0.45, 0.6))
        core = _ellipse_mask(size, center, inner, angle)
        gt[blob & ~core] = 2
        gt[core] = 1
    if num_classes == 4:
        for _ in range(8):  # find a spot for a second structure
            c2 = (rng.uniform(margin * 0.6, size - margin * 0.6),
                  rng.uniform(margin * 0.6, size - margin * 0.6))
            axes2 = (rng.uniform(size * 0.08, size * 0.14), rng.uniform(size * 0.08, size * 0.14))
            extra = _ellipse_mask(size, c2, axes2, rng.uniform(0, np.pi))
            if not (extra & (gt > 0)).any() and extra.any():
                gt[extra] = 3
                break
    intensity = {0: 0.15, 1: 0.75, 2: 0.45, 3: 0.62}
    image = np.zeros((size, size), dtype=np.float64)
    for c in range(num_classes):
        image[gt == c] = intensity[c]
    image = ndimage.gaussian_filter(image, sigma=0.8, mode="nearest")
    image = image + rng.normal(0.0, 0.02, image.shape)
    image = np.clip(image, 0.0, 1.0)
    scribbles = np.full((size, size), UNLABELED, dtype=np.uint8)
    for c in range(num_classes):
        skel = _skeleton_scribble(gt == c, rng)
        scribbles[skel] = c
    return image, LabelMap(scribbles, num_classes), LabelMap(gt, num_classes)


def synth_dataset(seed, n_cases, size=32, num_classes=2):
    """Deterministic synthetic dataset; same seed, same bits."""
    if size < 16:
        raise ValueError("synthetic images need size >= 16")
    if num_classes not in (2, 3, 4):
        raise ValueError(f"synthetic renderer supports 2-4 classes, got {num_classes}")
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(n_cases):
        image, scribbles, gt = synth_case(rng, size, num_classes)
        cases.append(Case(f"case{i:04d}", image, scribbles, gt))
    return Dataset(cases, num_classes)


# -- augmentation ----------------------------------------------------------------


def augment_case(image, maps, rng, noise_sigma=0.01):
    """Random quarter rotation, flips and gaussian image noise.

    ``maps`` is a list of (H, W) label arrays transformed jointly with the
    image (no interpolation, so codes are preserved).
    """
    k = int(rng.integers(0, 4))
    flip_lr = bool(rng.integers(0, 2))
    flip_ud = bool(rng.integers(0, 2))

    def apply(arr):
        out = np.rot90(arr, k)
        if flip_lr:
            out = np.fliplr(out)
        if flip_ud:
            out = np.flipud(out)
        return np.ascontiguousarray(out)

    image = apply(image)
    if noise_sigma > 0:
        image = np.clip(image + rng.normal(0.0, noise_sigma, image.shape), 0.0, 1.0)
    return image, [apply(m) for m in maps]
