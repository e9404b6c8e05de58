"""Pluggable guide models that refine coarse masks from box prompts.

A guide exposes the encoder / prompt-encoder / decoder triple of a
promptable segmenter: ``encode_image`` caches the image and returns an
embedding, ``encode_prompt`` embeds class bounding boxes, and ``decode``
produces a refined probability map from the fused embedding and the prompts.
Only decoder parameters are trainable; encoders stay frozen.

Two desk-scale implementations are provided: an identity guide that echoes
the coarse prediction (useful for isolating training mechanics) and a
synthetic oracle that grows regions from supervision seeds across a
low-gradient cost graph inside each prompt box, smooths them morphologically,
and calibrates the softened result with a small trainable head.
"""

from __future__ import annotations

import heapq
from abc import ABC, abstractmethod

import numpy as np
from scipy import ndimage

from . import tensor as T
from .prompts import BBox
from .spobe import _sobel_magnitude
from .tensor import Tensor


class GuideModel(ABC):
    """Encoder / prompt-encoder / decoder triple with a trainable decoder."""

    @abstractmethod
    def encode_image(self, image):
        """Cache the (1, H, W) image tensor and return its embedding."""

    @abstractmethod
    def encode_prompt(self, boxes):
        """Embed a list of class bounding boxes."""

    @abstractmethod
    def decode(self, fused, prompt, coarse=None):
        """Refined (K, H, W) probability map.

        ``coarse`` carries the coarse prediction for guides that condition on
        it (the identity guide returns it verbatim).
        """

    def decoder_parameters(self):
        """Trainable decoder tensors (may be empty)."""
        return []

    def encoder_parameters(self):
        """Frozen encoder tensors, exposed for isolation checks."""
        return []

    def set_supervision(self, labels):
        """Receive the current supervision label map (seeds for refinement)."""


class IdentityGuide(GuideModel):
    """Echoes the coarse prediction; the mask path carries no parameters."""

    def __init__(self, num_classes):
        self.num_classes = num_classes
        self._image = None

    def encode_image(self, image):
        self._image = image.data[0]
        return Tensor(np.zeros_like(image.data))

    def encode_prompt(self, boxes):
        arr = (np.stack([b.as_array() for b in boxes]).astype(np.float64)
               if boxes else np.zeros((0, 5)))
        return Tensor(arr)

    def decode(self, fused, prompt, coarse=None):
        if coarse is None:
            raise ValueError("identity guide needs the coarse prediction")
        return coarse.detach()


def grow_labels(image, seed_labels, unlabeled_code, num_classes):
    """Multi-source shortest-path labelling over a gradient-cost graph.

    Every pixel takes the class of its geodesically nearest seed, where
    stepping onto a pixel costs its gradient magnitude plus a small constant;
    paths therefore prefer to stay inside homogeneous regions. Deterministic:
    heap ties resolve by insertion order.
    """
    h, w = image.shape
    mag, _, _ = _sobel_magnitude(image)
    cost = mag + 0.02
    dist = np.full((h, w), np.inf)
    out = np.full((h, w), unlabeled_code, dtype=np.uint8)
    settled = np.zeros((h, w), dtype=bool)
    heap = []
    counter = 0
    rows, cols = np.where(seed_labels != unlabeled_code)
    for r, c in zip(rows.tolist(), cols.tolist()):
        lab = int(seed_labels[r, c])
        if lab >= num_classes:
            continue
        dist[r, c] = 0.0
        heap.append((0.0, counter, r, c, lab))
        counter += 1
    heapq.heapify(heap)
    while heap:
        d, _, r, c, lab = heapq.heappop(heap)
        if settled[r, c]:
            continue
        settled[r, c] = True
        out[r, c] = lab
        for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and not settled[nr, nc]:
                nd = d + cost[nr, nc]
                if nd < dist[nr, nc]:
                    dist[nr, nc] = nd
                    counter += 1
                    heapq.heappush(heap, (nd, counter, nr, nc, lab))
    return out


class SyntheticOracleGuide(GuideModel):
    """Desk-scale stand-in for a promptable foundation segmenter.

    Within each prompt box, pixels are assigned by seeded region growing from
    the supervision labels over the image's gradient-cost graph, smoothed by
    one morphological open/close round, and softened to a fixed in-region
    confidence. Everything outside every box is background. A trainable
    calibration head (temperature, per-class bias, 1x1 conv over the fused
    embedding) forms the decoder; the image encoder is a frozen random
    convolution stack.
    """

    def __init__(self, num_classes, fused_channels, seed=0, confidence=0.9,
                 embed_channels=8, dtype=np.float32):
        if not 0.5 < confidence < 1.0:
            raise ValueError("confidence must lie in (0.5, 1)")
        self.num_classes = num_classes
        self.confidence = confidence
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        std = np.sqrt(2.0 / 9.0)
        self._enc_w1 = Tensor(rng.normal(0, std, (embed_channels, 1, 3, 3)).astype(dtype))
        self._enc_w2 = Tensor(rng.normal(0, np.sqrt(2.0 / (embed_channels * 9)),
                                         (embed_channels, embed_channels, 3, 3)).astype(dtype))
        self.temperature = Tensor(np.ones(1, dtype=dtype), requires_grad=True)
        self.class_bias = Tensor(np.zeros((num_classes, 1, 1), dtype=dtype), requires_grad=True)
        self.head_weight = Tensor(np.zeros((num_classes, fused_channels, 1, 1), dtype=dtype),
                                  requires_grad=True)
        self.head_bias = Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True)
        self._image = None
        self._seeds = None

    def decoder_parameters(self):
        return [self.temperature, self.class_bias, self.head_weight, self.head_bias]

    def encoder_parameters(self):
        return [self._enc_w1, self._enc_w2]

    def set_supervision(self, labels):
        self._seeds = labels

    def encode_image(self, image):
        """Frozen two-stage strided convolution stack (stride 4 overall)."""
        self._image = image.data[0]
        with_grad = T.relu(T.conv2d(image, self._enc_w1, stride=2, padding=1))
        return T.relu(T.conv2d(with_grad, self._enc_w2, stride=2, padding=1))

    def encode_prompt(self, boxes):
        arr = (np.stack([b.as_array() for b in boxes]).astype(np.float64)
               if boxes else np.zeros((0, 5)))
        return Tensor(arr)

    def _grown_probabilities(self, boxes):
        image = self._image
        if image is None:
            raise RuntimeError("decode before encode_image")
        if self._seeds is None:
            raise RuntimeError("decode before set_supervision")
        h, w = image.shape
        k = self.num_classes
        grown = grow_labels(image, self._seeds.labels, self._seeds.unlabeled_code, k)
        refined = np.zeros((h, w), dtype=np.uint8)
        cross = ndimage.generate_binary_structure(2, 1)
        for c in range(1, k):
            class_boxes = [b for b in boxes if b.class_id == c]
            if not class_boxes:
                continue
            box_region = np.zeros((h, w), dtype=bool)
            for b in class_boxes:
                box_region[b.min_row:b.max_row + 1, b.min_col:b.max_col + 1] = True
            mask = (grown == c) & box_region
            smooth = ndimage.binary_closing(ndimage.binary_opening(mask, structure=cross),
                                            structure=cross)
            smooth &= box_region
            if not smooth.any():
                smooth = mask  # opening erased a thin region; keep the raw growth
            refined[smooth] = c
        probs = np.full((k, h, w), (1.0 - self.confidence) / (k - 1), dtype=np.float64)
        for c in range(k):
            probs[c][refined == c] = self.confidence
        return probs

    def decode(self, fused, prompt, coarse=None):
        boxes = [BBox(int(row[0]), int(row[1]), int(row[2]), int(row[3]), int(row[4]))
                 for row in prompt.data]
        grown = self._grown_probabilities(boxes)
        h, w = grown.shape[1:]
        base = T.log(Tensor(grown.astype(self.dtype)))
        logits = T.mul(base, T.broadcast_to(T.reshape(self.temperature, (1, 1, 1)), base.shape))
        logits = T.add(logits, T.broadcast_to(self.class_bias, base.shape))
        # fused embedding enters through the trainable head only; no gradient
        # path back into either encoder is needed, so detach at the boundary
        head = T.conv2d(fused.detach(), self.head_weight, self.head_bias)
        head = T.resize_bilinear(head, h, w)
        return T.softmax(T.add(logits, head), axis=0)
