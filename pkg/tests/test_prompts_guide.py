import numpy as np
import pytest

import sparsemamba.tensor as T
from sparsemamba.guide import IdentityGuide, SyntheticOracleGuide, grow_labels
from sparsemamba.losses import pce_loss
from sparsemamba.prompts import BBox, extract_bboxes, trace_contours
from sparsemamba.spobe import LabelMap
from sparsemamba.tensor import Tensor


def _labelmap(arr, k=2):
    return LabelMap(np.asarray(arr, dtype=np.uint8), k)


def _adjacent(p, q):
    return max(abs(p[0] - q[0]), abs(p[1] - q[1])) == 1


# -- contours --------------------------------------------------------------------


def test_square_contour_cycle():
    mask = np.zeros((5, 5), bool)
    mask[1:3, 1:3] = True
    contour = trace_contours(mask, class_id=1)[0]
    assert contour.pixels == [(1, 1), (1, 2), (2, 2), (2, 1)]
    assert contour.class_id == 1


def test_contour_closed_8_connected_cycle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mask = np.zeros((10, 10), bool)
        r, c = rng.integers(1, 5, 2)
        mask[r:r + rng.integers(2, 5), c:c + rng.integers(2, 5)] = True
        if rng.integers(0, 2):
            mask[r, c] = False  # notch a corner
        for contour in trace_contours(mask):
            pts = contour.pixels
            assert all(mask[p] for p in pts)
            if len(pts) >= 2:
                for p, q in zip(pts, pts[1:]):
                    assert _adjacent(p, q)
                assert _adjacent(pts[-1], pts[0])


def test_single_pixel_contour():
    mask = np.zeros((3, 3), bool)
    mask[2, 0] = True
    assert trace_contours(mask)[0].pixels == [(2, 0)]


def test_contours_one_per_component():
    mask = np.zeros((6, 6), bool)
    mask[0:2, 0:2] = True
    mask[4:6, 4:6] = True
    assert len(trace_contours(mask)) == 2


# -- bounding boxes --------------------------------------------------------------


def test_bbox_scribble_fallback():
    scr = _labelmap(np.full((4, 4), 255))
    scr.labels[0, 1] = 1
    probs = np.zeros((2, 4, 4))
    probs[0] = 1.0
    boxes = extract_bboxes(probs, scr)
    assert boxes == [BBox(1, 0, 1, 0, 1)]


def test_bbox_union_of_mask_and_scribbles():
    scr = _labelmap(np.full((4, 4), 255))
    scr.labels[0, 1] = 1
    probs = np.zeros((2, 4, 4))
    probs[0] = 1.0
    probs[:, 1, 1] = [0.1, 0.9]
    probs[:, 2, 3] = [0.2, 0.8]
    assert extract_bboxes(probs, scr) == [BBox(1, 0, 1, 2, 3)]


def test_bbox_full_image_saturation():
    scr = _labelmap(np.full((4, 4), 255))
    scr.labels[2, 2] = 1
    probs = np.zeros((2, 4, 4))
    probs[1] = 1.0
    assert extract_bboxes(probs, scr) == [BBox(1, 0, 0, 3, 3)]


def test_bbox_absent_class_emits_nothing():
    scr = _labelmap(np.full((4, 4), 255), k=3)
    scr.labels[1, 1] = 1
    probs = np.zeros((3, 4, 4))
    probs[0] = 1.0
    boxes = extract_bboxes(probs, scr)
    assert [b.class_id for b in boxes] == [1]


def test_bbox_contains_scribble_box():
    rng = np.random.default_rng(1)
    for _ in range(20):
        labels = np.full((8, 8), 255, dtype=np.uint8)
        pts = rng.integers(0, 8, (3, 2))
        for r, c in pts:
            labels[r, c] = 1
        scr = _labelmap(labels)
        probs = rng.dirichlet((1, 1), (8, 8)).transpose(2, 0, 1)
        boxes = extract_bboxes(probs, scr)
        box = next(b for b in boxes if b.class_id == 1)
        assert box.min_row <= pts[:, 0].min() and box.max_row >= pts[:, 0].max()
        assert box.min_col <= pts[:, 1].min() and box.max_col >= pts[:, 1].max()


def test_bbox_tau_validation():
    scr = _labelmap(np.full((2, 2), 255))
    with pytest.raises(ValueError):
        extract_bboxes(np.zeros((2, 2, 2)), scr, tau=1.0)


def test_bbox_degenerate_rejected():
    with pytest.raises(ValueError):
        BBox(1, 2, 2, 1, 3)


# -- region growing --------------------------------------------------------------


def test_grow_labels_splits_along_edge():
    image = np.zeros((8, 8))
    image[:, 4:] = 1.0
    seeds = np.full((8, 8), 255, dtype=np.uint8)
    seeds[4, 1] = 0
    seeds[4, 6] = 1
    grown = grow_labels(image, seeds, 255, 2)
    assert (grown[:, :4] == 0).all()
    assert (grown[:, 5:] == 1).all()


def test_grow_labels_deterministic():
    rng = np.random.default_rng(2)
    image = rng.uniform(0, 1, (10, 10))
    seeds = np.full((10, 10), 255, dtype=np.uint8)
    seeds[2, 2] = 0
    seeds[7, 7] = 1
    a = grow_labels(image, seeds, 255, 2)
    b = grow_labels(image, seeds, 255, 2)
    assert np.array_equal(a, b)


# -- guides ----------------------------------------------------------------------


def test_identity_guide_echoes_detached_coarse():
    guide = IdentityGuide(2)
    coarse = Tensor(np.random.default_rng(3).dirichlet((1, 1), (4, 4)).transpose(2, 0, 1),
                    requires_grad=True)
    out = guide.decode(None, guide.encode_prompt([]), coarse=coarse)
    assert np.array_equal(out.data, coarse.data)
    assert not out.tracked
    assert guide.decoder_parameters() == []


def _oracle_setup(seed=0, size=16, k=2):
    rng = np.random.default_rng(seed)
    image = np.full((size, size), 0.2)
    image[4:12, 4:12] = 0.8
    image += rng.normal(0, 0.01, image.shape)
    image = np.clip(image, 0, 1)
    seeds = np.full((size, size), 255, dtype=np.uint8)
    seeds[7, 7] = 1
    seeds[1, 1] = 0
    guide = SyntheticOracleGuide(k, fused_channels=4, seed=seed)
    x = Tensor(image[None].astype(np.float32))
    emb = guide.encode_image(x)
    guide.set_supervision(LabelMap(seeds, k))
    boxes = [BBox(1, 3, 3, 12, 12)]
    prompt = guide.encode_prompt(boxes)
    fused = Tensor(np.random.default_rng(1).normal(0, 1, (4, size // 4, size // 4))
                   .astype(np.float32))
    return guide, fused, prompt, emb


def test_oracle_decode_simplex_and_background_outside_boxes():
    guide, fused, prompt, _ = _oracle_setup()
    probs = guide.decode(fused, prompt)
    assert probs.shape == (2, 16, 16)
    assert np.abs(probs.data.sum(axis=0) - 1).max() < 1e-5
    hard = probs.data.argmax(axis=0)
    assert (hard[0:3, :] == 0).all()
    assert (hard[:, 0:3] == 0).all()
    assert hard[7, 7] == 1  # grows the bright blob inside the box


def test_oracle_decoder_params_receive_gradients():
    guide, fused, prompt, _ = _oracle_setup()
    labels = np.full((16, 16), 255, dtype=np.uint8)
    labels[7, 7] = 1
    labels[1, 1] = 0
    probs = guide.decode(fused, prompt)
    pce_loss(probs, LabelMap(labels, 2)).backward()
    for p in guide.decoder_parameters():
        assert p.grad is not None


def test_oracle_encoder_stays_frozen():
    guide, fused, prompt, emb = _oracle_setup()
    assert all(not p.requires_grad for p in guide.encoder_parameters())
    assert not emb.tracked


def test_oracle_embedding_shape_downsamples():
    guide, _, _, emb = _oracle_setup()
    assert emb.shape == (8, 4, 4)
