import os

import numpy as np
import pytest

from sparsemamba.data import (augment_case, load_dataset, load_image, load_labelmap,
                              resize_image, resize_labelmap, save_dataset, save_image,
                              save_labelmap, synth_dataset)
from sparsemamba.spobe import LabelMap


def test_synth_deterministic_bits():
    a = synth_dataset(0, 4, 32, 2)
    b = synth_dataset(0, 4, 32, 2)
    for ca, cb in zip(a.cases, b.cases):
        assert np.array_equal(ca.image, cb.image)
        assert np.array_equal(ca.scribbles.labels, cb.scribbles.labels)
        assert np.array_equal(ca.ground_truth.labels, cb.ground_truth.labels)
    c = synth_dataset(1, 4, 32, 2)
    assert not np.array_equal(a.cases[0].image, c.cases[0].image)


def test_synth_scribbles_inside_their_class():
    dataset = synth_dataset(3, 6, 32, 3)
    for case in dataset:
        labeled = case.scribbles.labels != 255
        assert labeled.any()
        assert np.array_equal(case.scribbles.labels[labeled],
                              case.ground_truth.labels[labeled])
        for c in range(3):
            assert (case.scribbles.labels == c).any()


def test_synth_annulus_topology_k3():
    dataset = synth_dataset(0, 5, 32, 3)
    from scipy import ndimage
    for case in dataset:
        gt = case.ground_truth.labels
        assert (gt == 1).any() and (gt == 2).any()
        # the core (class 1) is surrounded by the shell: dilating the core
        # exits into class 2, never straight into background
        core = gt == 1
        ring = ndimage.binary_dilation(core) & ~core
        assert (gt[ring] == 2).all()


def test_synth_validation():
    with pytest.raises(ValueError):
        synth_dataset(0, 2, 8, 2)
    with pytest.raises(ValueError):
        synth_dataset(0, 2, 32, 5)


def test_image_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (16, 16))
    path = os.path.join(tmp_path, "img.png")
    save_image(img, path)
    loaded = load_image(path)
    assert loaded.shape == (16, 16)
    assert np.abs(loaded - img).max() <= 1.0 / 255.0  # 8-bit quantisation only


def test_labelmap_round_trip_bit_exact(tmp_path):
    labels = np.full((12, 12), 255, dtype=np.uint8)
    labels[2:5, 3:7] = 1
    labels[8, 8] = 0
    lm = LabelMap(labels, 2)
    for ext in ("png", "pgm"):
        path = os.path.join(tmp_path, f"labels.{ext}")
        save_labelmap(lm, path)
        loaded = load_labelmap(path, 2)
        assert np.array_equal(loaded.labels, labels)


def test_labelmap_invalid_codes_rejected(tmp_path):
    labels = np.full((4, 4), 9, dtype=np.uint8)
    path = os.path.join(tmp_path, "bad.png")
    save_labelmap(LabelMap(labels, 12), path)
    with pytest.raises(ValueError):
        load_labelmap(path, 2)


def test_dataset_round_trip(tmp_path):
    dataset = synth_dataset(0, 3, 32, 2)
    root = os.path.join(tmp_path, "ds")
    save_dataset(dataset, root)
    loaded = load_dataset(root)
    assert len(loaded) == 3
    assert loaded.num_classes == 2
    for orig, back in zip(dataset.cases, loaded.cases):
        assert np.array_equal(orig.scribbles.labels, back.scribbles.labels)
        assert np.array_equal(orig.ground_truth.labels, back.ground_truth.labels)
        assert np.abs(orig.image - back.image).max() <= 1.0 / 255.0


def test_dataset_size_mismatch_names_files(tmp_path):
    dataset = synth_dataset(0, 2, 32, 2)
    root = os.path.join(tmp_path, "ds")
    save_dataset(dataset, root)
    bad = LabelMap(np.zeros((16, 16), dtype=np.uint8), 2)
    save_labelmap(bad, os.path.join(root, "scribbles", "case0000.png"))
    with pytest.raises(ValueError, match="case0000"):
        load_dataset(root)


def test_resize_semantics():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, (64, 64))
    small = resize_image(img, 32)
    assert small.shape == (32, 32)
    assert small.min() >= 0 and small.max() <= 1
    labels = np.full((64, 64), 255, dtype=np.uint8)
    labels[10:30, 10:30] = 1
    lm = resize_labelmap(LabelMap(labels, 2), 32)
    assert lm.labels.shape == (32, 32)
    assert set(np.unique(lm.labels)) <= {1, 255}


def test_resized_dataset_load(tmp_path):
    dataset = synth_dataset(0, 2, 64, 2)
    root = os.path.join(tmp_path, "ds")
    save_dataset(dataset, root)
    loaded = load_dataset(root, resize=32)
    assert loaded.cases[0].image.shape == (32, 32)
    assert loaded.cases[0].scribbles.labels.shape == (32, 32)


def test_augment_transforms_jointly():
    rng = np.random.default_rng(2)
    image = rng.uniform(0, 1, (8, 8))
    marker = np.zeros((8, 8), dtype=np.uint8)
    marker[1, 2] = 7
    for _ in range(10):
        out_img, (out_marker,) = augment_case(image, [marker], rng, noise_sigma=0.0)
        assert out_img.shape == (8, 8)
        r, c = np.argwhere(out_marker == 7)[0]
        # the marked pixel carries its image value along
        assert out_img[r, c] == pytest.approx(image[1, 2])


def test_augment_deterministic_per_rng_state():
    image = np.random.default_rng(3).uniform(0, 1, (8, 8))
    a_img, _ = augment_case(image, [], np.random.default_rng(42), noise_sigma=0.02)
    b_img, _ = augment_case(image, [], np.random.default_rng(42), noise_sigma=0.02)
    assert np.array_equal(a_img, b_img)
