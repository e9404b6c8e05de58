import os

import numpy as np
import pytest

import sparsemamba.tensor as T
from sparsemamba.network import (DualAttention, NetworkConfig, SparseMambaBlock,
                                 SparseMambaNet, assert_probability_map,
                                 load_checkpoint, load_into_module, save_checkpoint)
from sparsemamba.tensor import Tensor


def micro_config(**kw):
    base = dict(num_classes=2, widths=(4, 8), input_size=(16, 16),
                state_size=2, skip_step=2, use_sparse=True)
    base.update(kw)
    return NetworkConfig(**base)


def test_smb_output_shape_matches_input():
    block = SparseMambaBlock(4, 2, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).uniform(-1, 1, (4, 8, 8)).astype(np.float32))
    assert block(x).shape == (4, 8, 8)


def test_smb_zero_input_zero_output():
    block = SparseMambaBlock(3, 2, np.random.default_rng(2))
    out = block(Tensor(np.zeros((3, 4, 4), dtype=np.float32)))
    assert np.allclose(out.data, 0.0, atol=1e-7)


def test_smb_channel_mismatch():
    block = SparseMambaBlock(3, 2, np.random.default_rng(3))
    with pytest.raises(ValueError):
        block(Tensor(np.zeros((2, 4, 4), dtype=np.float32)))


def test_smb_dense_mode_same_shape():
    sparse = SparseMambaBlock(2, 2, np.random.default_rng(4), use_sparse=True)
    dense = SparseMambaBlock(2, 2, np.random.default_rng(4), use_sparse=False)
    x = Tensor(np.random.default_rng(5).uniform(-1, 1, (2, 4, 4)).astype(np.float32))
    assert sparse(x).shape == dense(x).shape == (2, 4, 4)


def test_dual_attention_identity_at_init():
    attn = DualAttention(3, np.random.default_rng(6))
    x = Tensor(np.random.default_rng(7).uniform(-1, 1, (3, 4, 4)).astype(np.float32))
    assert np.array_equal(attn(x).data, x.data)


def test_dual_attention_rows_sum_to_one():
    attn = DualAttention(3, np.random.default_rng(8))
    x = Tensor(np.random.default_rng(9).uniform(-1, 1, (3, 4, 4)).astype(np.float32))
    pos, chan = attn.attention_maps(x)
    assert np.abs(pos.data.sum(axis=1) - 1).max() <= 1e-6
    assert np.abs(chan.data.sum(axis=1) - 1).max() <= 1e-6


def test_network_output_simplex():
    net = SparseMambaNet(micro_config(), np.random.default_rng(10))
    x = Tensor(np.random.default_rng(11).uniform(0, 1, (1, 16, 16)).astype(np.float32))
    probs, emb = net.forward_with_features(x)
    assert probs.shape == (2, 16, 16)
    assert emb.shape == (8, 8, 8)
    assert_probability_map(probs)


def test_network_forward_deterministic_bits():
    net = SparseMambaNet(micro_config(), np.random.default_rng(12))
    img = np.random.default_rng(13).uniform(0, 1, (1, 16, 16)).astype(np.float32)
    a = net(Tensor(img.copy())).data
    b = net(Tensor(img.copy())).data
    assert np.array_equal(a, b)


def test_network_random_params_finite_32x32():
    config = NetworkConfig(num_classes=3, widths=(4, 8, 16), input_size=(32, 32),
                           state_size=4, skip_step=2)
    net = SparseMambaNet(config, np.random.default_rng(14))
    x = Tensor(np.random.default_rng(15).uniform(0, 1, (1, 32, 32)).astype(np.float32))
    probs = net(x)
    assert probs.shape == (3, 32, 32)
    assert np.all(np.isfinite(probs.data))


def test_network_rejects_bad_input_size():
    net = SparseMambaNet(micro_config(), np.random.default_rng(16))
    with pytest.raises(ValueError):
        net(Tensor(np.zeros((1, 15, 16), dtype=np.float32)))
    with pytest.raises(ValueError):
        net(Tensor(np.zeros((2, 16, 16), dtype=np.float32)))


def test_network_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(num_classes=1).validate()
    with pytest.raises(ValueError):
        NetworkConfig(widths=(4, 8, 16), input_size=(30, 30)).validate()


def test_predict_labels_shape_and_codes():
    net = SparseMambaNet(micro_config(), np.random.default_rng(17))
    labels = net.predict_labels(np.random.default_rng(18).uniform(0, 1, (16, 16)))
    assert labels.shape == (16, 16)
    assert set(np.unique(labels)) <= {0, 1}


def test_dense_sparse_switch_is_config_only():
    img = np.random.default_rng(19).uniform(0, 1, (1, 16, 16)).astype(np.float32)
    out_sparse = SparseMambaNet(micro_config(use_sparse=True),
                                np.random.default_rng(20))(Tensor(img.copy()))
    out_dense = SparseMambaNet(micro_config(use_sparse=False),
                               np.random.default_rng(20))(Tensor(img.copy()))
    assert out_sparse.shape == out_dense.shape
    assert not np.array_equal(out_sparse.data, out_dense.data)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    net = SparseMambaNet(micro_config(), np.random.default_rng(21))
    path = os.path.join(tmp_path, "ckpt.bin")
    save_checkpoint(path, net, meta={"num_classes": 2, "note": "round trip"})
    meta, params = load_checkpoint(path)
    assert meta["num_classes"] == "2"
    fresh = SparseMambaNet(micro_config(), np.random.default_rng(99))
    load_into_module(fresh, params)
    for (name_a, pa), (name_b, pb) in zip(net.named_parameters(), fresh.named_parameters()):
        assert name_a == name_b
        assert np.array_equal(pa.data, pb.data)


def test_checkpoint_magic_rejected(tmp_path):
    path = os.path.join(tmp_path, "bogus.bin")
    with open(path, "wb") as fh:
        fh.write(b"NOTACKPT\nend\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    net = SparseMambaNet(micro_config(), np.random.default_rng(22))
    path = os.path.join(tmp_path, "ckpt.bin")
    save_checkpoint(path, net)
    _, params = load_checkpoint(path)
    other = SparseMambaNet(micro_config(widths=(4, 16)), np.random.default_rng(23))
    with pytest.raises(ValueError):
        load_into_module(other, params)


def test_parameter_names_are_stable_paths():
    net = SparseMambaNet(micro_config(), np.random.default_rng(24))
    names = [n for n, _ in net.named_parameters()]
    assert len(names) == len(set(names))
    assert any(n.startswith("stem.") for n in names)
    assert any(".ssm." in n for n in names)
