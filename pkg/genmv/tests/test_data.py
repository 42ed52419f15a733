import numpy as np
import pytest
import torch

from genmv.data import SensingDataset, batch_iterator, csi_features
from genmv.tensors import read_tensor, write_tensor


def test_tensor_roundtrip(tmp_path):
    arr = np.linspace(0, 1, 24).reshape(2, 3, 4)
    write_tensor(tmp_path / "t.bin", arr)
    back = read_tensor(tmp_path / "t.bin")
    assert np.array_equal(back, arr)


def test_csi_features_interleaves_real_imag():
    csi = np.array([[[[1 + 2j, 3 - 1j]]]])  # (1, 1, 1, 2)
    feats = csi_features(csi)
    assert feats.shape == (1, 1, 4)
    assert feats[0, 0].tolist() == [1.0, 2.0, 3.0, -1.0]


def test_dataset_reader(tiny_dataset):
    ds = SensingDataset(tiny_dataset)
    train = ds.indices("train")
    assert len(train) == 8
    sample = ds.sample("train", train[0])
    assert sample["csi"].shape == (2, 3, ds.csi_feature_dim)
    assert sample["cloud"].shape == (32, 4)
    assert sample["bs_pos"].shape == (2, 2)
    assert sample["ue_pos"].shape == (3, 2)
    assert ds.csi_scale > 0
    # normalized training clouds have roughly unit spread
    stacked = np.vstack([ds.sample("train", i)["cloud"].numpy() for i in train])
    assert np.abs(stacked.mean(axis=0)).max() < 0.2
    assert np.abs(stacked.std(axis=0) - 1.0).max() < 0.2


def test_cloud_normalization_roundtrip(tiny_dataset):
    ds = SensingDataset(tiny_dataset)
    raw = read_tensor(tiny_dataset / "train" / "00000000.cloud.bin")
    back = ds.denormalize_cloud(ds.normalize_cloud(raw))
    assert np.max(np.abs(back - raw)) < 1e-10


def test_load_split_and_batches(tiny_dataset):
    ds = SensingDataset(tiny_dataset)
    split = ds.load_split("train")
    assert split["csi"].shape[0] == 8
    it = batch_iterator(split, batch_size=4, seed=0)
    batch = next(it)
    assert batch["csi"].shape[0] == 4
    assert batch["cloud"].dtype == torch.float32
    # same seed, same stream
    again = next(batch_iterator(split, batch_size=4, seed=0))
    assert torch.equal(batch["csi"], again["csi"])


def test_labels_present(tiny_dataset):
    ds = SensingDataset(tiny_dataset)
    label = ds.label("train", ds.indices("train")[0])
    assert {"class", "eps_r", "sigma"} <= set(label)


def test_missing_split_rejected(tiny_dataset):
    ds = SensingDataset(tiny_dataset)
    with pytest.raises(ValueError):
        ds.indices("holdout")
