import json
import os

import numpy as np
import pytest

from imooe.datasets import (DatasetManifest, build_dataset, channel_stats,
                            cond_param_order, cond_stats_from_envs, denormalize,
                            normalize, normalized_cond, read_dataset,
                            sample_environments, write_dataset)
from imooe.datasets.io import SCHEMA_VERSION


def make_dataset(tmp_path, split="train_id", envs=1, traj=2, res=16):
    return build_dataset("dr", split, envs, traj, res, seed=3,
                         out_dir=str(tmp_path))


def test_round_trip_bit_identical(tmp_path):
    path = make_dataset(tmp_path)
    manifest, arrays = read_dataset(path)
    out = str(tmp_path / "copy")
    write_dataset(manifest, arrays, out)
    manifest2, arrays2 = read_dataset(out)
    for eid in arrays:
        assert np.array_equal(arrays[eid], arrays2[eid])
        assert arrays2[eid].dtype == np.float32
    assert manifest.to_dict() == manifest2.to_dict()


def test_zero_std_rejected(tmp_path):
    path = make_dataset(tmp_path)
    manifest, arrays = read_dataset(path)
    manifest.normalization["std"][0] = 0.0
    with pytest.raises(ValueError, match="std"):
        write_dataset(manifest, arrays, str(tmp_path / "bad"))


def test_shape_mismatch_rejected_on_read(tmp_path):
    path = make_dataset(tmp_path)
    manifest, arrays = read_dataset(path)
    manifest.n_t = manifest.n_t - 1
    with pytest.raises(ValueError, match="shape"):
        write_dataset(manifest, arrays, str(tmp_path / "bad"))
    # corrupt the manifest on disk so the stored arrays no longer match
    mpath = os.path.join(path, "manifest.json")
    with open(mpath) as fh:
        d = json.load(fh)
    d["n_t"] = d["n_t"] - 1
    with open(mpath, "w") as fh:
        json.dump(d, fh)
    with pytest.raises(ValueError, match="shape"):
        read_dataset(path)


def test_schema_version_mismatch(tmp_path):
    path = make_dataset(tmp_path)
    mpath = os.path.join(path, "manifest.json")
    with open(mpath) as fh:
        d = json.load(fh)
    d["schema_version"] = SCHEMA_VERSION + 1
    with open(mpath, "w") as fh:
        json.dump(d, fh)
    with pytest.raises(ValueError, match="schema_version"):
        read_dataset(path)


def test_normalization_only_on_train_split(tmp_path):
    train = make_dataset(tmp_path)
    test = build_dataset("dr", "test_ood", 1, 1, 16, seed=5, out_dir=str(tmp_path))
    m_train, _ = read_dataset(train)
    m_test, _ = read_dataset(test)
    assert m_train.normalization is not None
    assert all(s > 0 for s in m_train.normalization["std"])
    assert m_test.normalization is None


def test_normalize_denormalize_inverse():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((3, 5, 2, 8, 8)).astype(np.float32)
    stats = channel_stats([u])
    z = normalize(u, stats)
    assert np.allclose(z.mean(axis=(0, 1, 3, 4)), 0.0, atol=1e-6)
    assert np.allclose(denormalize(z, stats), u, atol=1e-5)


def test_cond_vector_order_and_zscore():
    assert cond_param_order("ns") == ["nu", "w"]
    assert cond_param_order("hc") == ["m1", "m2", "m3", "A"]
    envs = sample_environments("ns", "train_id", 8, seed=2)
    stats = cond_stats_from_envs(envs, cond_param_order("ns"))
    vecs = np.stack([normalized_cond(e, stats) for e in envs])
    assert np.allclose(vecs[:, 0].mean(), 0.0, atol=1e-12)
    assert np.allclose(vecs[:, 0].std(), 1.0, atol=1e-12)
    # w is fixed at 2.0 for every environment: zero after the guard
    assert np.all(vecs[:, 1] == 0.0)
