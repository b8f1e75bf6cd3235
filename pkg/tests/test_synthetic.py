import numpy as np
import pytest

from quickmatch.core import InputError, validate_clustering
from quickmatch.synthetic import SynthConfig, generate_synthetic, grid_centers


def test_defaults_shape():
    fs, truth = generate_synthetic(SynthConfig())
    assert len(fs) == 250
    assert fs.image_count == 10
    assert fs.dim == 2
    assert len(truth) == 25
    validate_clustering(truth, fs)


def test_per_cluster_one_gives_singletons():
    fs, truth = generate_synthetic(SynthConfig(per_cluster=1))
    assert len(truth) == 25
    assert all(len(members) == 1 for members in truth.clusters)
    assert fs.image_count == 1


def test_ground_truth_respects_one_feature_per_image():
    _, truth = generate_synthetic(SynthConfig(n_clusters=6, per_cluster=4, seed=3))
    for members in truth.clusters:
        images = [fid.image for fid in members]
        assert sorted(images) == list(range(4))


def test_same_seed_identical_output():
    a_fs, a_truth = generate_synthetic(SynthConfig(seed=11))
    b_fs, b_truth = generate_synthetic(SynthConfig(seed=11))
    assert a_fs == b_fs
    assert a_truth.clusters == b_truth.clusters


def test_spread_validation():
    with pytest.raises(InputError):
        SynthConfig(spread=0.0)
    with pytest.raises(InputError):
        SynthConfig(spread=-1.0)


def test_grid_centers_layout():
    centers = grid_centers(25, 2, 10.0)
    assert centers.shape == (25, 2)
    xs = sorted(set(centers[:, 0]))
    assert xs == pytest.approx([0.0, 2.5, 5.0, 7.5, 10.0])

    line = grid_centers(5, 1, 10.0)
    assert line[:, 0] == pytest.approx([0.0, 2.5, 5.0, 7.5, 10.0])

    high = grid_centers(9, 5, 6.0)
    assert high.shape == (9, 5)
    assert np.all(high[:, 2:] == 0.0)
