import json
import math

import numpy as np
import pytest

from quickmatch.core import FeatureSet, InputError
from quickmatch.partition import (
    KMEANS_ITERATIONS,
    Partition,
    assign_to_seeds,
    bisector_distances,
    boundary_distance,
    kmeans_seeds,
    min_boundary_distance,
    random_seeds,
)
from quickmatch.synthetic import SynthConfig, generate_synthetic

import oracles


def _blobs(seed=0, centers=((0.0, 0.0), (20.0, 0.0)), per=20, spread=0.5):
    rng = np.random.default_rng(seed)
    rows = []
    k = 0
    for c, ctr in enumerate(centers):
        for _ in range(per):
            rows.append((0, k, np.asarray(ctr) + rng.normal(0, spread, len(ctr))))
            k += 1
    return FeatureSet.from_rows(rows), np.repeat(np.arange(len(centers)), per)


# -- kmeans --------------------------------------------------------------------


def test_kmeans_m1_is_global_centroid():
    fs, _ = _blobs()
    part = kmeans_seeds(fs, 1, seed=0)
    np.testing.assert_allclose(part.seeds[0], fs.vectors.mean(axis=0), atol=1e-12)
    assert np.all(part.assignment == 0)


def test_kmeans_two_blobs_pure():
    fs, blob = _blobs(seed=3)
    part = kmeans_seeds(fs, 2, seed=1)
    # each blob maps to exactly one agent
    for b in (0, 1):
        agents = set(part.assignment[blob == b])
        assert len(agents) == 1
    assert set(part.assignment) == {0, 1}


def test_kmeans_deterministic():
    fs, _ = generate_synthetic(SynthConfig(seed=5))
    a = kmeans_seeds(fs, 4, seed=9)
    b = kmeans_seeds(fs, 4, seed=9)
    assert np.array_equal(a.seeds, b.seeds)
    assert np.array_equal(a.assignment, b.assignment)
    assert a.to_json() == b.to_json()


def test_kmeans_errors():
    fs, _ = _blobs(per=2)
    with pytest.raises(InputError):
        kmeans_seeds(fs, 0)
    with pytest.raises(InputError):
        kmeans_seeds(fs, len(fs) + 1)


def test_kmeans_voronoi_correctness_and_objective_monotone():
    fs, _ = generate_synthetic(SynthConfig(seed=8))
    part = kmeans_seeds(fs, 5, seed=2)
    d = np.linalg.norm(fs.vectors[:, None, :] - part.seeds[None, :, :], axis=2)
    assert np.all(d[np.arange(len(fs)), part.assignment] <= d.min(axis=1) + 1e-12)

    # re-run Lloyd by hand, tracking the post-assignment objective
    X = fs.vectors
    rng = np.random.default_rng(2)
    chosen: list[int] = []
    for r in rng.permutation(len(X)):
        if all(not np.array_equal(X[r], X[c]) for c in chosen):
            chosen.append(int(r))
        if len(chosen) == 5:
            break
    seeds = X[chosen].copy()
    prev_obj = None
    for _ in range(KMEANS_ITERATIONS):
        labels = assign_to_seeds(X, seeds)
        obj = float(((X - seeds[labels]) ** 2).sum())
        if prev_obj is not None:
            assert obj <= prev_obj + 1e-9
        prev_obj = obj
        if all(np.any(labels == c) for c in range(5)):
            for c in range(5):
                seeds[c] = X[labels == c].mean(axis=0)


def test_kmeans_empty_cluster_repair_reseeds_farthest():
    # two tight pairs and one far outlier; three seeds initialised so one
    # empties after the first update, forcing the repair path
    fs = FeatureSet.from_rows(
        [
            (0, 0, [0.0, 0.0]),
            (0, 1, [0.1, 0.0]),
            (0, 2, [10.0, 0.0]),
            (0, 3, [10.1, 0.0]),
            (0, 4, [100.0, 0.0]),
        ]
    )
    part = kmeans_seeds(fs, 3, seed=0)
    assert len(set(part.assignment)) == 3  # no agent ends empty
    # the outlier necessarily sits alone under any 3-means optimum here
    assert sum(part.assignment == part.assignment[4]) == 1


# -- random seeds ----------------------------------------------------------------


def test_random_seeds_shared_integer_reproduces():
    fs, _ = generate_synthetic(SynthConfig(seed=1))
    a = random_seeds(fs, 6, seed=42)
    b = random_seeds(fs, 6, seed=42)
    assert np.array_equal(a.seeds, b.seeds)
    assert np.array_equal(a.assignment, b.assignment)


def test_random_seeds_m1():
    fs, _ = generate_synthetic(SynthConfig(seed=1))
    part = random_seeds(fs, 1, seed=0)
    assert np.all(part.assignment == 0)


def test_random_seeds_within_bounds_and_mean():
    rng = np.random.default_rng(0)
    fs = FeatureSet.from_rows([(0, k, rng.uniform(0, 1, 2)) for k in range(64)])
    lo, hi = fs.bounds()
    draws = []
    for s in range(100):
        part = random_seeds(fs, 100, seed=s)
        assert np.all(part.seeds >= lo) and np.all(part.seeds <= hi)
        draws.append(part.seeds)
    seeds = np.concatenate(draws)  # 10^4 draws
    mid = (lo + hi) / 2
    span = hi - lo
    assert np.all(np.abs(seeds.mean(axis=0) - mid) <= 0.02 * span + 1e-9)


def test_random_seeds_degenerate_box_widened():
    fs = FeatureSet.from_rows([(0, 0, [5.0, 1.0]), (0, 1, [5.0, 2.0])])
    part = random_seeds(fs, 3, seed=0)  # x extent is zero, must still work
    assert len(np.unique(part.seeds, axis=0)) == 3


# -- boundary distances ----------------------------------------------------------


def _two_seed_partition(p0, p1):
    fs = FeatureSet.from_rows([(0, 0, list(p0)), (0, 1, list(p1))])
    seeds = np.array([p0, p1], dtype=float)
    return Partition(seeds, assign_to_seeds(fs.vectors, seeds), fs.ids)


def test_boundary_distance_midpoint_is_zero():
    part = _two_seed_partition([0.0, 0.0], [2.0, 2.0])
    bd = boundary_distance([1.0, 1.0], part, 1)
    assert bd.d_min == pytest.approx(0.0, abs=1e-12)


def test_boundary_distance_1d_analytic():
    part = _two_seed_partition([0.0], [2.0])
    bd = boundary_distance([0.5], part, 1)
    assert bd.d_min == pytest.approx(0.5)
    assert bd.x_min == pytest.approx([1.0])


def test_boundary_distance_rejects_own_agent():
    part = _two_seed_partition([0.0], [2.0])
    with pytest.raises(InputError):
        boundary_distance([0.5], part, 0)


def test_projection_lies_on_bisector_and_residual_is_normal():
    rng = np.random.default_rng(17)
    for _ in range(50):
        dim = int(rng.choice([2, 3, 8]))
        seeds = rng.normal(size=(4, dim)) * 5
        part_fs = FeatureSet.from_rows([(0, k, seeds[k]) for k in range(4)])
        part = Partition(seeds, assign_to_seeds(part_fs.vectors, seeds), part_fs.ids)
        x = rng.normal(size=dim) * 5
        t = int(assign_to_seeds(x[None, :], seeds)[0])
        e = int(rng.choice([a for a in range(4) if a != t]))
        bd = boundary_distance(x, part, e)
        u = seeds[e] - seeds[t]
        u_hat = u / np.linalg.norm(u)
        # on the bisector: u_hat . (x_min - p_t) == |u|/2
        assert float(u_hat @ (bd.x_min - seeds[t])) == pytest.approx(
            float(np.linalg.norm(u)) / 2, abs=1e-9
        )
        # residual is parallel to the normal
        resid = x - bd.x_min
        tangential = resid - (resid @ u_hat) * u_hat
        assert float(np.linalg.norm(tangential)) == pytest.approx(0.0, abs=1e-9)
        assert bd.d_min == pytest.approx(float(np.linalg.norm(resid)), abs=1e-12)


def test_closed_form_matches_qp_oracle_sampled():
    rng = np.random.default_rng(23)
    for _ in range(60):
        dim = int(rng.choice([2, 8, 128]))
        seeds = rng.normal(size=(3, dim)) * 4
        x = rng.normal(size=dim) * 4
        t = int(assign_to_seeds(x[None, :], seeds)[0])
        e = (t + 1) % 3
        fs = FeatureSet.from_rows([(0, k, seeds[k]) for k in range(3)])
        part = Partition(seeds, assign_to_seeds(fs.vectors, seeds), fs.ids)
        want = oracles.qp_boundary_distance(x, seeds[t], seeds[e])
        got = boundary_distance(x, part, e).d_min
        assert got == pytest.approx(want, abs=1e-9)


def test_qp_oracle_agrees_with_scipy_slsqp():
    # cross-check the oracle itself against a generic constrained solver
    from scipy.optimize import minimize

    rng = np.random.default_rng(29)
    for _ in range(5):
        dim = 4
        p_t = rng.normal(size=dim)
        p_e = rng.normal(size=dim) + 3.0
        x_t = p_t + rng.normal(size=dim) * 0.2
        u = p_e - p_t
        u_hat = u / np.linalg.norm(u)
        c = np.linalg.norm(u) / 2

        res = minimize(
            lambda z: ((x_t - z) ** 2).sum(),
            x0=p_e,
            jac=lambda z: 2 * (z - x_t),
            constraints=[{"type": "ineq", "fun": lambda z: u_hat @ (z - p_t) - c}],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 500},
        )
        want = float(np.linalg.norm(x_t - res.x))
        assert oracles.qp_boundary_distance(x_t, p_t, p_e) == pytest.approx(want, abs=1e-7)


def test_min_boundary_distance_m2_equals_single_pair():
    part = _two_seed_partition([0.0, 0.0], [4.0, 0.0])
    d, e = min_boundary_distance([1.0, 0.0], part)
    assert e == 1
    assert d == pytest.approx(boundary_distance([1.0, 0.0], part, 1).d_min)


def test_min_boundary_distance_m1_infinite():
    fs = FeatureSet.from_rows([(0, 0, [1.0, 1.0])])
    part = Partition(np.array([[0.0, 0.0]]), np.array([0]), fs.ids)
    d, e = min_boundary_distance([1.0, 1.0], part)
    assert math.isinf(d)
    assert e is None


def test_min_boundary_distance_exhaustive_oracle():
    rng = np.random.default_rng(31)
    fs, _ = generate_synthetic(SynthConfig(seed=3))
    part = kmeans_seeds(fs, 5, seed=7)
    for row in rng.choice(len(fs), size=40, replace=False):
        x = fs.vectors[row]
        t = int(part.assignment[row])
        want = math.inf
        want_e = None
        for e in range(5):
            if e == t:
                continue
            d = oracles.bisector_point_distance(x, part.seeds[t], part.seeds[e])
            if d < want - 1e-15:
                want, want_e = d, e
        d, e = min_boundary_distance(x, part)
        assert d == pytest.approx(want, abs=1e-9)
        assert e == want_e


def test_bisector_distances_bound_sampled_region_points():
    # d_min lower-bounds the distance to anything inside the other region
    rng = np.random.default_rng(37)
    fs, _ = generate_synthetic(SynthConfig(seed=2))
    part = kmeans_seeds(fs, 4, seed=4)
    rows = np.flatnonzero(part.assignment == part.assignment[0])[:10]
    t = int(part.assignment[0])
    dmat = bisector_distances(fs.vectors[rows], part.seeds, t)
    for e in range(4):
        if e == t:
            continue
        others = rng.uniform(0, 10, size=(200, 2))
        inside = others[assign_to_seeds(others, part.seeds) == e]
        for i, row in enumerate(rows):
            if len(inside):
                gaps = np.linalg.norm(inside - fs.vectors[row], axis=1)
                assert np.all(gaps >= dmat[i, e] - 1e-9)


def test_partition_json_roundtrip(tmp_path):
    fs, _ = generate_synthetic(SynthConfig(seed=0))
    part = kmeans_seeds(fs, 3, seed=5)
    path = tmp_path / "part.json"
    part.save(path)
    loaded = Partition.load(path)
    assert np.array_equal(loaded.seeds, part.seeds)
    assert np.array_equal(loaded.assignment, part.assignment)
    assert loaded.ids == part.ids
    assert loaded.method == "kmeans"
    json.loads(path.read_text())  # valid JSON


def test_partition_rejects_duplicate_seeds():
    fs = FeatureSet.from_rows([(0, 0, [0.0]), (0, 1, [1.0])])
    with pytest.raises(InputError):
        Partition(np.array([[1.0], [1.0]]), np.array([0, 0]), fs.ids)
