import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridtree.errors import GridTreeError
from gridtree.grid_model import random_radial_tree
from gridtree.selection import (
    EmbeddedPoint,
    angle_iqr,
    auto_lambda,
    embed,
    kmeans,
    min_cluster_size,
    select_cluster,
)
from gridtree.synth_data import GenSpec, Regime, gen_load_profile

REGIMES = [Regime(0.5, (0.85, 0.87), 0.003, 1.0), Regime(0.5, (0.70, 0.72), 0.006, 1.0)]


def regime_year(seed):
    t = random_radial_tree(12, np.random.default_rng(seed), xr_range=(0.5, 1.5))
    ms = gen_load_profile(GenSpec(mode="load_profile", seed=seed, regimes=REGIMES), t)
    V, I = ms.phasors(t.observed)
    return ms, V, I, ms.q[:, ms.columns(t.observed)]


def test_embed_single_bus():
    # q = (-0.2, 0.2) has deviations (-0.2, 0.2)
    pts = embed([[1.0], [1.0]], [[-0.2], [0.2]], lam=1.0)
    assert np.allclose(pts[1].z, [1.0, 0.2]) and pts[1].t == 1


def test_embed_lambda_halves_q_block():
    rng = np.random.default_rng(0)
    v, q = rng.random((20, 3)), rng.random((20, 3))
    a = np.vstack([p.z for p in embed(v, q, lam=1.0)])
    b = np.vstack([p.z for p in embed(v, q, lam=0.5)])
    assert np.array_equal(a[:, :3], b[:, :3])
    assert np.allclose(b[:, 3:], a[:, 3:] / 2)


def test_embed_errors():
    with pytest.raises(GridTreeError, match="lambda"):
        embed(np.ones((3, 1)), np.ones((3, 1)), lam=0.0)
    with pytest.raises(GridTreeError):
        embed(np.ones((3, 1)), np.ones((4, 1)))
    with pytest.raises(GridTreeError, match="non-finite"):
        embed(np.array([[np.nan]]), np.ones((1, 1)), lam=1.0)


@given(st.integers(0, 10_000))
def test_auto_lambda_equalizes_block_variances(seed):
    rng = np.random.default_rng(seed)
    v = 1 + 0.01 * rng.standard_normal((100, 4))
    q = 5 * rng.random((100, 4))
    X = np.vstack([p.z for p in embed(v, q)])
    v_var = np.sum(np.var(X[:, :4], axis=0))
    q_var = np.sum(np.var(X[:, 4:], axis=0))
    assert abs(v_var - q_var) <= 0.05 * v_var


def test_auto_lambda_degenerate():
    assert auto_lambda(np.ones((5, 2)), np.zeros((5, 2))) == 1.0


def test_two_blobs():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 0.1, (30, 2)), rng.normal(10, 0.1, (20, 2))])
    cl = kmeans(X, k=2, seed=0)
    labels = cl.assignment
    assert len(set(labels[:30])) == 1 and len(set(labels[30:])) == 1
    assert labels[0] != labels[30]


def test_k_equals_points():
    X = np.random.default_rng(2).random((7, 3))
    assert kmeans(X, k=7).inertia == pytest.approx(0.0)


def test_k_out_of_range():
    with pytest.raises(GridTreeError):
        kmeans(np.zeros((3, 2)), k=4)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_inertia_non_increasing(seed, k):
    X = np.random.default_rng(seed).standard_normal((60, 3))
    h = kmeans(X, k=k, seed=seed).history
    assert all(a >= b - 1e-9 for a, b in zip(h, h[1:]))


def test_empty_cluster_reseeded():
    # duplicated points: the seeding picks coincident centroids, one cluster goes empty
    X = np.array([[0.0, 0.0]] * 5 + [[1.0, 0.0]])
    cl = kmeans(X, k=3, seed=0)
    assert cl.reseeded
    assert all(cl.members(c).size for c in range(3))


def test_kmeans_deterministic():
    X = np.random.default_rng(3).standard_normal((100, 4))
    a, b = kmeans(X, k=3, seed=5), kmeans(X, k=3, seed=5)
    assert np.array_equal(a.assignment, b.assignment) and a.history == b.history


def test_query_at_centroid_and_tie():
    X = np.array([[0.0], [0.1], [10.0], [10.1]])
    cl = kmeans(X, k=2, seed=0)
    c = cl.assignment[2]
    assert np.array_equal(select_cluster(cl, cl.centroids[c]), cl.members(c))
    mid = cl.centroids.mean(axis=0)
    assert cl.nearest(mid) == 0


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_selection_non_empty_subset(seed, k):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((40, 2))
    cl = kmeans(X, k=k, seed=seed)
    idx = select_cluster(cl, EmbeddedPoint(rng.standard_normal(2) * 3, -1))
    assert idx.size > 0 and set(idx) <= set(range(40))


def test_min_size_rejection():
    X = np.array([[0.0]] * 60 + [[5.0]] * 3)
    cl = kmeans(X, k=2, seed=0)
    with pytest.raises(GridTreeError, match="at least 50 required"):
        select_cluster(cl, [5.0], min_size=min_cluster_size(4))
    assert min_cluster_size(40) == 80


def test_regime_year_three_clusters():
    ms, V, _, q = regime_year(0)
    cl = kmeans(embed(np.abs(V), q), k=3, seed=0)
    for c in range(3):
        m = cl.members(c)
        assert m.size > 0
        purity = max(np.mean(ms.regime[m] == r) for r in (0, 1))
        assert purity >= 0.95


@pytest.mark.parametrize("seed", range(5))
def test_angle_concentration(seed):
    _, V, I, q = regime_year(seed)
    cl = kmeans(embed(np.abs(V), q), k=3, seed=seed)
    glob = angle_iqr(I)
    for c in range(3):
        assert np.all(angle_iqr(I, cl.members(c)) <= glob)
    sel = select_cluster(cl, embed(np.abs(V), q)[-1])
    assert np.all(angle_iqr(I, sel) < glob)


def test_clustering_csv(tmp_path):
    cl = kmeans(np.array([[0.0], [1.0], [5.0]]), k=2)
    cl.save_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "t,cluster" and len(lines) == 4
