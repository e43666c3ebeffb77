import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import exact_distances
from gridtree.errors import EstimationError
from gridtree.grid_model import Topology, build_z_paths, random_radial_tree, true_distance
from gridtree.impedance_est import (
    DistanceMatrix,
    ZEstimate,
    distance_from_z,
    estimate_z_magnitude,
    estimate_z_plain,
    estimate_z_whitened,
    load_distances,
    magnitude_deviations,
    save_distances,
    weighted_currents,
)
from gridtree.synth_data import GenSpec, gen_gaussian


def orthogonal_columns(rng, n, m):
    """Centered complex columns with Gram matrix exactly ``n * I``."""
    X = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    X -= X.mean(axis=0)
    Q, _ = np.linalg.qr(X)
    return Q * np.sqrt(n)


def observed_block(topo):
    Z = build_z_paths(topo)
    idx = [topo.bus_order.index(b) for b in topo.observed]
    return Z[np.ix_(idx, idx)], idx


def test_orthogonal_currents_recover_z_exactly():
    rng = np.random.default_rng(0)
    t = random_radial_tree(10, rng)
    ZO, _ = observed_block(t)
    I = orthogonal_columns(rng, 200, len(t.observed))
    V = I @ ZO.T
    est = estimate_z_plain(V, I, t.observed)
    assert np.max(np.abs(est.Z - ZO)) <= 1e-10


def test_single_node_scalar():
    i = np.array([[1 + 1j], [2 - 1j], [-3 + 0j]])
    assert estimate_z_plain(2.5 * i, i).Z[0, 0] == pytest.approx(2.5)


def test_plain_uncorrelated_error_few_percent():
    t = random_radial_tree(8, np.random.default_rng(2))
    ms = gen_gaussian(GenSpec(seed=2), t)
    V, I = ms.observed(t.observed)
    ZO, _ = observed_block(t)
    est = estimate_z_plain(V, I, t.observed)
    rel = np.abs(est.Z - ZO) / np.abs(ZO)
    assert np.mean(rel) < 0.05


def test_dead_column():
    I = np.ones((5, 2), dtype=complex)
    I[:, 1] = 0
    with pytest.raises(EstimationError, match="dead injection column"):
        estimate_z_plain(I, I)


def test_whitened_exact_with_hidden_injections_and_observed_correlation():
    rng = np.random.default_rng(3)
    t = random_radial_tree(14, rng)
    Z = build_z_paths(t)
    h, m = len(t.hidden), len(t.observed)
    U = orthogonal_columns(rng, 500, h + m)
    mix = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    I_full = np.hstack([U[:, :h] * 0.7, U[:, h:] @ mix])  # hidden first, observed trailing
    V_full = I_full @ Z.T
    obs = slice(h, h + m)
    est = estimate_z_whitened(V_full[:, obs], I_full[:, obs], t.observed)
    plain = estimate_z_plain(V_full[:, obs], I_full[:, obs], t.observed)
    ZO = Z[obs, obs]
    assert np.max(np.abs(est.Z - ZO)) <= 1e-9
    assert np.max(np.abs(plain.Z - ZO)) > 1e-2


def test_whitened_close_to_plain_on_uncorrelated_data():
    t = random_radial_tree(8, np.random.default_rng(4))
    V, I = gen_gaussian(GenSpec(seed=4), t).observed(t.observed)
    zw = estimate_z_whitened(V, I).Z
    zp = estimate_z_plain(V, I).Z
    assert np.linalg.norm(zw - zp) / np.linalg.norm(zp) < 0.05


def test_whitened_exact_on_generated_data_even_for_short_histories():
    # generated hidden buses inject nothing, so only observed currents drive V
    t = random_radial_tree(8, np.random.default_rng(5))
    V, I = gen_gaussian(GenSpec(seed=5, N=300), t).observed(t.observed)
    ZO, _ = observed_block(t)
    assert np.max(np.abs(estimate_z_whitened(V, I).Z - ZO)) <= 1e-9


def test_distance_from_exact_z_is_path_impedance():
    t = random_radial_tree(12, np.random.default_rng(6))
    D = exact_distances(t)
    for a in t.observed:
        assert D[a, a] == 0
        for b in t.observed:
            assert D[a, b] == pytest.approx(true_distance(t, a, b), abs=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 8))
def test_distance_forms_agree_on_symmetric_z(seed, m):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    est = ZEstimate(A + A.T, list(range(m)))
    d1 = distance_from_z(est, symmetrize=True).d
    d2 = distance_from_z(est, symmetrize=False).d
    assert np.allclose(d1, d2)


@given(st.integers(0, 10_000), st.integers(1, 8), st.booleans(), st.sampled_from(["plain", "magnitude"]))
def test_distance_matrix_always_valid(seed, m, sym, mode):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    D = distance_from_z(ZEstimate(Z, list(range(m)), mode), symmetrize=sym)
    assert np.allclose(D.d, D.d.T) and np.all(np.diag(D.d) == 0)


def test_consistency_in_n():
    t = random_radial_tree(8, np.random.default_rng(7))
    D_true = exact_distances(t)
    medians = []
    for N in (1000, 4000, 16000):
        errs = []
        for seed in range(10):
            V, I = gen_gaussian(GenSpec(N=N, seed=seed), t).observed(t.observed)
            D = distance_from_z(estimate_z_plain(V, I, t.observed))
            errs.append(np.mean(np.abs(D.d - D_true.d)))
        medians.append(np.median(errs))
    assert medians[0] >= medians[1] >= medians[2]


def frozen_angle_case(rng, n=400, whiten_mix=False):
    # every line has x/r = 0.5, so Z has one common angle; currents are rotated by
    # minus that angle, so every voltage deviation is real and angles never move
    roles = {1: "slack", 2: "hidden", 3: "observed", 4: "observed", 5: "observed", 6: "observed"}
    edges = [(1, 2, 1), (2, 3, 0.5), (2, 4, 0.8), (4, 5, 0.3), (4, 6, 0.6)]
    t = Topology(roles, [(i, k, r * (1 + 0.5j)) for i, k, r in edges])
    ZO, idx = observed_block(t)
    alpha = np.angle(1 + 0.5j)
    x = np.real(orthogonal_columns(rng, n, 4))
    x -= x.mean(axis=0)
    if whiten_mix:
        x = x @ (np.eye(4) + 0.4 * rng.random((4, 4)))
    mag = 5.0 + 0.1 * x
    I = mag * np.exp(-1j * alpha)
    V = 1.0 + I @ ZO.T
    return t, np.abs(ZO), V, I


def test_magnitude_exact_when_angles_frozen():
    rng = np.random.default_rng(8)
    t, absZ, V, I = frozen_angle_case(rng)
    # the real-valued orthogonal columns are only approximately orthogonal after
    # taking the real part, so use the whitened estimator as well for exactness
    est = estimate_z_magnitude(magnitude_deviations(V), magnitude_deviations(I), t.observed,
                               whitened=True)
    assert np.max(np.abs(est.Z - absZ)) <= 1e-8


def test_magnitude_whitened_exact_with_correlated_magnitudes():
    rng = np.random.default_rng(9)
    t, absZ, V, I = frozen_angle_case(rng, whiten_mix=True)
    est = estimate_z_magnitude(magnitude_deviations(V), magnitude_deviations(I), whitened=True)
    assert np.max(np.abs(est.Z - absZ)) <= 1e-8


def test_magnitude_plain_exact_with_orthogonal_magnitudes():
    t, absZ, _, _ = frozen_angle_case(np.random.default_rng(10))
    x = np.linalg.qr(np.random.default_rng(11).standard_normal((300, 4)) - 0.0)[0]
    x -= x.mean(axis=0)
    x = np.linalg.qr(x)[0]
    alpha = np.angle(1 + 0.5j)
    I = (5.0 + x) * np.exp(-1j * alpha)
    V = 1.0 + I @ (absZ * np.exp(1j * alpha)).T
    est = estimate_z_magnitude(magnitude_deviations(V), magnitude_deviations(I))
    assert np.max(np.abs(est.Z - absZ)) <= 1e-8


def test_magnitude_single_bus():
    i = np.array([[1.0], [2.0], [4.0]]) * np.exp(0.3j)
    v = 2.0 * i
    est = estimate_z_magnitude(magnitude_deviations(v), magnitude_deviations(i))
    assert est.Z[0, 0] == pytest.approx(2.0)


def test_magnitude_zero_column():
    with pytest.raises(EstimationError, match="dead injection column"):
        estimate_z_magnitude(np.zeros((4, 1)), np.zeros((4, 1)))


def test_magnitude_distances_nonnegative_on_exact_abs_z():
    t = random_radial_tree(12, np.random.default_rng(12), xr_range=(0.5, 1.5))
    D = exact_distances(t, magnitude=True)
    assert D.mode == "magnitude" and D.is_valid()
    assert np.all(D.d >= -1e-12)


def test_weighted_currents_identity():
    rng = np.random.default_rng(13)
    I = rng.standard_normal((5, 3, 4)) + 1j * rng.standard_normal((5, 3, 4))
    assert np.allclose(weighted_currents(np.eye(5), I)[:, :, 0], I[:, :, 0])


def test_weighted_currents_hand_expansion():
    lam = 0.4 + 0.1j
    R = np.full((5, 5), lam)
    np.fill_diagonal(R, 1)
    ia, ib, ic, i_n = 1 + 2j, -0.5 + 0j, 0.25 - 1j, -0.6 + 0.3j
    ig = ia + ib + ic + i_n
    I = np.array([ia, ib, ic, i_n]).reshape(1, 1, 4)
    expected = ia + lam * ib + lam * ic + lam * i_n + lam * ig
    assert weighted_currents(R, I)[0, 0, 0] == pytest.approx(expected)


def test_weighted_currents_missing_phase():
    R = np.full((5, 5), 0.3 + 0j)
    np.fill_diagonal(R, 1)
    I = np.ones((1, 1, 4), dtype=complex)
    out = weighted_currents(R, I, present=[True, False, True, True])
    # phase b contributes nothing to a; its own column is zero
    assert out[0, 0, 0] == pytest.approx(1 + 0.3 + 0.3 + 0.3 * 4)
    assert out[0, 0, 1] == 0


def test_weighted_currents_unusable_prior():
    R = np.eye(5, dtype=complex)
    R[0] = 0
    with pytest.raises(EstimationError, match="unusable ratio prior"):
        weighted_currents(R, np.ones((1, 1, 4)))


def test_distances_csv_roundtrip(tmp_path):
    t = random_radial_tree(9, np.random.default_rng(14))
    D = exact_distances(t)
    save_distances(D, tmp_path / "d.csv", ["provenance line"])
    back = load_distances(tmp_path / "d.csv")
    assert back.nodes == D.nodes and np.array_equal(back.d, D.d)
    Dm = exact_distances(t, magnitude=True)
    save_distances(Dm, tmp_path / "m.csv")
    backm = load_distances(tmp_path / "m.csv")
    assert backm.mode == "magnitude" and np.allclose(backm.d, Dm.d)


def test_distance_matrix_shape_check():
    with pytest.raises(EstimationError):
        DistanceMatrix([1, 2], np.zeros((3, 3)))
