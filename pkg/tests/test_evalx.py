import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import exact_distances
from gridtree.evalx import (
    EvalReport,
    correlation_cdf,
    distance_error,
    edge_distance_error,
    latent_truth,
    tree_match,
    write_cdf_csv,
    write_error_csv,
)
from gridtree.grid_model import random_radial_tree
from gridtree.impedance_est import DistanceMatrix, distance_from_z, estimate_z_plain
from gridtree.rg_learn import LatentTree
from gridtree.synth_data import GenSpec, gen_gaussian


def relabel(tree: LatentTree, perm: dict) -> LatentTree:
    f = lambda n: perm.get(n, n)  # noqa: E731
    return LatentTree([f(n) for n in tree.nodes], [(f(u), f(v), w) for u, v, w in tree.edges],
                      hidden=[f(n) for n in tree.hidden])


@pytest.fixture(scope="module")
def truth10():
    t = random_radial_tree(10, np.random.default_rng(5), hidden_fraction=1.0)
    lt = latent_truth(t)
    assert len(lt.hidden) >= 2
    return lt


def test_identical_trees(truth10):
    exact, f1, mapping = tree_match(truth10, truth10)
    assert exact and f1 == 1.0
    assert all(k == v for k, v in mapping.items())


def test_permuted_hidden_ids(truth10):
    hs = truth10.hidden
    perm = {h: f"h{100 + k}" for k, h in enumerate(reversed(hs))}
    exact, f1, mapping = tree_match(relabel(truth10, perm), truth10)
    assert exact and f1 == 1.0
    assert {v: k for k, v in mapping.items()} == perm


@given(st.randoms())
def test_edge_order_invariance(truth10, rnd):
    edges = list(truth10.edges)
    rnd.shuffle(edges)
    shuffled = LatentTree(truth10.nodes, edges, hidden=truth10.hidden)
    assert tree_match(shuffled, truth10)[:2] == (True, 1.0)


def test_rewired_edge(truth10):
    adj = truth10.adjacency()
    leaf = next(n for n in truth10.observed if len(adj[n]) == 1)
    (old,) = adj[leaf]
    new = next(n for n in truth10.nodes if n not in (leaf, old))
    edges = [(u, v, w) for u, v, w in truth10.edges if leaf not in (u, v)] + [(new, leaf, 1.0)]
    rewired = LatentTree(truth10.nodes, edges, hidden=truth10.hidden)
    exact, f1, _ = tree_match(rewired, truth10)
    n_e = len(truth10.edges)
    assert not exact and f1 < 1
    # at most the rewired edge and edges that lost their hidden-node match differ
    assert f1 >= (n_e - 3) / n_e


def test_observed_set_mismatch(truth10):
    other = LatentTree([1, 2], [(1, 2, 1.0)])
    assert tree_match(other, truth10) == (False, 0.0, {})


def test_edge_distance_error(truth10):
    _, _, mapping = tree_match(truth10, truth10)
    assert edge_distance_error(truth10, truth10, mapping) == 0.0
    bumped = LatentTree(truth10.nodes, [(u, v, w * 1.01) for u, v, w in truth10.edges],
                        hidden=truth10.hidden)
    worst = max(abs(w) for _, _, w in truth10.edges) * 0.01
    assert edge_distance_error(bumped, truth10, mapping) == pytest.approx(worst)


def test_distance_error_five_percent():
    D_true = DistanceMatrix([1, 2], np.array([[0, 2 + 4j], [2 + 4j, 0]]))
    D_hat = DistanceMatrix([1, 2], np.array([[0, 2.1 + 4j], [2.1 + 4j, 0]]))
    err = distance_error(D_hat, D_true)
    assert err["pairs"][0]["real"] == pytest.approx(5.0)
    assert err["pairs"][0]["imag"] == pytest.approx(0.0)


def test_distance_error_undefined_entries():
    D_true = DistanceMatrix([1, 2, 3], np.array([[0, 2, 1 + 1j], [2, 0, 3j], [1 + 1j, 3j, 0]]))
    err = distance_error(D_true, D_true)
    pairs = {(p["a"], p["b"]): p for p in err["pairs"]}
    assert pairs[(1, 2)]["imag"] is None and pairs[(2, 3)]["real"] is None
    assert err["summary"]["mean_imag"] == 0.0


@given(st.integers(0, 10_000))
def test_distance_error_of_self_is_zero(seed):
    D = exact_distances(random_radial_tree(9, np.random.default_rng(seed)))
    s = distance_error(D, D)["summary"]
    assert s["max_real"] == 0.0 and s["max_imag"] == 0.0


def test_magnitude_error_has_single_column():
    D = exact_distances(random_radial_tree(9, np.random.default_rng(1)), magnitude=True)
    s = distance_error(D, D)["summary"]
    assert set(s) == {"mean_abs", "max_abs"}


def test_nineteen_node_plain_error_order_two_percent():
    t = random_radial_tree(19, np.random.default_rng(0))
    V, I = gen_gaussian(GenSpec(seed=0), t).observed(t.observed)
    D = distance_from_z(estimate_z_plain(V, I, t.observed))
    mean = distance_error(D, exact_distances(t))["summary"]["mean_real"]
    assert 0.2 <= mean <= 5.0


def test_cdf_identical_columns():
    x = np.random.default_rng(0).standard_normal(50)
    assert correlation_cdf(np.column_stack([x, x, x])) == pytest.approx([1.0, 1.0, 1.0])


def test_cdf_independent_columns():
    rng = np.random.default_rng(1)
    I = rng.standard_normal((8760, 10)) + 1j * rng.standard_normal((8760, 10))
    vals = correlation_cdf(I)
    assert len(vals) == 45
    assert np.percentile(vals, 95) < 0.03


def test_cdf_correlated_pair():
    t = random_radial_tree(3, np.random.default_rng(2), hidden_fraction=0.0)
    C = np.array([[1, 0.5], [0.5, 1]])
    _, I = gen_gaussian(GenSpec(corr=C, seed=2), t).observed(t.observed)
    (rho,) = correlation_cdf(I)
    assert 0.4 <= rho <= 0.6


def test_cdf_constant_column():
    x = np.random.default_rng(3).standard_normal(20)
    vals = correlation_cdf(np.column_stack([x, np.ones(20), -x]))
    assert vals == [pytest.approx(1.0), None, None]


def test_report_and_csv(tmp_path):
    D = exact_distances(random_radial_tree(6, np.random.default_rng(4)))
    errors = distance_error(D, D)
    rep = EvalReport(True, 1.0, errors["summary"], [0.1, 0.2])
    rep.save(tmp_path / "r.json", extra={"config_hash": "abc"})
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["config_hash"] == "abc" and doc["topology_exact"] is True
    write_error_csv(errors, tmp_path / "e.csv", comments=["x"])
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "# x" and lines[1] == "a,b,real,imag"
    write_cdf_csv([0.1, 0.3, None], tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines() == ["abs_rho,cdf", "0.1,0.5", "0.3,1.0"]
