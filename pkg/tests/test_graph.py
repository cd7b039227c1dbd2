import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxcorr.diagnostics import PqPair
from proxcorr.graph import (DisconnectedGraphError, MixingPair, NetworkGraph, build_metropolis_weights,
                            complete_graph, cycle_graph, metropolis_matrix, path_graph, psd_sqrt,
                            random_geometric_graph, read_edge_list, spectral_radius,
                            validate_mixing_assumptions, write_edge_list)


def power_iteration(M, iters=5000, seed=0):
    v = np.random.default_rng(seed).standard_normal(M.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = M @ v
        lam = np.linalg.norm(w)
        v = w / lam
    return lam


def test_path3_metropolis_by_hand():
    pair = build_metropolis_weights(path_graph(3))
    W = pair.W
    # degrees 1,2,1 -> every edge weight 1/(2+1)
    assert W[0, 1] == pytest.approx(1 / 3, abs=1e-15)
    assert W[0, 0] == pytest.approx(2 / 3, abs=1e-15)
    assert W[1, 1] == pytest.approx(1 / 3, abs=1e-15)
    assert W[0, 2] == 0.0
    np.testing.assert_allclose(pair.Wt, (np.eye(3) + W) / 2)


def test_complete2_closed_form():
    pair = build_metropolis_weights(complete_graph(2))
    np.testing.assert_allclose(pair.W, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(pair.C, (np.eye(2) - pair.W) / 2, atol=1e-15)
    np.testing.assert_allclose(pair.sqrtC @ pair.sqrtC, pair.C, atol=1e-12)
    # C = [[1,-1],[-1,1]]/4 has eigenvalue 1/2 on (1,-1)/sqrt2, so sqrtC = C * sqrt(2)
    np.testing.assert_allclose(pair.sqrtC, pair.C * np.sqrt(2), atol=1e-12)


def test_rows_sum_to_one_on_random_graphs():
    for seed in range(5):
        W = build_metropolis_weights(random_geometric_graph(20, seed)).W
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)


def test_disconnected_graph_rejected_with_unreachable_set():
    g = NetworkGraph.from_edges(4, [(1, 2), (3, 4)])
    with pytest.raises(DisconnectedGraphError) as err:
        build_metropolis_weights(g)
    assert err.value.unreachable == {3, 4}


def test_graph_rejects_self_loops_and_out_of_range():
    with pytest.raises(ValueError):
        NetworkGraph.from_edges(3, [(1, 1)])
    with pytest.raises(ValueError):
        NetworkGraph.from_edges(3, [(1, 4)])
    g = NetworkGraph.from_edges(3, [(2, 1), (1, 2)])
    assert g.edges == {(1, 2)}


@pytest.mark.parametrize("graph", [path_graph(5), cycle_graph(6), complete_graph(4), random_geometric_graph(30, 1)])
def test_metropolis_pair_validates(graph):
    rep = validate_mixing_assumptions(build_metropolis_weights(graph), graph)
    assert rep.passed, rep.summary()
    assert [c.name for c in rep.clauses] == ["a", "b", "c", "d", "sqrtC"]


def test_clause_d_fails_for_scaled_laplacian():
    g = path_graph(4)
    A = g.adjacency()
    d = A.sum(axis=1)
    L = np.eye(4) - A / np.sqrt(np.outer(d, d))
    W = np.eye(4) - 2.2 * L
    assert np.linalg.eigvalsh(W).min() < -1
    pair = MixingPair.from_matrices(W)  # Wt = (I+W)/2 then has a negative eigenvalue
    rep = validate_mixing_assumptions(pair, g)
    assert not rep["d"].passed
    assert rep["d"].margin < 0


def test_clause_c_fails_on_two_components():
    g = NetworkGraph.from_edges(4, [(1, 2), (3, 4)])
    W = metropolis_matrix(g)
    pair = MixingPair.from_matrices(W)
    rep = validate_mixing_assumptions(pair, g)
    assert not rep["c"].passed
    assert rep["c"].detail == "dim null(C) = 2"


def test_spectral_radius_examples():
    assert spectral_radius(np.eye(3)) == pytest.approx(1.0, rel=1e-10)
    assert spectral_radius(np.diag([0.3, -0.9])) == pytest.approx(0.9, rel=1e-10)
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))


def test_spectral_radius_matches_power_iteration():
    pair = build_metropolis_weights(path_graph(3))
    M = np.eye(3) + pair.C
    rho = spectral_radius(M)
    assert rho == pytest.approx(1 + np.linalg.eigvalsh(pair.C).max(), rel=1e-10)
    assert rho == pytest.approx(power_iteration(M), rel=1e-10)


def test_spectral_radius_nonsymmetric():
    M = np.array([[0.0, 2.0], [-2.0, 0.0]])
    assert spectral_radius(M) == pytest.approx(2.0, rel=1e-12)


def test_psd_sqrt_clamps_roundoff_and_rejects_indefinite():
    C = build_metropolis_weights(random_geometric_graph(5, 42)).C
    S = psd_sqrt(C)
    assert np.abs(S @ np.ones(5)).max() < 1e-14
    with pytest.raises(ValueError):
        psd_sqrt(np.diag([1.0, -1e-6]))


def test_edge_list_roundtrip(tmp_path):
    g = random_geometric_graph(12, 3)
    p = tmp_path / "g.txt"
    write_edge_list(g, p)
    assert read_edge_list(p) == g
    assert p.read_text().splitlines()[0] == "12"


def test_edge_list_bad_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("3\n1 2 3\n")
    with pytest.raises(ValueError, match=":2:"):
        read_edge_list(p)


def test_mixing_csv_has_17_digits(tmp_path):
    pair = build_metropolis_weights(path_graph(3))
    paths = pair.to_csv(tmp_path)
    first = paths["W"].read_text().splitlines()[0].split(",")
    assert float(first[0]) == pair.W[0, 0]
    assert first[0] == f"{pair.W[0, 0]:.17g}"


def test_random_geometric_is_deterministic_and_connected():
    g1, g2 = random_geometric_graph(50, 42), random_geometric_graph(50, 42)
    assert g1 == g2 and g1.is_connected()


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 25), seed=st.integers(0, 10_000))
def test_metropolis_invariants_property(n, seed):
    g = random_geometric_graph(n, seed)
    pair = build_metropolis_weights(g)
    assert validate_mixing_assumptions(pair, g).passed
    assert np.linalg.eigvalsh(pair.W).min() > -1 + 1e-10
    assert PqPair.from_mixing(pair).min_eigenvalues()[2] >= -1e-10
