import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bltail.cell import solve_correctors
from bltail.coeffs import PeriodicField, PeriodicTensor, adjoint_tensor, divfree_check
from bltail.errors import ConsistencyError, DependencyError
from bltail.lattice import classify_direction
from bltail.tails import (TailSolver, TailTable, image_method_integral, integrated_green,
                          laplace_oracle, laplace_tail, tail_via_formula)

from conftest import laminate, random_system


def unit(th):
    return np.array([math.cos(th), math.sin(th)])


def random_A0(rng, d, N):
    X = rng.standard_normal((d * N, d * N))
    S = X @ X.T / (d * N) + 0.5 * np.eye(d * N)
    return S.reshape(d, N, d, N).transpose(0, 2, 1, 3)


@given(st.integers(0, 2 ** 31), st.sampled_from([(2, 1), (2, 2), (3, 1), (3, 2)]))
@settings(max_examples=60, deadline=None)
def test_integrated_green_inverts(seed, dims):
    d, N = dims
    rng = np.random.default_rng(seed)
    A0 = random_A0(rng, d, N)
    n = rng.standard_normal(d)
    n /= np.linalg.norm(n)
    G = integrated_green(A0, n)
    np.testing.assert_allclose(G.matrix @ G.A_n, np.eye(N), atol=1e-12)
    np.testing.assert_allclose(G.alpha(0), n[0] * G.matrix)


def test_laplacian_green_value():
    G = integrated_green(np.eye(2), unit(0.4))
    assert G.matrix[0, 0] == pytest.approx(-1.0, abs=1e-15)
    assert image_method_integral(np.eye(2), unit(0.4)) == pytest.approx(-1.0, abs=1e-10)


@pytest.mark.parametrize("A0,n", [(np.diag([1.0, 4.0]), np.array([0.0, 1.0])),
                                  (np.array([[2.0, 0.5], [0.5, 1.0]]), unit(1.1)),
                                  (np.diag([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 2.0]) / 3)])
def test_image_method_matches_green(A0, n):
    ref = integrated_green(A0, n).matrix[0, 0]
    assert image_method_integral(A0, n) == pytest.approx(ref, rel=1e-8)


def test_green_rejects_singular():
    A0 = np.zeros((2, 2, 1, 1))
    with pytest.raises(ConsistencyError):
        integrated_green(A0, unit(0.3))


def test_laplace_oracle_is_harmonic():
    v0 = PeriodicField(np.array([[0, 0], [1, 2], [-1, -2]]), np.array([[0.3], [1 + 0.5j], [1 - 0.5j]]))
    n = classify_direction(unit(0.7), Q=200)
    # boundary trace
    y0 = np.array([[-n.n[1], n.n[0]]]) * 0.37
    np.testing.assert_allclose(laplace_oracle(v0, n, y0).ravel(), v0.evaluate(y0).ravel(), atol=1e-12)
    # five-point Laplacian vanishes at an interior point
    y = 0.4 * n.n + 0.1
    h = 1e-3
    pts = np.array([y, y + [h, 0], y - [h, 0], y + [0, h], y - [0, h]])
    u = laplace_oracle(v0, n, pts)[:, 0]
    lap = (u[1:].sum() - 4 * u[0]) / h ** 2
    assert abs(lap) < 1e-3 * abs(u).max()
    # far from the boundary only the mean survives
    far = laplace_oracle(v0, n, (8.0 * n.n)[None])
    assert abs(far[0] - laplace_tail(v0)[0]) < 1e-12
    with pytest.raises(ValueError):
        laplace_oracle(v0, classify_direction(np.array([0.6, 0.8]), Q=10), y0)


@pytest.mark.parametrize("th", [0.5, 1.3, 2.4])
def test_routes_agree_laminate(th):
    S = TailSolver(laminate(), [0, 1], K_cell=8, K_t=8, h=1 / 32, refine=False)
    a = S.tail([1, 0], unit(th), "formula").matrix
    b = S.tail([1, 0], unit(th), "strip").matrix
    assert np.abs(a - b).max() <= 1e-9 * np.abs(b).max()


@pytest.mark.parametrize("nu0,xi", [([0, 1], [1, 0]), ([1, 1], [1, -1]), ([0, 1], [-2, 0])])
def test_routes_agree_nonsymmetric_system(nu0, xi):
    t = random_system(np.random.default_rng(5), nu0=nu0)
    S = TailSolver(t, nu0, K_cell=8, K_t=8, h=1 / 32, refine=False)
    n = unit(1.0)
    a = S.tail(xi, n, "formula").matrix
    b = S.tail(xi, n, "strip").matrix
    assert a.shape == (2, 2)
    assert np.abs(a - b).max() <= 1e-9 * np.abs(b).max()


def test_zero_mode_tail_is_identity():
    t = random_system(np.random.default_rng(2))
    S = TailSolver(t, [0, 1], K_cell=8, K_t=8, h=1 / 32, refine=False)
    for route in ("formula", "strip"):
        np.testing.assert_allclose(S.tail([0, 0], unit(1.2), route).matrix, np.eye(2), atol=1e-10)


def test_constant_tensor_formula_calibration():
    # constant coefficients: first term only, and the tail of the constant datum is I
    t = PeriodicTensor.constant(np.array([[2.0, 0.4], [0.4, 1.0]]))
    S = TailSolver(t, "auto", K_cell=2, K_t=4, h=1 / 32, refine=False)
    n = classify_direction(unit(0.9), Q=200)
    assert S.tail([0, 0], n, "formula").matrix[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert abs(S.tail([1, 1], n, "formula").matrix[0, 0]) < 1e-12
    assert abs(S.tail([1, 0], n, "strip").matrix[0, 0]) < 1e-8


def test_trivial_correctors_divfree():
    # A = [[2, b(y1)], [0, 2]] with b = cos: rows divergence free, adjoint correctors vanish
    pattern = np.array([[0.0, 1.0], [0.0, 0.0]])
    freqs = np.array([[0, 0], [1, 0]])
    vals = np.array([2 * np.eye(2), 0.5 * pattern])[:, :, :, None, None].astype(complex)
    t = PeriodicTensor(freqs, vals, closure=True)
    assert divfree_check(t)
    chis = solve_correctors(adjoint_tensor(t), 8)
    assert all(np.max(np.abs(c.field.values)) == 0 for c in chis)
    S = TailSolver(t, [0, 1], K_cell=8, K_t=8, h=1 / 32, refine=False)
    n = classify_direction(unit(1.0), Q=200)
    fine, _ = S.corrector_data(n)
    assert max(np.abs(c.solution.W).max() for c in fine) == 0
    terms = tail_via_formula(t, S.A0, S.chi_star, fine, [1, 0], n, terms=True)
    assert np.abs(terms.second).max() == 0 and np.abs(terms.third).max() == 0
    b = S.tail([1, 0], n, "strip").matrix
    assert np.abs(terms.value() - b).max() <= 1e-9 * max(1.0, np.abs(b).max())


def test_missing_inputs():
    t = laminate()
    n = classify_direction(unit(1.0), Q=200)
    with pytest.raises(DependencyError):
        tail_via_formula(t, np.eye(2), None, None, [1, 0], n)
    table = TailTable()
    with pytest.raises(DependencyError):
        table.lookup([1, 0], n.n)


def test_conjugate_cache_and_table():
    S = TailSolver(laminate(), [0, 1], K_cell=8, K_t=8, h=1 / 32, refine=False)
    n = S.direction(unit(1.0))
    e = S.tail([1, 0], n, "strip")
    m = S.tail([-1, 0], n, "strip")
    np.testing.assert_allclose(m.matrix, e.matrix.conj())
    direct = TailSolver(laminate(), [0, 1], K_cell=8, K_t=8, h=1 / 32, refine=False)
    np.testing.assert_allclose(direct.tail([-1, 0], n, "strip").matrix, m.matrix, atol=1e-12)
    table = TailTable()
    table.add(e)
    assert table.lookup([1, 0], n.n) is e
    assert table.to_json()[0]["route"] == "strip"


def test_richardson_improves():
    fine = TailSolver(laminate(), [0, 1], K_cell=8, K_t=8, h=1 / 128, refine=False)
    n = fine.direction(unit(1.0))
    ref = fine.tail([1, 0], n, "strip").matrix
    plain = TailSolver(laminate(), [0, 1], K_cell=8, K_t=8, h=1 / 16, refine=False)
    rich = TailSolver(laminate(), [0, 1], K_cell=8, K_t=8, h=1 / 16, refine=True)
    e_plain = np.abs(plain.tail([1, 0], n, "strip").matrix - ref).max()
    r = rich.tail([1, 0], n, "strip")
    assert np.abs(r.matrix - ref).max() < 0.1 * e_plain
    assert r.err_bound >= np.abs(r.matrix - ref).max()


def test_auto_route_falls_back():
    # constant tensor, xi = (1, 0): the only layer vector is e_2, degenerate for n near e_1
    t = PeriodicTensor.identity(2)
    S = TailSolver(t, "auto", K_cell=2, K_t=4, h=1 / 32, refine=False, delta=0.3)
    assert S.tail([1, 0], unit(0.2), "auto").route == "formula"
    assert S.tail([1, 0], unit(1.2), "auto").route == "strip"
    with pytest.raises(ValueError):
        S.tail([1, 0], unit(0.2), "bogus")


def test_auto_route_uses_convergent_layer():
    # xi = (1, 1) forces nu = (1, -1); close to that layer the decay is too slow for L_max,
    # and the auto route reports the formula value instead of an unconverged strip
    S = TailSolver(PeriodicTensor.identity(2), "auto", K_cell=2, K_t=4, h=1 / 32, refine=False)
    e = S.tail([1, 1], unit(0.9), "auto")
    assert e.route == "formula" and abs(e.matrix[0, 0]) < 1e-12
