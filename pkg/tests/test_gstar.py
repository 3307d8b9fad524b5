import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bltail.errors import DependencyError, ValidationError
from bltail.gstar import (Ellipsoid, GStarField, GStarValue, HemisphereSamples, OscillatingData,
                          _shell_tail_sum, assemble_gstar, build_gstar_field, hemisphere_set,
                          lipschitz_probe)
from bltail.tails import TailEntry, TailTable


@given(st.lists(st.floats(0.3, 3.0), min_size=2, max_size=3), st.integers(0, 2 ** 31))
@settings(max_examples=50, deadline=None)
def test_gauss_map_roundtrip(axes, seed):
    dom = Ellipsoid(tuple(axes))
    rng = np.random.default_rng(seed)
    n = rng.standard_normal((10, dom.d))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    x = dom.inverse_gauss(n)
    assert np.max(np.abs(dom.level(x))) < 1e-12
    np.testing.assert_allclose(dom.gauss_map(x), n, atol=1e-10)
    # inward: a small step along n enters the domain
    assert np.all(dom.level(x + 1e-6 * n) < 0)


def test_off_surface_rejected():
    dom = Ellipsoid((1.0, 2.0))
    with pytest.raises(ValidationError):
        dom.gauss_map([0.5, 0.5])
    with pytest.raises(ValidationError):
        Ellipsoid((1.0, -1.0))
    assert dom.curvature_lower_bound == pytest.approx(0.25)


def test_hemisphere_filter_counts():
    dom = Ellipsoid((1.0, 1.0))
    hs = hemisphere_set(dom, 0.5, 100, [0, 1], Q=50)
    proj = np.abs(hs.normals @ np.array([0.0, 1.0]))
    assert np.all(proj > 0.5)
    assert len(hs) + hs.excluded_tau + hs.excluded_rational == 100
    # |n_2| > 1/2 covers two thirds of the circle
    assert abs(hs.kept_fraction - 2 / 3) < 0.03
    with pytest.warns(RuntimeWarning):
        assert len(hemisphere_set(dom, 1.0, 10, [0, 1], classify=False)) == 0


def test_hemisphere_excludes_rational():
    dom = Ellipsoid((1.0, 1.0))
    hs = hemisphere_set(dom, 0.0, 4, [0, 1], Q=10)
    # golden offsets avoid the axes, so nothing is flagged at this bound
    assert hs.excluded_rational == 0
    dom3 = Ellipsoid((1.0, 1.0, 1.0))
    hs3 = hemisphere_set(dom3, 0.2, 40, [0, 0, 1], Q=4)
    assert len(hs3) + hs3.excluded_tau + hs3.excluded_rational == 40


def test_real_completion():
    data = OscillatingData.real({(1, 0): lambda x: (1 + 1j) * x[:, :1], (0, 0): lambda x: x[:, 1:]}, 2)
    x = np.array([[0.6, 0.8]])
    y = np.array([[0.3, 0.1]])
    assert abs(data.evaluate(x, y)[0, 0].imag) < 1e-15
    assert data.K_g == 1
    np.testing.assert_allclose(data.average(x), [[0.8]])


def test_shell_sum():
    # d = 2, K = 0: sum over all nonzero xi of (1 + |xi|_inf)^{-3} with 8k points per shell
    ref = sum(8 * k / (1 + k) ** 3 for k in range(1, 200000))
    assert _shell_tail_sum(0, 2) == pytest.approx(ref, rel=1e-4)
    assert _shell_tail_sum(4, 2) < _shell_tail_sum(2, 2)


class _Mean:
    """Tail provider for constant coefficients: only the mean survives."""
    def tail(self, xi, n):
        v = np.eye(1, dtype=complex) if not any(xi) else np.zeros((1, 1), dtype=complex)
        nv = n.n if hasattr(n, "n") else np.asarray(n)
        return TailEntry(tuple(xi), nv, v, "laplace", 1e-12)


def smooth_data():
    return OscillatingData.real({(0, 0): lambda x: 1 + x[:, :1] ** 2,
                                 (1, 2): lambda x: 0.3 * x[:, 1:]}, 2)


def test_assemble_averages_for_constant_tensor():
    dom = Ellipsoid((1.0, 1.0))
    data = smooth_data()
    x = dom.parameter_points(5)[2]
    v = assemble_gstar(dom, data, _Mean(), x)
    assert v.value[0] == pytest.approx(1 + x[0] ** 2)
    assert v.remainder == 0.0
    cut = OscillatingData(data.modes, 2, complete=False)
    assert assemble_gstar(dom, cut, _Mean(), x).remainder > 0
    assert data.truncated(0).complete is False and data.truncated(5).complete is True


def test_assemble_missing_tail():
    dom = Ellipsoid((1.0, 1.0))
    with pytest.raises(DependencyError):
        assemble_gstar(dom, smooth_data(), TailTable(), dom.parameter_points(3)[0])


def _field(g_fn, samples=80, tau=0.0):
    dom = Ellipsoid((1.0, 1.0))
    hs = hemisphere_set(dom, tau, samples, [0, 1], classify=False)
    vals = [GStarValue(x, n, np.atleast_1d(g_fn(x)).astype(complex), 0.0, 0.0)
            for x, n in zip(hs.x, hs.normals)]
    return GStarField(hs, vals)


def test_lipschitz_linear_function():
    # g(x) = a . x has constant |a| along chords
    a = np.array([0.3, -1.2])
    rep = lipschitz_probe(_field(lambda x: a @ x), pairs=2000)
    assert rep.L_emp == pytest.approx(np.linalg.norm(a), rel=1e-2)
    assert rep.L_emp <= np.linalg.norm(a) * (1 + 1e-12)


def test_lipschitz_stable_under_doubling():
    f = _field(lambda x: np.sin(3 * x[0]) + x[1] ** 2, samples=150)
    r1 = lipschitz_probe(f, pairs=2000)
    r2 = lipschitz_probe(f, pairs=4000)
    assert abs(r2.L_emp - r1.L_emp) <= 0.1 * r1.L_emp
    assert r1.near_max >= r1.far_max


def test_lipschitz_tau_filter():
    f = _field(lambda x: x[0], samples=40)
    with pytest.raises(ValueError):
        lipschitz_probe(f, tau=0.9999)


def test_build_field_parallel_matches_serial():
    dom = Ellipsoid((1.0, 2.0))
    hs = hemisphere_set(dom, 0.2, 30, [0, 1], classify=False)
    a = build_gstar_field(dom, smooth_data(), _Mean(), hs).g
    b = build_gstar_field(dom, smooth_data(), _Mean(), hs, workers=4).g
    np.testing.assert_array_equal(a, b)
