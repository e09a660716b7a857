import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qtimedelay.errors import DomainError, PreconditionError
from qtimedelay.localisation import (averaged_localisation, grad_averaged_localisation,
                                     lattice_sum_F, make_bump, smooth_step)

widths = st.floats(0.1, 3.0)


def test_bump_basic_values():
    f = make_bump(0.5)
    assert f(np.zeros(1)) == 1.0
    assert f(np.array([1.5])) == 0.0
    assert f(np.array([0.0, 1.5])) == 0.0
    assert f(np.array([1.0])) == 1.0
    with pytest.raises(PreconditionError):
        make_bump(0.0)


def test_bump_even_exactly(rng):
    f = make_bump(0.7)
    x = rng.uniform(-2, 2, size=(1000, 2))
    assert np.array_equal(f(x), f(-x))


@given(widths, st.floats(0.0, 1.0))
def test_smooth_step_symmetry(w, s):
    assert smooth_step(s) + smooth_step(1 - s) == pytest.approx(1.0, abs=1e-15)
    f = make_bump(w)
    t = 1 + s * w
    assert 0.0 <= f.profile(t) <= 1.0


@given(widths)
def test_bump_monotone_profile(w):
    f = make_bump(w)
    t = np.linspace(0, 1 + 2 * w, 400)
    vals = f.profile(t)
    assert np.all(np.diff(vals) <= 0)
    assert np.all(vals[t <= 1] == 1) and np.all(vals[t >= 1 + w] == 0)


def test_gradient_matches_finite_difference():
    f = make_bump(0.8)
    x = np.array([0.9, 0.7])
    e = 1e-6
    fd = np.array([(f(x + e * d) - f(x - e * d)) / (2 * e) for d in np.eye(2)])
    assert np.max(np.abs(f.gradient(x) - fd)) < 1e-8


def profile_integral(f, nodes=200):
    """int_1^{1+w} f0(t)/t dt by Gauss-Legendre."""
    t, wts = np.polynomial.legendre.leggauss(nodes)
    t = 1 + 0.5 * f.w * (t + 1)
    return float(np.sum(0.5 * f.w * wts * f.profile(t) / t))


@pytest.mark.parametrize("w", [0.5, 1.0, 2.0])
def test_averaged_localisation_closed_radial_form(w):
    f = make_bump(w)
    x = np.array([2.0])
    ref = profile_integral(f) - math.log(2.0)
    assert abs(averaged_localisation(f, x) - ref) < 1e-8


@given(st.floats(0.2, 5.0), st.floats(0.5, 4.0), st.floats(0, 2 * math.pi))
def test_averaged_localisation_homogeneity(norm, t, angle):
    f = make_bump(1.0)
    x = norm * np.array([math.cos(angle), math.sin(angle)])
    assert averaged_localisation(f, t * x) == pytest.approx(averaged_localisation(f, x) - math.log(t),
                                                            abs=1e-9)
    assert averaged_localisation(f, -x) == pytest.approx(averaged_localisation(f, x), abs=1e-12)


def test_averaged_localisation_singular_at_origin():
    with pytest.raises(DomainError):
        averaged_localisation(make_bump(), np.zeros(2))


def test_grad_radial_value():
    f = make_bump(1.0)
    assert np.array_equal(grad_averaged_localisation(f, [2.0, 0.0]), np.array([-0.5, 0.0]))


def test_grad_quadrature_route_agrees(rng):
    f = make_bump(0.6)
    for x in rng.uniform(-3, 3, size=(5, 2)):
        a = grad_averaged_localisation(f, x)
        b = grad_averaged_localisation(f, x, quadrature=True)
        assert np.max(np.abs(a - b)) < 1e-8


def test_euler_relation_and_scaling(rng):
    f = make_bump(1.0)
    xs = rng.uniform(-5, 5, size=(1000, 2))
    for x in xs:
        g = grad_averaged_localisation(f, x)
        assert x @ g == pytest.approx(-1.0, abs=1e-13)
        assert np.allclose(grad_averaged_localisation(f, 3 * x), g / 3, rtol=1e-13, atol=0)


def test_lattice_sum_far_and_even():
    f = make_bump(0.5)
    assert lattice_sum_F(f, 1.0, [2.0]) == 1.0
    assert lattice_sum_F(f, 0.1, [3.3, -1.2]) == lattice_sum_F(f, 0.1, [-3.3, 1.2])


@pytest.mark.parametrize("w", [0.5, 1.0])
def test_lattice_sum_riemann_limit(w):
    # int_R f0(|t|) dt = 2 (1 + w/2) because the smooth step has mean 1/2
    f = make_bump(w)
    s = 1e-3
    assert lattice_sum_F(f, s, [1.0]) * s == pytest.approx(2 + w, abs=1e-9)
