import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from qtimedelay.errors import GridMismatchError, PreconditionError, RepresentationError
from qtimedelay.hilbert import (MOMENTUM, Grid, State, WavepacketSpec, apply_position_function,
                                delta_state, inner, make_wavepacket, position_moments,
                                smooth_bump, to_momentum, to_position, weighted_norm,
                                window_mass_fraction)
from qtimedelay.localisation import make_bump


def random_state(grid, seed):
    r = np.random.default_rng(seed)
    return State(grid, r.normal(size=grid.shape) + 1j * r.normal(size=grid.shape))


def test_grid_validation():
    with pytest.raises(PreconditionError):
        Grid(1, 100)
    with pytest.raises(PreconditionError):
        Grid(1, 64, -1.0)
    g = Grid(2, 16, 0.5)
    assert g.shape == (16, 16)
    assert g.X.shape == (16, 16, 2)
    assert g.x[g.N // 2] == 0.0
    assert math.isclose(g.dp, 2 * math.pi / (16 * 0.5))


def test_delta_has_flat_momentum_profile(grid1):
    m = to_momentum(delta_state(grid1))
    mod = np.abs(m.amplitudes)
    assert np.ptp(mod) < 1e-14
    assert math.isclose(m.norm(), 1.0, rel_tol=1e-12)


def test_constant_momentum_gives_delta(grid1):
    a = np.ones(grid1.shape, dtype=complex)
    x = to_position(State(grid1, a, MOMENTUM))
    mass = np.abs(x.amplitudes[0]) ** 2
    assert mass[grid1.N // 2] / mass.sum() > 1 - 1e-12


def test_gaussian_fourier_pair(grid1):
    sigma = 4.0
    x = grid1.x
    phi = State(grid1, np.exp(-x ** 2 / (2 * sigma ** 2))).normalized()
    got = np.abs(to_momentum(phi).amplitudes[0])
    want = np.exp(-(grid1.p * sigma) ** 2 / 2)
    want = want / math.sqrt(np.sum(want ** 2) * grid1.dp)
    assert np.max(np.abs(got - want)) < 1e-8


@given(st.integers(0, 2 ** 31))
def test_fourier_unitary_round_trip(seed):
    g = Grid(1, 128, 0.7)
    phi = random_state(g, seed)
    m = to_momentum(phi)
    assert abs(m.norm() - phi.norm()) <= 1e-12 * phi.norm()
    back = to_position(m)
    assert np.max(np.abs(back.amplitudes - phi.amplitudes)) < 1e-12 * np.max(np.abs(phi.amplitudes))


@given(st.integers(0, 2 ** 31))
def test_inner_hermitian(seed):
    g = Grid(2, 16, 1.0)
    a, b = random_state(g, seed), random_state(g, seed + 1)
    assert abs(inner(a, b) - np.conj(inner(b, a))) < 1e-14 * abs(inner(a, b)) + 1e-14
    aa = inner(a, a)
    assert aa.imag == 0 and aa.real >= 0
    assert math.isclose(aa.real, a.norm() ** 2, rel_tol=1e-12)


def test_inner_orthogonal_deltas(grid1):
    assert inner(delta_state(grid1, (3,)), delta_state(grid1, (7,))) == 0


def test_representation_and_grid_errors(grid1):
    phi = delta_state(grid1)
    with pytest.raises(RepresentationError):
        to_position(phi)
    with pytest.raises(GridMismatchError):
        inner(phi, delta_state(Grid(1, 512)))
    with pytest.raises(GridMismatchError):
        State(grid1, np.zeros(10))


def compact_state(grid, center, radius):
    s = (grid.x - center) / radius
    return State(grid, smooth_bump(s) * np.exp(0.7j * grid.x)).normalized()


def test_position_function_identity_and_disjoint_support(grid1):
    phi = compact_state(grid1, 200.0, 20.0)
    same = apply_position_function(lambda y: np.ones(y.shape[:-1]), 3.0, phi)
    assert np.array_equal(same.amplitudes, phi.amplitudes)
    # support [180, 220] lies beyond r (1 + w) = 150
    assert apply_position_function(make_bump(0.5), 100.0, phi).norm() == 0.0


def test_position_function_converges_to_identity(grid1):
    phi = compact_state(grid1, 10.0, 20.0)
    f = make_bump(1.0)
    errs = [(apply_position_function(f, r, phi) - phi).norm() for r in (2, 4, 8, 16, 32, 64)]
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    # support inside the plateau |x| <= r
    assert errs[-1] == 0.0


def test_weighted_norm(grid1):
    phi = delta_state(grid1)
    assert weighted_norm(phi, 0) == pytest.approx(phi.norm(), rel=1e-14)
    assert weighted_norm(phi, 2) == pytest.approx(phi.norm(), rel=1e-14)
    fine = Grid(1, 4096, 0.25)
    x = fine.x
    sigma, t = 3.0, 1.5
    g = State(fine, np.exp(-(x - 5) ** 2 / (2 * sigma ** 2)))
    ref, _ = integrate.quad(lambda y: (1 + y * y) ** t * math.exp(-(y - 5) ** 2 / sigma ** 2),
                            -200, 200, points=[5.0], epsabs=0, epsrel=1e-13, limit=200)
    assert abs(weighted_norm(g, t) - math.sqrt(ref)) < 1e-8


def test_smooth_bump_values():
    s = np.array([-1.0, -0.5, 0.0, 0.5, 1.0, 2.0])
    b = smooth_bump(s)
    assert b[2] == 1.0 and b[0] == 0.0 and b[4] == 0.0 and b[5] == 0.0
    assert b[1] == b[3] == pytest.approx(math.exp(1 - 1 / 0.75))


def test_wavepacket_window_and_center():
    g = Grid(1, 2048, 1.0)
    spec = WavepacketSpec((30.0,), (0.4,), (0.9,), sigma_p=0.05)
    phi = make_wavepacket(g, spec)
    assert phi.norm() == pytest.approx(1.0, rel=1e-12)
    assert window_mass_fraction(phi, spec) == pytest.approx(1.0, abs=1e-15)
    mean, width = position_moments(phi)
    assert mean[0] == pytest.approx(30.0, abs=1e-8)
    assert 0 < width < 20
    with pytest.raises(PreconditionError):
        WavepacketSpec((0.0,), (0.5,), (0.4,))
    with pytest.raises(PreconditionError):
        make_wavepacket(g, WavepacketSpec((0.0,), (-3.2,), (0.4,)))
