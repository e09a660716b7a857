import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import packet
from qtimedelay.delay import sojourn_free
from qtimedelay.errors import DomainError, InconclusiveError, PreconditionError
from qtimedelay.hilbert import Grid, fft_array, ifft_array, inner
from qtimedelay.localisation import make_bump
from qtimedelay.models import build_free_laplacian, build_free_shift, window_arc
from qtimedelay.timeops import (ConjugateOperator, TimeOperator, apply_time_operator, auto_n_max,
                                canonical_commutation_residual, conjugate_apply,
                                half_difference_sum, mourre_bound, periodic_components,
                                quadratic_form, richardson, smooth_sum, summation_formula_report,
                                time_expectation, window_probes)

G = Grid(1, 2048, 1.0)
G2 = Grid(1, 4096, 2.0)
SHIFT = build_free_shift(G, [1.0])
LAP = build_free_laplacian(G)
LAP2 = build_free_laplacian(G2)
F = make_bump(0.5)


def norm(a, grid):
    return math.sqrt(float(np.sum(np.abs(a) ** 2)) * grid.h)


def test_shift_time_operator_is_minus_q():
    phi = packet(G, 12.0, -0.5, 0.8, 0.1)
    T = TimeOperator(SHIFT, F)
    got = apply_time_operator(T, phi).amplitudes
    assert np.max(np.abs(got + G.x * phi.amplitudes)) < 1e-10
    assert time_expectation(T, phi) == pytest.approx(-12.0, abs=1e-6)
    assert time_expectation(T, packet(G, 0.0, -0.5, 0.8, 0.1)) == pytest.approx(0.0, abs=1e-9)


def test_laplacian_time_operator_direct_composition():
    phi = packet(G, 7.0, 0.4, 1.2)
    T = TimeOperator(LAP, F)
    a = phi.amplitudes
    p = G.p
    inv_p = np.where(np.abs(p) > 1e-12, 1.0 / np.where(p == 0, 1.0, p), 0.0)
    over_p = lambda b: ifft_array(fft_array(b, G) * inv_p, G)
    want = -0.25 * (G.x * over_p(a) + over_p(G.x * a))
    assert np.max(np.abs(T.apply(phi).amplitudes - want)) < 1e-10


def test_time_expectation_matches_quadratic_form():
    phi = packet(G, -15.0, 0.3, 1.0)
    T = TimeOperator(LAP, F)
    q = quadratic_form(T, phi)
    assert abs(q.imag) < 1e-12
    assert time_expectation(T, phi) == pytest.approx(q.real, abs=1e-9)


@given(st.floats(-30, 30), st.floats(-30, 30), st.floats(0.2, 0.6), st.floats(0.2, 0.6))
def test_time_operator_symmetric(x1, x2, lo1, lo2):
    a = packet(G, x1, lo1, lo1 + 0.5)
    b = packet(G, x2, -lo2 - 0.6, -lo2)
    for U0 in (LAP, SHIFT):
        T = TimeOperator(U0, F)
        assert abs(inner(a, T.apply(b)) - inner(T.apply(a), b)) < 1e-8


def test_time_operator_domain_error():
    T = TimeOperator(LAP, F, v_min=0.1)
    with pytest.raises(DomainError):
        T.apply(packet(G, 0.0, -0.2, 0.2))


def test_canonical_commutation():
    phi = packet(G, 4.0, 0.4, 1.0)
    TS, TL = TimeOperator(SHIFT, F), TimeOperator(LAP, F)
    assert canonical_commutation_residual(TL, LAP, phi, 0) == 0.0
    assert canonical_commutation_residual(TS, SHIFT, phi, 5) <= 1e-12
    for n in (-3, 3):
        assert canonical_commutation_residual(TL, LAP, phi, n) <= 1e-8


@given(st.integers(-16, 16), st.floats(-20, 20), st.floats(0.3, 1.5))
def test_canonical_commutation_property(n, x0, lo):
    phi = packet(G, x0, lo, lo + 0.6)
    assert canonical_commutation_residual(TimeOperator(LAP, F), LAP, phi, n) <= 1e-8


def test_half_difference_symmetric_packet_vanishes():
    # even momentum profile centred at x0 = 0
    phi = packet(G2, 0.0, -1.0, 1.0, 0.1)
    res = half_difference_sum(LAP2, F, 32.0, phi, n_max=200, tol=1.0)
    assert abs(res.value) < 1e-10


def test_half_difference_shift_closed_form():
    phi = packet(G, 9.0, -0.5, 0.8, 0.1)
    r = 40.0
    n_max = auto_n_max(SHIFT, F, r, phi)
    res = half_difference_sum(SHIFT, F, r, phi, n_max)
    rho = np.abs(phi.amplitudes[0]) ** 2 * G.h
    x = G.x
    want = sum(0.5 * np.sum(rho * (F((x + n)[:, None] / r) - F((x - n)[:, None] / r)))
               for n in range(n_max + 1))
    assert res.value == pytest.approx(want, abs=1e-10)
    assert res.conclusive


def test_summation_shift_and_laplacian():
    phi = packet(G, 12.0, -0.5, 0.8, 0.1)
    rep = summation_formula_report(SHIFT, F, phi, [64, 128, 256])
    assert rep.conclusive and rep.relative_error <= 1e-3
    lap_phi = packet(G2, -20.0, 0.5, 1.0)
    rep = summation_formula_report(LAP2, F, lap_phi, [64, 128, 256])
    assert rep.conclusive and rep.relative_error <= 5e-2
    with pytest.raises(DomainError):
        summation_formula_report(LAP2, F, packet(G2, 0.0, -0.1, 0.1, 0.02), [64, 128, 256])


def test_richardson_exact_for_one_over_r():
    rs = [64.0, 128.0, 256.0]
    assert richardson(rs, [3 + 5 / r for r in rs]) == pytest.approx([3.0, 3.0], abs=1e-13)


def test_conjugate_operator_shift_and_table():
    A = ConjugateOperator(SHIFT)
    phi = packet(G, 4.0, -0.5, 0.8, 0.1)
    assert inner(phi, conjugate_apply(A, phi)).real == pytest.approx(2.0, abs=1e-9)
    assert np.array_equal(ConjugateOperator(LAP).pi_table[..., 0], 2 * G.p / (4 * G.p ** 2 + 1))


@given(st.floats(-20, 20), st.floats(-20, 20))
def test_conjugate_operator_symmetric(x1, x2):
    A = ConjugateOperator(LAP)
    a, b = packet(G, x1, 0.2, 0.9), packet(G, x2, -1.4, -0.3)
    assert abs(inner(a, A.apply(b)) - inner(A.apply(a), b)) < 1e-9


def test_mourre_shift_is_one_half(rng):
    win = window_arc(1.0, 0.2)
    probes = window_probes(SHIFT, win, 3, rng)
    m = mourre_bound(SHIFT, ConjugateOperator(SHIFT), win, probes)
    assert m.analytic == 0.5
    assert m.numeric == pytest.approx(0.5, abs=1e-12)
    assert m.multiplier_route == pytest.approx(0.5, abs=1e-15)


def test_mourre_laplacian_window(rng):
    # |p| in [0.5, 1] maps to angles -p^2 in [-1, -0.25]
    win = (2 * math.pi - 1.0, 2 * math.pi - 0.25)
    probes = window_probes(LAP2, win, 3, rng)
    m = mourre_bound(LAP2, ConjugateOperator(LAP2), win, probes)
    assert m.analytic == pytest.approx(0.5, abs=4 * G2.dp)
    assert m.numeric >= m.analytic - 1e-9
    with pytest.raises(PreconditionError):
        mourre_bound(LAP2, ConjugateOperator(LAP2), window_arc(0.0, 0.1), probes)


def test_periodic_components_join_across_edge():
    mask = np.zeros(16, dtype=bool)
    mask[[0, 1, 7, 14, 15]] = True
    labels, count = periodic_components(mask)
    assert count == 2
    assert labels[0] == labels[15]


def test_smooth_sum_equals_free_sojourn_and_is_stable():
    phi = packet(G, 5.0, 0.4, 1.0)
    for U0 in (SHIFT, LAP):
        a = smooth_sum(U0, F, 32.0, phi)
        assert a.value == sojourn_free(U0, F, 32.0, phi).value
        b = smooth_sum(U0, F, 32.0, phi, 2 * a.n_max)
        assert abs(a.value - b.value) <= 1e-6 * abs(b.value)


def test_smooth_sum_slow_packet_inconclusive():
    phi = packet(G2, 0.0, -0.05, 0.05, 0.01)
    res = smooth_sum(LAP2, F, 32.0, phi, n_max=200)
    assert not res.conclusive
    with pytest.raises(InconclusiveError):
        res.require()
