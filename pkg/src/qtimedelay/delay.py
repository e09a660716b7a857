"""Sojourn times, time delays and convergence in the dilation scale ``r``.

With ``psi = W_- phi`` and the identification ``L_n`` (identity unless given)

    T0_r(phi)  = sum_n <U0^n phi, f(Q/r) U0^n phi>
    T_r1(phi)  = sum_n <L_n U^n psi, f(Q/r) L_n U^n psi>
    T_2(phi)   = sum_n <U^n psi, (1 - L_n^* L_n) U^n psi>

and ``T_r = T_r1 + T_2``. The symmetrised delay subtracts the mean of the
incoming and outgoing free sojourn times, the non-symmetrised one only the
incoming one. Both should approach ``<phi, S^*[T_f, S] phi>`` as ``r`` grows.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import PreconditionError
from .hilbert import GUARD_TOL, State, check_guard, fft_array
from .localisation import LocalisationFunction
from .scattering import (LimitResult, ScatteringSystem, SMatrixTable, ew_expectation_direct,
                         ew_expectation_fiber_checked, fiber_smatrix, scattering_apply,
                         wave_operator_apply)
from .timeops import (TAIL_TOL, SumResult, TimeOperator, _tail, auto_n_max,
                      half_difference_sum, richardson, two_sided_terms)

CHUNK = 64
#: elastic differences below this are at the roundoff level of the sojourn sums
ELASTIC_FLOOR = 1e-10


def sojourn_free(U0, f: LocalisationFunction, r: float, phi: State,
                 n_max: Optional[int] = None, tol: float = TAIL_TOL) -> SumResult:
    """``T0_r(phi)`` over ``|n| <= n_max``; inconclusive if the guard band is reached first."""
    if n_max is None:
        n_max = auto_n_max(U0, f, r, phi)
    terms = two_sided_terms(U0, f, r, phi, n_max, stop_at_guard=True)
    truncated = terms.size < n_max + 1
    return SumResult(float(np.sum(terms)), _tail(terms), int(terms.size - 1),
                     tol * phi.norm() ** 2, truncated)


@dataclass(frozen=True)
class FullSojourn:
    t_r1: SumResult
    t_2: float


def _trajectory_terms(sys: ScatteringSystem, psi: np.ndarray, weight: np.ndarray, n_max: int,
                      direction: int, L: Optional[Callable]):
    grid = sys.grid
    axes = tuple(range(-grid.d - 1, 0))
    a = psi
    loc, loss = [], []
    for n in range(1, n_max + 1):
        a = sys.U.step(a) if direction > 0 else sys.U.inverse_step(a)
        if n % CHUNK == 0 or n == n_max:
            check_guard(a, grid, sys.guard_fraction, GUARD_TOL, what="full evolution")
        b = a if L is None else L(direction * n, a)
        loc.append(float(np.sum(np.abs(b) ** 2 * weight, axis=axes)) * grid.dx_volume)
        if L is not None:
            loss.append(float(np.sum(np.abs(a) ** 2 - np.abs(b) ** 2)) * grid.dx_volume)
    return np.array(loc), np.array(loss)


def sojourn_full(sys: ScatteringSystem, f: LocalisationFunction, r: float, phi: State,
                 n_max: Optional[int] = None, w_minus: Optional[LimitResult] = None,
                 L: Optional[Callable] = None, tol: float = TAIL_TOL) -> FullSojourn:
    """``T_r1(phi)`` and ``T_2(phi)`` along the full trajectory of ``W_- phi``.

    ``L(n, a)`` is the injection at time ``n``; without it ``L_n = 1`` and
    ``T_2`` vanishes identically. (A contraction ``L`` keeps ``T_2 >= 0``.)
    """
    if not r > 0:
        raise PreconditionError("r must be positive")
    grid = sys.grid
    phi = phi.position()
    if n_max is None:
        n_max = auto_n_max(sys.U0, f, r, phi)
    if w_minus is None:
        w_minus = wave_operator_apply(sys, phi, "-")
    psi = w_minus.state.amplitudes
    weight = f(grid.X / r)
    b0 = psi if L is None else L(0, psi)
    axes = tuple(range(-grid.d - 1, 0))
    t0 = float(np.sum(np.abs(b0) ** 2 * weight, axis=axes)) * grid.dx_volume
    fwd, loss_f = _trajectory_terms(sys, psi, weight, n_max, 1, L)
    bwd, loss_b = _trajectory_terms(sys, psi, weight, n_max, -1, L)
    terms = np.concatenate([[t0], fwd + bwd])
    t2 = 0.0
    if L is not None:
        loss0 = float(np.sum(np.abs(psi) ** 2 - np.abs(b0) ** 2)) * grid.dx_volume
        t2 = loss0 + float(np.sum(loss_f + loss_b))
    t_r1 = SumResult(float(np.sum(terms)), _tail(terms), int(n_max), tol * phi.norm() ** 2)
    return FullSojourn(t_r1, t2)


@dataclass(frozen=True)
class SojournRecord:
    """All sums for one dilation scale, with the derived delays."""

    r: float
    n_max: int
    free_phi: float
    free_s_phi: float
    full: float
    t_2: float
    hd_phi: float
    hd_s_phi: float
    tails: dict
    conclusive: bool

    @property
    def t_r(self) -> float:
        return self.full + self.t_2

    @property
    def tau_sym(self) -> float:
        return self.t_r - 0.5 * (self.free_phi + self.free_s_phi)

    @property
    def tau_nsym(self) -> float:
        return self.t_r - self.free_phi

    @property
    def tau_free(self) -> float:
        return self.hd_s_phi - self.hd_phi

    @property
    def elastic_difference(self) -> float:
        return self.free_s_phi - self.free_phi

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(t_r=self.t_r, tau_sym=self.tau_sym, tau_nsym=self.tau_nsym,
                 tau_free=self.tau_free, elastic_difference=self.elastic_difference)
        return d


def sojourn_record(sys: ScatteringSystem, f: LocalisationFunction, r: float, phi: State,
                   w_minus: LimitResult, s_phi: State, n_max: Optional[int] = None,
                   L: Optional[Callable] = None, tol: float = TAIL_TOL) -> SojournRecord:
    """Every sum needed for the delays at scale ``r`` (one ``n_max`` shared by all of them)."""
    U0 = sys.U0
    phi = phi.position()
    if n_max is None:
        n_max = max(auto_n_max(U0, f, r, phi), auto_n_max(U0, f, r, s_phi))
    free_phi = sojourn_free(U0, f, r, phi, n_max, tol)
    free_s = sojourn_free(U0, f, r, s_phi, n_max, tol)
    full = sojourn_full(sys, f, r, phi, n_max, w_minus, L, tol)
    hd_phi = half_difference_sum(U0, f, r, phi, n_max, tol)
    hd_s = half_difference_sum(U0, f, r, s_phi, n_max, tol)
    parts = {"free_phi": free_phi, "free_s_phi": free_s, "full": full.t_r1,
             "hd_phi": hd_phi, "hd_s_phi": hd_s}
    tails = {k: v.tail for k, v in parts.items()}
    return SojournRecord(float(r), int(n_max), free_phi.value, free_s.value, full.t_r1.value,
                         full.t_2, hd_phi.value, hd_s.value, tails,
                         all(v.conclusive for v in parts.values()))


def _scattered(sys, phi, w_minus=None, s_phi=None):
    phi = phi.position()
    if w_minus is None:
        w_minus = wave_operator_apply(sys, phi, "-")
    if s_phi is None:
        s_phi = scattering_apply(sys, phi).state
    return phi, w_minus, s_phi


def tau_sym(sys: ScatteringSystem, f: LocalisationFunction, r: float, phi: State, **kw) -> float:
    phi, wm, sp = _scattered(sys, phi)
    return sojourn_record(sys, f, r, phi, wm, sp, **kw).tau_sym


def tau_nsym(sys: ScatteringSystem, f: LocalisationFunction, r: float, phi: State, **kw) -> float:
    phi, wm, sp = _scattered(sys, phi)
    return sojourn_record(sys, f, r, phi, wm, sp, **kw).tau_nsym


def tau_free(U0, s_phi: State, f: LocalisationFunction, r: float, phi: State,
             n_max: Optional[int] = None) -> float:
    """``1/2 sum_{n>=0} <phi, S^*[U0^-n f U0^n - U0^n f U0^-n, S] phi>`` via ``S^* S = 1``."""
    if n_max is None:
        n_max = max(auto_n_max(U0, f, r, phi), auto_n_max(U0, f, r, s_phi))
    return (half_difference_sum(U0, f, r, s_phi, n_max).value
            - half_difference_sum(U0, f, r, phi, n_max).value)


@dataclass(frozen=True)
class ElasticResult:
    value: float
    skipped: bool
    reason: str = ""


def shell_defect(U0, phi: State, s_phi: State) -> float:
    """``max_p | |Sphi(p)|^2 + |Sphi(-p)|^2 - |phi(p)|^2 - |phi(-p)|^2 |`` (1D, times ``dp``)."""
    grid = U0.grid
    a = np.abs(fft_array(phi.position().amplitudes, grid)[0]) ** 2
    b = np.abs(fft_array(s_phi.position().amplitudes, grid)[0]) ** 2
    flip = lambda x: np.concatenate([[x[0]], x[1:][::-1]])  # p -> -p on the centred grid
    return float(np.max(np.abs(b + flip(b) - a - flip(a)))) * grid.dp


def elastic_difference(sys: ScatteringSystem, f: LocalisationFunction, r: float, phi: State,
                       s_phi: Optional[State] = None, n_max: Optional[int] = None,
                       shell_tol: Optional[float] = None) -> ElasticResult:
    """``T0_r(S phi) - T0_r(phi)``, or a skip flag when scattering may be inelastic."""
    U0 = sys.U0
    if U0.components != 1 or sys.U.components != 1:
        return ElasticResult(math.nan, True, "internal degrees of freedom: channels may mix")
    if U0.grid.d != 1:
        return ElasticResult(math.nan, True, "elastic check implemented for 1D models")
    if s_phi is None:
        s_phi = scattering_apply(sys, phi).state
    tol = 10 * sys.tol_w if shell_tol is None else shell_tol
    defect = shell_defect(U0, phi, s_phi)
    if defect > tol:
        return ElasticResult(math.nan, True, f"energy-shell defect {defect:.2e} above {tol:.1e}")
    if n_max is None:
        n_max = max(auto_n_max(U0, f, r, phi), auto_n_max(U0, f, r, s_phi))
    val = sojourn_free(U0, f, r, s_phi, n_max).value - sojourn_free(U0, f, r, phi, n_max).value
    return ElasticResult(val, False)


# -- convergence study -------------------------------------------------------

@dataclass(frozen=True)
class DelayTolerances:
    rel: float = 5e-2
    abs: float = 2e-2
    fiber_rel: float = 2e-2
    fiber_abs: float = 5e-4
    halving: float = 1e-2
    ew_zero: float = 2e-6
    # relative packet mass allowed outside the fiber table window
    fiber_support: float = 1e-8


@dataclass(frozen=True)
class TimeDelayReport:
    records: tuple
    tau_sym_limit: float
    tau_nsym_limit: float
    tau_sym_extrapolants: tuple
    tau_nsym_extrapolants: tuple
    ew_direct: float
    ew_fiber: Optional[float]
    ew_fiber_halved: Optional[float]
    scattered_slow_mass: float
    verdicts: dict
    conclusive: bool

    @property
    def passed(self) -> bool:
        return self.conclusive and all(self.verdicts.values())

    def as_dict(self) -> dict:
        return {
            "records": [rec.as_dict() for rec in self.records],
            "tau_sym_limit": self.tau_sym_limit,
            "tau_nsym_limit": self.tau_nsym_limit,
            "tau_sym_extrapolants": list(self.tau_sym_extrapolants),
            "tau_nsym_extrapolants": list(self.tau_nsym_extrapolants),
            "ew_direct": self.ew_direct,
            "ew_fiber": self.ew_fiber,
            "ew_fiber_halved": self.ew_fiber_halved,
            "scattered_slow_mass": self.scattered_slow_mass,
            "verdicts": dict(self.verdicts),
            "conclusive": self.conclusive,
        }


def _close(a: float, b: float, rel: float, abs_tol: float) -> bool:
    return abs(a - b) <= max(rel * abs(b), abs_tol)


def convergence_study(sys: ScatteringSystem, f: LocalisationFunction, phi: State,
                      r_list: Sequence[float], v_min: float = 0.1,
                      fiber_window: Optional[tuple] = None, fiber_kw: Optional[dict] = None,
                      tolerances: DelayTolerances = DelayTolerances(), threads: int = 1,
                      L: Optional[Callable] = None) -> TimeDelayReport:
    """Delays over ascending ``r_list`` compared with the Eisenbud-Wigner value.

    Limits are two-point Richardson extrapolants (``O(1/r)`` model) of the
    two largest scales. ``fiber_window`` (positive momenta) enables the fiber
    route for the EW value.
    """
    r_list = [float(r) for r in r_list]
    if len(r_list) < 3 or any(b <= a for a, b in zip(r_list, r_list[1:])):
        raise PreconditionError("r_list must be ascending with at least three entries")
    phi = phi.position()
    w_minus = wave_operator_apply(sys, phi, "-")
    s_phi = scattering_apply(sys, phi).state
    T = TimeOperator(sys.U0, f, v_min)
    ew_direct = ew_expectation_direct(sys, T, phi, s_phi)

    def job(r):
        return sojourn_record(sys, f, r, phi, w_minus, s_phi, L=L)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            records = tuple(ex.map(job, r_list))
    else:
        records = tuple(job(r) for r in r_list)

    ext_sym = tuple(richardson(r_list, [rec.tau_sym for rec in records]))
    ext_nsym = tuple(richardson(r_list, [rec.tau_nsym for rec in records]))
    lim_sym, lim_nsym = ext_sym[-1], ext_nsym[-1]

    ew_fiber = ew_half = None
    if fiber_window is not None:
        table = fiber_smatrix(sys, fiber_window, **(fiber_kw or {}))
        fib = ew_expectation_fiber_checked(sys, table, phi, tolerances.halving,
                                           tolerances.fiber_support, tolerances.ew_zero)
        ew_fiber, ew_half = fib.value, fib.halved

    tol = tolerances
    verdicts = {
        "tau_sym_vs_ew": _close(lim_sym, ew_direct, tol.rel, tol.abs),
        "tau_nsym_vs_tau_sym": _close(lim_nsym, lim_sym, tol.rel, tol.abs),
        "extrapolants_consistent": _close(ext_sym[-1], ext_sym[-2], tol.rel / 2, tol.abs / 2),
    }
    elastic = [abs(rec.elastic_difference) for rec in records]
    verdicts["elastic_decreasing"] = all(b < a for a, b in zip(elastic, elastic[1:])) or max(elastic) <= ELASTIC_FLOOR
    # tau_free approaches tau_sym; 10% slack on the first step, where boundary terms are largest
    gap = [abs(rec.tau_sym - rec.tau_free) for rec in records]
    slack = [1.1] + [1.0] * (len(gap) - 2)
    verdicts["free_approach"] = (all(b <= k * a for a, b, k in zip(gap, gap[1:], slack))
                                 or max(gap) <= ELASTIC_FLOOR)
    if ew_fiber is not None:
        verdicts["fiber_vs_direct"] = _close(ew_direct, ew_fiber, tol.fiber_rel, tol.fiber_abs)
    m = s_phi.momentum()
    dens = np.sum(np.abs(m.amplitudes) ** 2, axis=0)
    slow = float(np.sum(dens[sys.U0.speed < v_min]) / np.sum(dens))
    return TimeDelayReport(records, lim_sym, lim_nsym, ext_sym, ext_nsym, ew_direct, ew_fiber,
                           ew_half, slow, verdicts, all(rec.conclusive for rec in records))
