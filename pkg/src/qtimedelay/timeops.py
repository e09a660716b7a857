"""Time operator, conjugate operator and sums over free evolution.

The time operator for a radial localisation function is

    T_f = -1/2 (Q.V/V^2 + (V/|V|).Q |V|^-1 + i V.(V'^T V)/V^4),

assembled from momentum-space multipliers and position-space ``Q``. It is
only defined on states whose momentum support avoids ``v = 0``; a hard
velocity floor replaces any regularisation.

Free-evolution sums ``sum_n <U0^n phi, f(Q/r) U0^n phi>`` are evaluated in
chunks: the powers ``U0^n`` are closed-form phases in momentum space, so a
whole block of ``n`` values costs one batched inverse FFT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import DomainError, InconclusiveError, PreconditionError
from .hilbert import (GUARD_FRACTION, GUARD_TOL, MOMENTUM, State, apply_position_coordinate,
                      check_guard, fft_array, guard_mass, ifft_array, inner,
                      position_moments)
from .localisation import LocalisationFunction
from .models import (DEFAULT_V_MIN, TWO_PI, FiberedPropagator, critical_values,
                     min_speed_on_support, window_preimage)

#: relative momentum mass tolerated below the velocity floor
DOMAIN_TOL = 1e-20
#: absolute tail (times ||phi||^2) above which a truncated sum is inconclusive
TAIL_TOL = 1e-10
SUM_CHUNK = 128
MAX_N_MAX = 200_000


def momentum_multiply(a: np.ndarray, table: np.ndarray, grid) -> np.ndarray:
    """Apply a momentum-space multiplier (``grid.shape``) to position amplitudes."""
    return ifft_array(fft_array(a, grid) * table, grid)


def check_domain(U0: FiberedPropagator, state: State, v_min: float = DEFAULT_V_MIN,
                 tol: float = DOMAIN_TOL) -> None:
    """Raise :class:`DomainError` if ``state`` carries momentum mass where ``|v| < v_min``."""
    U0._require_scalar()
    m = state.momentum()
    w = np.sum(np.abs(m.amplitudes) ** 2, axis=0)
    total = float(np.sum(w))
    if total == 0:
        raise DomainError("zero state")
    slow = float(np.sum(w[U0.speed < v_min])) / total
    if slow > tol:
        raise DomainError(f"relative momentum mass {slow:.3e} below the velocity floor {v_min}")


# -- time operator -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TimeOperator:
    """``T_f`` for a scalar fibered model and a radial localisation function."""

    U0: FiberedPropagator
    f: LocalisationFunction
    v_min: float = DEFAULT_V_MIN
    domain_tol: float = DOMAIN_TOL

    def __post_init__(self):
        self.U0._require_scalar()
        if not self.f.radial:
            raise PreconditionError("the closed-form time operator needs a radial localisation")
        if not self.v_min > 0:
            raise PreconditionError("v_min must be positive")

    def _tables(self):
        v = self.U0.velocity
        speed = self.U0.speed
        ok = speed >= self.v_min
        safe = np.where(ok, speed, 1.0)
        inv_sq = np.where(ok, 1.0 / safe ** 2, 0.0)
        inv = np.where(ok, 1.0 / safe, 0.0)
        unit = v * inv[..., None]
        # V.(V'^T V) / V^4 with V'_{kj} = d_j V_k
        vv = np.einsum("...kj,...k,...j->...", self.U0.jacobian, v, v)
        extra = vv * inv_sq ** 2
        return v * inv_sq[..., None], unit, inv, extra

    def gradient_table(self) -> np.ndarray:
        """``(grad R_f)(v(p)) = -v/v^2`` on the grid (zero below the floor)."""
        v_over, _, _, _ = self._tables()
        return -v_over

    def apply(self, state: State) -> State:
        check_domain(self.U0, state, self.v_min, self.domain_tol)
        grid = self.U0.grid
        a = state.position().amplitudes
        v_over, unit, inv, extra = self._tables()
        out = 1j * momentum_multiply(a, extra, grid)
        b = momentum_multiply(a, inv, grid)
        for j in range(grid.d):
            Xj = grid.X[..., j]
            out = out + Xj * momentum_multiply(a, v_over[..., j], grid)
            out = out + momentum_multiply(Xj * b, unit[..., j], grid)
        return State(grid, -0.5 * out)


def apply_time_operator(T: TimeOperator, phi: State) -> State:
    return T.apply(phi)


def quadratic_form(T: TimeOperator, phi: State) -> complex:
    """``t_f(phi) = 1/2 sum_j (<Q_j phi, G_j(V) phi> + <G_j(V) phi, Q_j phi>)`` with ``G = grad R_f``."""
    check_domain(T.U0, phi, T.v_min, T.domain_tol)
    grid = T.U0.grid
    phi = phi.position()
    G = T.gradient_table()
    total = 0.0
    for j in range(grid.d):
        qphi = apply_position_coordinate(phi, j)
        gphi = phi.with_amplitudes(momentum_multiply(phi.amplitudes, G[..., j], grid))
        total += 0.5 * (inner(qphi, gphi) + inner(gphi, qphi))
    return total


def time_expectation(T: TimeOperator, phi: State, rel_imag_tol: float = 1e-9) -> float:
    """``<phi, T_f phi>`` (real; the imaginary part is checked against ``rel_imag_tol``)."""
    val = inner(phi.position(), T.apply(phi))
    scale = max(abs(val), phi.norm() ** 2)
    if abs(val.imag) > rel_imag_tol * scale:
        raise PreconditionError(f"time expectation not real: imaginary part {val.imag:.3e}")
    return float(val.real)


def canonical_commutation_residual(T: TimeOperator, U0: FiberedPropagator, phi: State,
                                   n: int) -> float:
    """``||T U0^n phi - U0^n T phi + n U0^n phi|| / ||phi||``."""
    if n == 0:
        return 0.0
    phi = phi.position()
    grid = U0.grid
    moved = phi.with_amplitudes(U0.apply_array(phi.amplitudes, n))
    check_guard(moved.amplitudes, grid, what=f"U0^{n} phi")
    lhs = T.apply(moved).amplitudes
    rhs = U0.apply_array(T.apply(phi).amplitudes, n) - n * moved.amplitudes
    diff = math.sqrt(float(np.sum(np.abs(lhs - rhs) ** 2)) * grid.dx_volume)
    return diff / phi.norm()


# -- conjugate operator and Mourre bound ------------------------------------

@dataclass(frozen=True, eq=False)
class ConjugateOperator:
    """``A = 1/2 sum_j (Pi_j Q_j + Q_j Pi_j)`` with ``Pi_j = v_j / (v_j^2 + 1)``."""

    U0: FiberedPropagator

    def __post_init__(self):
        self.U0._require_scalar()

    @property
    def pi_table(self) -> np.ndarray:
        v = self.U0.velocity
        return v / (v * v + 1.0)

    def commutator_multiplier(self) -> np.ndarray:
        """``U0^-1 [A, U0] = sum_j v_j^2 / (v_j^2 + 1)`` as a momentum table."""
        v = self.U0.velocity
        return np.sum(v * v / (v * v + 1.0), axis=-1)

    def apply(self, state: State) -> State:
        grid = self.U0.grid
        a = state.position().amplitudes
        Pi = self.pi_table
        out = np.zeros_like(a)
        for j in range(grid.d):
            Xj = grid.X[..., j]
            out = out + momentum_multiply(Xj * a, Pi[..., j], grid)
            out = out + Xj * momentum_multiply(a, Pi[..., j], grid)
        return State(grid, 0.5 * out)


def conjugate_apply(A: ConjugateOperator, phi: State) -> State:
    return A.apply(phi)


def periodic_components(mask: np.ndarray) -> tuple:
    """Connected components of a boolean array on the periodic grid: ``(labels, count)``."""
    labels, count = ndimage.label(mask)
    parent = list(range(count + 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for ax in range(mask.ndim):
        first = np.take(labels, 0, axis=ax)
        last = np.take(labels, -1, axis=ax)
        for a, b in zip(first.ravel(), last.ravel()):
            if a and b:
                parent[find(a)] = find(b)
    roots = {find(i) for i in range(1, count + 1)}
    relabel = {r: k + 1 for k, r in enumerate(sorted(roots))}
    lut = np.array([0] + [relabel[find(i)] for i in range(1, count + 1)])
    return lut[labels], len(roots)


def window_probes(U0: FiberedPropagator, window, count: int, rng: np.random.Generator,
                  max_shift: float = 10.0) -> list:
    """Random smooth states whose quasi-energy support lies inside ``window``.

    Each probe is a C-infinity bump in the quasi-energy variable, with random
    complex weights on the connected components (on the momentum torus) of the
    window's preimage and a random lattice offset. Weighting whole components
    keeps the profile smooth where a component crosses the zone edge.
    """
    grid = U0.grid
    lo, hi = window
    half = 0.5 * (hi - lo)
    t = (U0.quasi_energies() - lo) % TWO_PI
    s = (t - half) / half
    base = np.zeros(grid.shape)
    inside = np.abs(s) < 1
    base[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    if not np.any(base > 0):
        raise PreconditionError("window contains no grid momentum")
    labels, ncomp = periodic_components(base > 0)
    probes = []
    for _ in range(count):
        w = rng.normal(size=ncomp + 1) + 1j * rng.normal(size=ncomp + 1)
        # lattice offsets keep exp(-i p.x0) periodic across the zone edge
        x0 = grid.h * np.round(rng.uniform(-max_shift, max_shift, size=grid.d) / grid.h)
        prof = base * w[labels] * np.exp(-1j * (grid.P @ x0))
        st = State(grid, prof, MOMENTUM)
        probes.append(st.normalized().position())
    return probes


@dataclass(frozen=True)
class MourreResult:
    numeric: float
    analytic: float
    multiplier_route: float


def mourre_bound(U0: FiberedPropagator, A: ConjugateOperator, window, probes: Sequence[State],
                 v_min: float = DEFAULT_V_MIN, spectral_tol: float = 1e-20) -> MourreResult:
    """Lower bounds for ``E U0^-1 [A, U0] E`` on a quasi-energy window.

    ``numeric`` evaluates ``<U0 phi, A U0 phi> - <phi, A phi>`` by applying
    ``A`` itself; ``multiplier_route`` evaluates the same expectation through
    the commutator multiplier; ``analytic`` is the multiplier's minimum over
    grid momenta mapping into the window.
    """
    cs = critical_values(U0, v_min)
    if cs.intersects(window):
        raise PreconditionError("window touches a critical arc")
    mask = window_preimage(U0, window)
    if not mask.any():
        raise PreconditionError("window contains no grid momentum")
    mult = A.commutator_multiplier()
    analytic = float(np.min(mult[mask]))
    numeric = math.inf
    via_mult = math.inf
    for phi in probes:
        m = phi.momentum()
        dens = np.sum(np.abs(m.amplitudes) ** 2, axis=0)
        total = float(np.sum(dens))
        if float(np.sum(dens[~mask])) > spectral_tol * total:
            raise PreconditionError("probe is not spectrally localised in the window")
        phi = phi.position()
        moved = phi.with_amplitudes(U0.apply_array(phi.amplitudes, 1))
        # A contains Q, which jumps at the box edge
        check_guard(phi.amplitudes, phi.grid, what="Mourre probe")
        check_guard(moved.amplitudes, phi.grid, what="Mourre probe after one step")
        val = inner(moved, A.apply(moved)) - inner(phi, A.apply(phi))
        nrm2 = phi.norm() ** 2
        numeric = min(numeric, float(val.real) / nrm2)
        via_mult = min(via_mult, float(np.sum(dens * mult)) / total)
    return MourreResult(numeric, analytic, via_mult)


# -- sums over free evolution -----------------------------------------------

@dataclass(frozen=True)
class SumResult:
    """Truncated sum with its tail estimate (sum of |terms| over the last 10% of the range)."""

    value: float
    tail: float
    n_max: int
    tol: float = TAIL_TOL
    truncated: bool = False

    @property
    def conclusive(self) -> bool:
        return self.tail <= self.tol and not self.truncated

    def require(self) -> "SumResult":
        if not self.conclusive:
            raise InconclusiveError(f"tail {self.tail:.3e} above {self.tol:.1e} at n_max={self.n_max}",
                                    tail=self.tail)
        return self


def free_sojourn_terms(U0: FiberedPropagator, f: LocalisationFunction, r: float, phi: State,
                       ns: np.ndarray, guard: bool = True,
                       guard_fraction: float = GUARD_FRACTION, stop_at_guard: bool = False) -> np.ndarray:
    """``<U0^n phi, f(Q/r) U0^n phi>`` for every ``n`` in ``ns``.

    With ``stop_at_guard`` a guard-band violation ends the computation and the
    terms computed so far (``ns`` must then be ordered by ``|n|``) are returned.
    """
    U0._require_scalar()
    if not r > 0:
        raise PreconditionError("r must be positive")
    grid = U0.grid
    a_hat = fft_array(phi.position().amplitudes, grid)
    weight = f(grid.X / r)
    ns = np.asarray(ns, dtype=int)
    out = np.empty(ns.size)
    axes = tuple(range(-grid.d - 1, 0))
    for start in range(0, ns.size, SUM_CHUNK):
        block = ns[start:start + SUM_CHUNK]
        phases = np.exp(-1j * block.reshape((-1,) + (1,) * grid.d) * U0.phase)
        a = ifft_array(a_hat[np.newaxis] * phases[:, np.newaxis], grid)
        if guard and stop_at_guard:
            bad = np.nonzero(guard_mass(a, grid, guard_fraction) > GUARD_TOL)[0]
            if bad.size:
                k = bad[0]
                out[start:start + k] = (np.sum(np.abs(a[:k]) ** 2 * weight, axis=axes)
                                        * grid.dx_volume)
                return out[:start + k]
        elif guard:
            check_guard(a, grid, guard_fraction, GUARD_TOL, what="free evolution")
        out[start:start + block.size] = np.sum(np.abs(a) ** 2 * weight, axis=axes) * grid.dx_volume
    return out


def auto_n_max(U0: FiberedPropagator, f: LocalisationFunction, r: float, phi: State,
               v_min: float = DEFAULT_V_MIN, cap: int = MAX_N_MAX) -> int:
    """Steps after which the transported packet has left the support of ``f(Q/r)``.

    ``ceil((r (1 + w) + |<Q>| + 8 width) / (0.9 v_floor))``, where ``v_floor``
    is the slowest velocity on the packet's momentum support. The factor 0.9
    places the last tenth of the range, which feeds the tail estimate, beyond
    the exit step.
    """
    v_floor = max(min_speed_on_support(U0, phi), v_min * 1e-3)
    mean, width = position_moments(phi)
    reach = r * f.support_radius + float(np.linalg.norm(mean)) + 8.0 * width
    return int(min(cap, math.ceil(reach / (0.9 * v_floor))))


def _tail(terms: np.ndarray) -> float:
    k = max(1, int(math.ceil(0.1 * terms.size)))
    return float(np.sum(np.abs(terms[-k:])))


def half_difference_sum(U0: FiberedPropagator, f: LocalisationFunction, r: float, phi: State,
                        n_max: Optional[int] = None, tol: float = TAIL_TOL) -> SumResult:
    """``1/2 sum_{n=0}^{n_max} <phi, (U0^-n f(Q/r) U0^n - U0^n f(Q/r) U0^-n) phi>``."""
    if n_max is None:
        n_max = auto_n_max(U0, f, r, phi)
    ns = np.arange(n_max + 1)
    fwd = free_sojourn_terms(U0, f, r, phi, ns)
    bwd = free_sojourn_terms(U0, f, r, phi, -ns)
    terms = 0.5 * (fwd - bwd)
    return SumResult(float(np.sum(terms)), _tail(terms), int(n_max), tol * phi.norm() ** 2)


def two_sided_terms(U0, f, r, phi, n_max, stop_at_guard: bool = False) -> np.ndarray:
    """Terms ``t(0), t(1) + t(-1), t(2) + t(-2), ...`` with ``t(n) = <U0^n phi, f(Q/r) U0^n phi>``.

    With ``stop_at_guard`` the result is cut at the first ``|n|`` whose
    evolved state reaches the guard band (and may be shorter than ``n_max + 1``).
    """
    ns = np.arange(1, n_max + 1)
    t0 = free_sojourn_terms(U0, f, r, phi, np.array([0]))
    fwd = free_sojourn_terms(U0, f, r, phi, ns, stop_at_guard=stop_at_guard)
    bwd = free_sojourn_terms(U0, f, r, phi, -ns, stop_at_guard=stop_at_guard)
    k = min(fwd.size, bwd.size)
    return np.concatenate([t0, fwd[:k] + bwd[:k]])


def smooth_sum(U0: FiberedPropagator, f: LocalisationFunction, r: float, phi: State,
               n_max: Optional[int] = None, tol: float = TAIL_TOL) -> SumResult:
    """``sum_{|n| <= n_max} ||f(Q/r)^(1/2) U0^n phi||^2`` (``f >= 0``)."""
    if n_max is None:
        n_max = auto_n_max(U0, f, r, phi)
    terms = two_sided_terms(U0, f, r, phi, n_max, stop_at_guard=True)
    truncated = terms.size < n_max + 1
    return SumResult(float(np.sum(terms)), _tail(terms), int(terms.size - 1),
                     tol * phi.norm() ** 2, truncated)


def richardson(rs: Sequence[float], values: Sequence[float]) -> list:
    """Two-point extrapolants assuming ``value(r) = L + c/r``, one per consecutive pair."""
    out = []
    for (r1, v1), (r2, v2) in zip(zip(rs, values), zip(rs[1:], values[1:])):
        out.append((r2 * v2 - r1 * v1) / (r2 - r1))
    return out


@dataclass(frozen=True)
class SummationReport:
    r_list: tuple
    values: tuple
    tails: tuple
    n_max: tuple
    extrapolants: tuple
    limit: float
    expectation: float
    relative_error: float
    conclusive: bool


def summation_formula_report(U0: FiberedPropagator, f: LocalisationFunction, phi: State,
                             r_list: Sequence[float], v_min: float = DEFAULT_V_MIN,
                             tol: float = TAIL_TOL) -> SummationReport:
    """Half-difference sums over ascending ``r_list``, extrapolated and compared with ``t_f``."""
    r_list = tuple(float(r) for r in r_list)
    if len(r_list) < 2 or any(b <= a for a, b in zip(r_list, r_list[1:])):
        raise PreconditionError("r_list must be ascending with at least two entries")
    T = TimeOperator(U0, f, v_min)
    expectation = time_expectation(T, phi)
    results = [half_difference_sum(U0, f, r, phi, tol=tol) for r in r_list]
    values = tuple(res.value for res in results)
    ext = tuple(richardson(r_list, values))
    limit = ext[-1]
    rel = abs(limit - expectation) / max(abs(expectation), 1e-300)
    return SummationReport(r_list, values, tuple(res.tail for res in results),
                           tuple(res.n_max for res in results), ext, limit, expectation, rel,
                           all(res.conclusive for res in results))
