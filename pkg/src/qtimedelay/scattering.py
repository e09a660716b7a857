"""Wave operators, the scattering operator and its fiber decomposition.

Strong limits are computed as finite-horizon Cauchy sequences. For ``W_-``
the approximants are ``U^m J U0^-m phi`` and consecutive ones differ by
``||(U J - J U0) U0^-(m+1) phi||``, which only needs the closed-form free
evolution. The horizon is accepted once eight consecutive increments are
below ``tol_w``, counted from the step at which the free packet is moving
away from the origin (so a packet that has not reached the interaction
region yet cannot fake convergence).

``S phi`` is the forward limit of ``U0^-m J^* U^m W_- phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BranchError, FidelityError, NonConvergenceError, PreconditionError
from .hilbert import (GUARD_FRACTION, MOMENTUM, POSITION, State, check_guard, fft_array,
                      ifft_array, inner, smooth_bump)
from .models import (DEFAULT_V_MIN, TWO_PI, FiberedPropagator, Propagator,
                     quasi_energy_injective)
from .timeops import DOMAIN_TOL, TimeOperator, check_domain, time_expectation

CONSECUTIVE = 8
CHUNK = 64


def _identity(a):
    return a


@dataclass(frozen=True, eq=False)
class ScatteringSystem:
    """Free propagator, full propagator and identification ``J`` (identity by default)."""

    U0: FiberedPropagator
    U: Propagator
    tol_w: float = 1e-9
    n_w: int = 20000
    J: Optional[Callable] = None
    J_adjoint: Optional[Callable] = None
    consecutive: int = CONSECUTIVE
    guard_fraction: float = GUARD_FRACTION

    def __post_init__(self):
        if self.U0.grid != self.U.grid:
            raise PreconditionError("free and full propagators live on different grids")
        if not self.tol_w > 0:
            raise PreconditionError("tol_w must be positive")
        if self.n_w < self.consecutive:
            raise PreconditionError("horizon shorter than the convergence window")
        if (self.J is None) != (self.J_adjoint is None):
            raise PreconditionError("J and its adjoint must be given together")

    @property
    def grid(self):
        return self.U0.grid

    def j(self, a):
        return (self.J or _identity)(a)

    def j_adjoint(self, a):
        return (self.J_adjoint or _identity)(a)


@dataclass(frozen=True, eq=False)
class LimitResult:
    """Converged approximant with the accepted horizon and the increment trace."""

    state: State
    n_star: int
    trace: np.ndarray
    tol: float = math.inf


def _norms(a: np.ndarray, grid) -> np.ndarray:
    axes = tuple(range(-grid.d - 1, 0))
    return np.sqrt(np.sum(np.abs(a) ** 2, axis=axes) * grid.dx_volume)


def _outgoing_step_array(U0: FiberedPropagator, a: np.ndarray, direction: int) -> int:
    grid = U0.grid
    a_hat = fft_array(a, grid)
    axes = tuple(range(-grid.d - 1, 0))
    v2 = np.sum(np.abs(a_hat) ** 2 * np.sum(U0.velocity ** 2, axis=-1), axis=axes)
    d0 = np.zeros_like(v2)
    for j in range(grid.d):
        va = ifft_array(a_hat * U0.velocity[..., j], grid)
        d0 = d0 + np.real(np.sum(np.conj(grid.X[..., j] * a) * va, axis=axes)) * grid.dx_volume / grid.dp_volume
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(v2 > 0, -direction * d0 / v2, 0.0)
    return max(0, int(math.ceil(float(np.max(m)))))


def outgoing_step(U0: FiberedPropagator, phi: State, direction: int) -> int:
    """First ``m >= 0`` at which ``U0^(direction m) phi`` moves away from the origin.

    Uses ``<D>(n) = <D>(0) + n <V^2>`` for the dilation generator
    ``D = (Q.V + V.Q)/2`` along the free evolution.
    """
    U0._require_scalar()
    return _outgoing_step_array(U0, phi.position().amplitudes, direction)


def _accept(trace: np.ndarray, tol: float, start: int, k: int) -> Optional[int]:
    below = trace < tol
    run = 0
    for m in range(start, trace.size):
        run = run + 1 if below[m] else 0
        if run == k:
            return m - k + 1
    return None


def _wave_limit(sys: ScatteringSystem, a: np.ndarray, s: int, tol: float):
    """Batched ``lim U^(-s m) J U0^(s m) a``; increments are maxima over the batch."""
    grid = sys.grid
    name = "W-" if s < 0 else "W+"
    a_hat = fft_array(a, grid)
    start = _outgoing_step_array(sys.U0, a, s)
    nd = grid.d + 1
    trace = []
    n_star = None
    m0 = 0
    while n_star is None:
        if m0 >= sys.n_w:
            raise NonConvergenceError(f"{name} did not converge within {sys.n_w} steps",
                                      trace=np.array(trace))
        ms = np.arange(m0, min(m0 + CHUNK, sys.n_w))
        # chi_m = U0^-(m+1) a for W_-, U0^m a for W_+
        powers = s * (ms + 1) if s < 0 else s * ms
        phases = np.exp(-1j * powers.reshape((-1,) + (1,) * grid.d) * sys.U0.phase)
        phases = phases.reshape((-1,) + (1,) * (a.ndim - grid.d) + grid.shape)
        chi = ifft_array(a_hat[np.newaxis] * phases, grid)
        check_guard(chi, grid, sys.guard_fraction, what=f"free evolution for {name}")
        diff = sys.U.step(sys.j(chi)) - sys.j(sys.U0.step(chi))
        norms = _norms(diff, grid).reshape(ms.size, -1)
        trace.extend(np.max(norms, axis=1).tolist())
        n_star = _accept(np.array(trace), tol, start, sys.consecutive)
        m0 = ms[-1] + 1
    out = sys.j(sys.U0.apply_array(a, s * n_star))
    for _ in range(n_star):
        out = sys.U.inverse_step(out) if s > 0 else sys.U.step(out)
    check_guard(out, grid, sys.guard_fraction, what=f"{name} phi")
    return out, int(n_star), np.array(trace)


def wave_operator_apply(sys: ScatteringSystem, phi: State, direction: str = "-") -> LimitResult:
    """``W_- phi`` (``direction="-"``) or ``W_+ phi`` (``"+"``) with its increment trace."""
    if direction not in ("-", "+"):
        raise PreconditionError("direction must be '-' or '+'")
    s = -1 if direction == "-" else 1
    a, n_star, trace = _wave_limit(sys, phi.position().amplitudes, s, sys.tol_w)
    return LimitResult(State(sys.grid, a), n_star, trace, sys.tol_w)


#: ``W_- phi`` feeding ``S`` is converged this much tighter than ``tol_w``; any
#: residual bound-state component would otherwise put a floor under the S increments
S_INNER_FACTOR = 1e-2


def _scatter_limit(sys: ScatteringSystem, a: np.ndarray, psi: np.ndarray):
    """Batched forward limit ``U0^-m J^* U^m psi`` for incoming free states ``a``."""
    grid = sys.grid
    start = _outgoing_step_array(sys.U0, a, 1)
    eta = psi
    trace = []
    traj = [eta]
    n_star = None
    m = 0
    while n_star is None:
        if m >= sys.n_w:
            raise NonConvergenceError(f"S did not converge within {sys.n_w} steps",
                                      trace=np.array(trace))
        nxt = sys.U.step(eta)
        diff = sys.j_adjoint(nxt) - sys.U0.step(sys.j_adjoint(eta))
        trace.append(float(np.max(_norms(diff, grid))))
        eta = nxt
        m += 1
        if m % CHUNK == 0:
            check_guard(eta, grid, sys.guard_fraction, what="U^m W_- phi")
        n_star = _accept(np.array(trace), sys.tol_w, start, sys.consecutive)
        traj.append(eta)
        if len(traj) > sys.consecutive + 2:
            traj.pop(0)
    check_guard(eta, grid, sys.guard_fraction, what="U^m W_- phi")
    # the approximant with index n_star is still in the rolling buffer
    back = m - n_star
    out = sys.j_adjoint(traj[len(traj) - 1 - back])
    out = sys.U0.apply_array(out, -n_star)
    check_guard(out, grid, sys.guard_fraction, what="S phi")
    return out, int(n_star), np.array(trace)


def scattering_apply(sys: ScatteringSystem, phi: State,
                     w_minus: Optional[LimitResult] = None) -> LimitResult:
    """``S phi`` as the forward limit of ``U0^-m J^* U^m W_- phi``.

    ``W_- phi`` is needed at tolerance ``S_INNER_FACTOR * tol_w``; a supplied
    ``w_minus`` converged more loosely than that is recomputed.
    """
    phi = phi.position()
    if w_minus is None or w_minus.tol > S_INNER_FACTOR * sys.tol_w:
        psi, _, _ = _wave_limit(sys, phi.amplitudes, -1, S_INNER_FACTOR * sys.tol_w)
    else:
        psi = w_minus.state.amplitudes
    out, n_star, trace = _scatter_limit(sys, phi.amplitudes, psi)
    return LimitResult(State(sys.grid, out), n_star, trace, sys.tol_w)


def scattering_apply_batch(sys: ScatteringSystem, a: np.ndarray) -> np.ndarray:
    """``S`` on a batch of position amplitudes ``(B, c, N, ..., N)`` evolved together."""
    psi, _, _ = _wave_limit(sys, a, -1, S_INNER_FACTOR * sys.tol_w)
    out, _, _ = _scatter_limit(sys, a, psi)
    return out


# -- invariants --------------------------------------------------------------

def _rel(a: np.ndarray, b: np.ndarray, grid, scale: float) -> float:
    return float(_norms(a - b, grid)) / scale


def isometry_defect(phi: State, image: State) -> float:
    return abs(image.norm() - phi.norm())


def intertwining_residual(sys: ScatteringSystem, phi: State, direction: str = "-") -> float:
    """``||U W phi - W U0 phi||``."""
    w = wave_operator_apply(sys, phi, direction).state.amplitudes
    wu = wave_operator_apply(sys, phi.with_amplitudes(sys.U0.step(phi.position().amplitudes)),
                             direction).state.amplitudes
    return float(_norms(sys.U.step(w) - wu, sys.grid))


def commutation_residual(sys: ScatteringSystem, phi: State, s_phi: Optional[State] = None) -> float:
    """``||S U0 phi - U0 S phi||``."""
    phi = phi.position()
    if s_phi is None:
        s_phi = scattering_apply(sys, phi).state
    su = scattering_apply(sys, phi.with_amplitudes(sys.U0.step(phi.amplitudes))).state
    return float(_norms(su.amplitudes - sys.U0.step(s_phi.amplitudes), sys.grid))


def elastic_commutation_residual(sys: ScatteringSystem, phi: State, g: Callable,
                                 s_phi: Optional[State] = None) -> float:
    """``||g(V^2) S phi - S g(V^2) phi||`` for a real function ``g``."""
    grid = sys.grid
    phi = phi.position()
    table = g(np.sum(sys.U0.velocity ** 2, axis=-1))
    if s_phi is None:
        s_phi = scattering_apply(sys, phi).state
    lhs = ifft_array(fft_array(s_phi.amplitudes, grid) * table, grid)
    gphi = phi.with_amplitudes(ifft_array(fft_array(phi.amplitudes, grid) * table, grid))
    rhs = scattering_apply(sys, gphi).state.amplitudes
    return float(_norms(lhs - rhs, grid))


@dataclass(frozen=True)
class L1Report:
    """Entries ``||(L_n W_- - 1) U0^n phi||`` (past) and ``||(L_n W_+ - 1) U0^n S phi||`` (future)."""

    past: np.ndarray
    future: np.ndarray
    past_partial: np.ndarray
    future_partial: np.ndarray
    past_ratio: float
    future_ratio: float
    summable: bool


def _geometric_ratio(x: np.ndarray, floor: float) -> float:
    """Least-squares decay ratio of the entries above ``floor`` in the second half of ``x``."""
    tail = x[x.size // 2:]
    tail = tail[tail > floor]
    if tail.size < 3:
        return 0.0
    k = np.arange(tail.size)
    slope = np.polyfit(k, np.log(tail), 1)[0]
    return float(np.exp(slope))


def l1_condition_diagnostic(sys: ScatteringSystem, phi: State, horizon: int,
                            w_minus: Optional[LimitResult] = None,
                            s_phi: Optional[State] = None, floor: Optional[float] = None) -> L1Report:
    """Decay of the distance between full and asymptotic free trajectories.

    Uses ``W U0^n = U^n W``: the past entries are ``||U^n W_- phi - U0^n phi||``
    for ``n = 0, -1, ..., -horizon`` and the future ones
    ``||U^n W_- phi - U0^n S phi||`` for ``n = 0, ..., horizon`` (``L_n = 1``).
    Entries that stop decaying above ``floor`` are flagged as non-summable.
    The default floor, ``10 tol_w``, is where the accuracy of ``W_- phi`` and
    ``S phi`` themselves takes over.
    """
    grid = sys.grid
    if floor is None:
        floor = 10 * sys.tol_w
    phi = phi.position()
    if w_minus is None:
        w_minus = wave_operator_apply(sys, phi, "-")
    if s_phi is None:
        s_phi = scattering_apply(sys, phi, w_minus).state
    psi = w_minus.state.amplitudes
    past, future = [], []
    a, b = psi, psi
    for n in range(horizon + 1):
        past.append(float(_norms(a - sys.U0.apply_array(phi.amplitudes, -n), grid)))
        future.append(float(_norms(b - sys.U0.apply_array(s_phi.amplitudes, n), grid)))
        a = sys.U.inverse_step(a)
        b = sys.U.step(b)
    past, future = np.array(past), np.array(future)
    pr, fr = _geometric_ratio(past, floor), _geometric_ratio(future, floor)
    settled = past[-1] <= max(floor, 1e-3 * past.max()) and future[-1] <= max(floor, 1e-3 * future.max())
    return L1Report(past, future, np.cumsum(past), np.cumsum(future), pr, fr,
                    bool(pr < 1 and fr < 1 and settled))


# -- fiber decomposition -----------------------------------------------------

@dataclass(frozen=True)
class SMatrixTable:
    """Per-shell S-matrix blocks on a momentum window.

    For even dispersions ``blocks[k]`` is 2x2 and maps incoming amplitudes at
    ``(p_k, -p_k)`` to outgoing ones, with columns ``(t_+, r_+)`` and
    ``(r_-, t_-)``. Otherwise it is the 1x1 multiplier at ``p_k``.
    """

    momenta: np.ndarray
    indices: np.ndarray
    energies: np.ndarray
    blocks: np.ndarray
    unitarity: np.ndarray
    delta: int


def _probe(grid, center: float, lo: float, hi: float, sigma_p: float) -> State:
    """Gaussian probe about ``center`` with its momentum window cut to ``[lo, hi]``."""
    p = grid.p
    s = (p - 0.5 * (lo + hi)) / (0.5 * (hi - lo))
    prof = smooth_bump(s) * np.exp(-0.5 * ((p - center) / sigma_p) ** 2)
    return State(grid, prof[np.newaxis].astype(complex), MOMENTUM).normalized().position()


def even_dispersion(U0: FiberedPropagator, atol: float = 1e-12) -> bool:
    """True when ``w(-p) = w(p)`` mod ``2 pi`` on the grid, so shells pair ``p`` with ``-p``."""
    U0._require_scalar()
    w = U0.phase
    if U0.grid.d != 1:
        return False
    mid = U0.grid.N // 2
    k = np.arange(1, U0.grid.N)
    diff = np.angle(np.exp(1j * (w[k] - w[2 * mid - k])))
    return bool(np.max(np.abs(diff)) < atol)


def fiber_smatrix(sys: ScatteringSystem, p_window, delta: int = 4, stride: int = 16,
                  sigma_p: float = 0.02, half_width: Optional[float] = None,
                  tol_S: float = 1e-6, v_min: float = DEFAULT_V_MIN,
                  p_floor: Optional[float] = None) -> SMatrixTable:
    """Extract the fiber S-matrix on ``p_lo <= p <= p_hi`` of a 1D scalar model.

    ``S`` acts on each energy shell as multiplication, so each block entry is a
    ratio of the momentum amplitudes of ``S chi`` and ``chi`` for probes ``chi``.
    Even dispersions give 2x2 blocks over ``(p, -p)`` and need ``0 < p_lo``;
    otherwise every shell is a single momentum and the blocks are 1x1.
    Probes are centred every ``stride`` bins and every table bin is read from
    the nearest probe. They are Gaussian-enveloped (``sigma_p``, cut off at
    ``half_width``) so that they stay well localised in position. In the paired
    case their windows are also clipped at ``|p| >= p_floor`` (default 0, so
    that probes stay one-sided). Clipping close to the Gaussian peak costs
    position-space decay, so the envelope is usually the better control.
    """
    U0 = sys.U0
    grid = sys.grid
    U0._require_scalar()
    if grid.d != 1:
        raise PreconditionError("fiber extraction is implemented for 1D models")
    lo, hi = p_window
    paired = even_dispersion(U0)
    if not lo < hi or (paired and lo <= 0):
        raise PreconditionError("momentum window must be non-empty (and positive for even dispersions)")
    if not quasi_energy_injective(U0):
        raise BranchError("dispersion wraps: several momentum shells share a quasi-energy")
    p = grid.p
    pmax = math.pi / grid.h
    idx = np.nonzero((p >= lo) & (p <= hi))[0]
    if idx.size < 2 * delta + 1:
        raise PreconditionError("window narrower than the finite-difference stencil")
    if np.min(U0.speed[idx]) < v_min:
        raise PreconditionError("window reaches the velocity floor")
    if half_width is None:
        half_width = 6.0 * sigma_p
    if p_floor is None:
        p_floor = 0.0
    edge = pmax - grid.dp
    if p[idx[0]] - half_width <= -edge or p[idx[-1]] + half_width >= edge:
        raise PreconditionError("probes would reach the edge of the dual grid")
    centers_idx = list(range(idx[0], idx[-1] + 1, stride))
    if centers_idx[-1] != idx[-1]:
        centers_idx.append(idx[-1])
    mid = grid.N // 2
    nearest = {k: min(centers_idx, key=lambda c: abs(c - k)) for k in idx}
    signs = (1, -1) if paired else (1,)
    cols = {}
    for c in centers_idx:
        pc = p[c]
        a, b = pc - half_width, pc + half_width
        if paired:
            a = max(a, p_floor)
        # the two probes at +p and -p travel at the same speed, so they share a horizon
        probes = np.stack([_probe(grid, sign * pc, *sorted((sign * a, sign * b)), sigma_p).amplitudes
                           for sign in signs])
        images = scattering_apply_batch(sys, probes)
        for sign, chi, s_chi in zip(signs, probes, images):
            cols[(c, sign)] = (fft_array(chi, grid)[0], fft_array(s_chi, grid)[0])
    m = len(signs)
    blocks = np.empty((idx.size, m, m), dtype=complex)
    for i, k in enumerate(idx):
        shell = (k, 2 * mid - k)[:m]
        for col, sign in enumerate(signs):
            chi_hat, s_hat = cols[(nearest[k], sign)]
            for row, kk in enumerate(shell):
                blocks[i, row, col] = s_hat[kk] / chi_hat[shell[col]]
    eye = np.eye(m)
    unit = np.array([np.max(np.abs(B.conj().T @ B - eye)) for B in blocks])
    if np.max(unit) > tol_S:
        raise FidelityError(f"extracted block not unitary: defect {np.max(unit):.3e} > {tol_S:.1e}")
    energies = np.unwrap(U0.phase[idx])
    return SMatrixTable(p[idx], idx, energies, blocks, unit, int(delta))


def eigen_delays(table: SMatrixTable, delta: Optional[int] = None) -> tuple:
    """Hermitian ``-i B^* dB/dE`` on interior bins (centred difference of ``delta`` bins)."""
    d = table.delta if delta is None else delta
    B = table.blocks
    E = table.energies
    k = np.arange(d, B.shape[0] - d)
    dB = (B[k + d] - B[k - d]) / (E[k + d] - E[k - d])[:, None, None]
    M = -1j * np.einsum("kji,kjl->kil", B[k].conj(), dB)
    M = 0.5 * (M + np.conj(np.swapaxes(M, 1, 2)))
    return table.indices[k], M


def ew_expectation_fiber(sys: ScatteringSystem, table: SMatrixTable, phi: State,
                         delta: Optional[int] = None, support_tol: float = 1e-20) -> float:
    """``<phi, -i S^* dS/dE phi>`` as a momentum integral over the fiber blocks."""
    grid = sys.grid
    idx, M = eigen_delays(table, delta)
    a_hat = fft_array(phi.position().amplitudes, grid)[0]
    dens = np.abs(a_hat) ** 2
    mid = grid.N // 2
    covered = np.zeros(grid.N, dtype=bool)
    covered[idx] = True
    if M.shape[1] == 2:
        covered[2 * mid - idx] = True
    outside = float(np.sum(dens[~covered])) / float(np.sum(dens))
    if outside > support_tol:
        raise PreconditionError(f"state has relative mass {outside:.2e} outside the table window")
    vec = np.stack([a_hat[idx], a_hat[2 * mid - idx]], axis=-1)[:, :M.shape[1]]
    val = np.einsum("ki,kij,kj->", vec.conj(), M, vec) * grid.dp
    return float(val.real)


@dataclass(frozen=True)
class FiberEW:
    value: float
    halved: float
    relative_change: float


def ew_expectation_fiber_checked(sys: ScatteringSystem, table: SMatrixTable, phi: State,
                                 rel_tol: float = 1e-2, support_tol: float = 1e-20,
                                 abs_tol: float = 0.0) -> FiberEW:
    """Fiber EW value at step ``delta`` and ``delta/2``.

    Raises unless the two differ by at most ``max(rel_tol |value|, abs_tol)``;
    ``abs_tol`` matters only for values near zero.
    """
    if table.delta < 2:
        raise PreconditionError("finite-difference step too small to halve")
    full = ew_expectation_fiber(sys, table, phi, table.delta, support_tol)
    half = ew_expectation_fiber(sys, table, phi, table.delta // 2, support_tol)
    change = abs(full - half)
    rel = change / max(abs(full), 1e-300)
    if change > max(rel_tol * abs(full), abs_tol):
        raise FidelityError(f"step halving changes the fiber delay by {change:.3e} ({rel:.2%})")
    return FiberEW(full, half, rel)


def ew_expectation_direct(sys: ScatteringSystem, T: TimeOperator, phi: State,
                          s_phi: Optional[State] = None, domain_tol: float = 1e-12) -> float:
    """``<phi, S^*[T_f, S] phi> = t_f(S phi) - t_f(phi)``."""
    if s_phi is None:
        s_phi = scattering_apply(sys, phi).state
    relaxed = TimeOperator(T.U0, T.f, T.v_min, domain_tol)
    return time_expectation(relaxed, s_phi) - time_expectation(T, phi)
