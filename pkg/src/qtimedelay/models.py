"""Free and full propagators on the lattice.

A :class:`FiberedPropagator` is diagonal in momentum space: scalar models
are ``u0(p) = exp(-i w(p))`` for a real dispersion ``w``; the coined walk
carries a unitary 2x2 fiber per momentum. A :class:`Propagator` is an
ordered product of fibered factors and position-space multipliers; this is
how the split-step and phase-defect full propagators are built.

Velocity ``v(p) = grad w(p)`` and its Jacobian are analytic per model
(``2p`` and ``2 delta_jk`` for the Laplacian, ``v`` and 0 for the shift).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import (AllCriticalError, DegenerateModelError, GridMismatchError,
                     PreconditionError)
from .hilbert import (GUARD_FRACTION, POSITION, Grid, State, apply_position_coordinate,
                      check_guard, fft_array, ifft_array)
from .localisation import LocalisationFunction

TWO_PI = 2 * math.pi
DEFAULT_V_MIN = 0.1


# -- free propagators --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FiberedPropagator:
    """Unitary multiplication operator in momentum space.

    Scalar models provide ``dispersion(P) -> w`` with ``u0 = exp(-i w)`` plus
    analytic ``velocity(P) -> (..., d)`` and ``jacobian(P) -> (..., d, d)``.
    Matrix-valued models provide ``fiber_matrix(P) -> (..., c, c)`` instead.
    ``transport`` names the closed form of the transported position
    (``"constant"`` or ``"quadratic"``), used by the Trotter check.
    """

    grid: Grid
    label: str
    components: int = 1
    dispersion: Optional[Callable] = None
    velocity_fn: Optional[Callable] = None
    jacobian_fn: Optional[Callable] = None
    fiber_matrix: Optional[Callable] = None
    fiber_matrix_derivative: Optional[Callable] = None
    transport: Optional[str] = None
    params: dict = field(default_factory=dict)

    @property
    def is_scalar(self) -> bool:
        return self.components == 1

    @cached_property
    def phase(self) -> np.ndarray:
        """Dispersion ``w(p)`` on the grid (scalar models)."""
        self._require_scalar()
        return np.asarray(self.dispersion(self.grid.P), dtype=float)

    @cached_property
    def fiber(self) -> np.ndarray:
        """``u0(p)``: shape ``grid.shape`` (scalar) or ``(c, c) + grid.shape``."""
        if self.is_scalar:
            return np.exp(-1j * self.phase)
        M = self.fiber_matrix(self.grid.P)
        return np.moveaxis(np.moveaxis(M, -1, 0), -1, 0)

    @cached_property
    def velocity(self) -> np.ndarray:
        """Analytic velocity: ``grid.shape + (d,)``, or ``grid.shape + (bands, d)`` for matrices."""
        if self.is_scalar:
            return np.asarray(self.velocity_fn(self.grid.P), dtype=float)
        return _band_velocities_analytic(self, self.grid.P)

    @cached_property
    def jacobian(self) -> np.ndarray:
        self._require_scalar()
        return np.asarray(self.jacobian_fn(self.grid.P), dtype=float)

    @cached_property
    def speed(self) -> np.ndarray:
        """``|v(p)|``; per band for matrix models (``grid.shape + (bands,)``)."""
        return np.sqrt(np.sum(self.velocity ** 2, axis=-1))

    @cached_property
    def _eig(self):
        M = self.fiber_matrix(self.grid.P)
        lam, vec = np.linalg.eig(M)
        # unitary fibers: orthonormalise (eig may return non-orthogonal vectors at degeneracies)
        vec, _ = np.linalg.qr(vec)
        lam = np.einsum("...ji,...jk,...ki->...i", vec.conj(), M, vec)
        return lam, vec

    def quasi_energies(self) -> np.ndarray:
        """Angles ``lambda`` in ``[0, 2 pi)`` with ``u0 = exp(i lambda)``; per band for matrices."""
        if self.is_scalar:
            return np.mod(-self.phase, TWO_PI)
        lam, _ = self._eig
        return np.mod(np.angle(lam), TWO_PI)

    def power_multiplier(self, n: int) -> np.ndarray:
        """Momentum-space multiplier of ``U0^n`` (exact for every integer ``n``)."""
        if self.is_scalar:
            return np.exp(-1j * n * self.phase)
        lam, vec = self._eig
        Mn = np.einsum("...ij,...j,...kj->...ik", vec, lam ** n, vec.conj())
        return np.moveaxis(np.moveaxis(Mn, -1, 0), -1, 0)

    def apply_momentum(self, a_hat: np.ndarray, n: int = 1) -> np.ndarray:
        """``U0^n`` on momentum amplitudes shaped ``(..., c, N, ..., N)``."""
        return apply_fiber(self.power_multiplier(n), a_hat, self.grid)

    def apply_array(self, a: np.ndarray, n: int = 1) -> np.ndarray:
        """``U0^n`` on position amplitudes shaped ``(..., c, N, ..., N)``."""
        if n == 0:
            return a
        return ifft_array(self.apply_momentum(fft_array(a, self.grid), n), self.grid)

    def inverse_step(self, a: np.ndarray) -> np.ndarray:
        return self.apply_array(a, -1)

    def step(self, a: np.ndarray) -> np.ndarray:
        return self.apply_array(a, 1)

    def _require_scalar(self):
        if not self.is_scalar:
            raise PreconditionError(f"{self.label}: operation defined for scalar models only")


def apply_fiber(mult: np.ndarray, a_hat: np.ndarray, grid: Grid) -> np.ndarray:
    """Apply a scalar (``grid.shape``) or matrix (``(c, c) + grid.shape``) multiplier."""
    if mult.ndim == grid.d:
        return a_hat * mult
    c = mult.shape[0]
    flat = a_hat.reshape(a_hat.shape[:-grid.d] + (-1,))
    out = np.einsum("ijx,...jx->...ix", mult.reshape(c, c, -1), flat)
    return out.reshape(a_hat.shape)


def build_free_shift(grid: Grid, v) -> FiberedPropagator:
    """Constant-velocity transport: ``u0(p) = exp(-i p.v)``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (grid.d,):
        raise GridMismatchError(f"velocity must have {grid.d} components")
    if not np.any(v != 0):
        raise DegenerateModelError("zero velocity: every spectral value is critical")
    jac = np.zeros((grid.d, grid.d))
    return FiberedPropagator(
        grid=grid, label="shift",
        dispersion=lambda P: P @ v,
        velocity_fn=lambda P: np.broadcast_to(v, P.shape).copy(),
        jacobian_fn=lambda P: np.broadcast_to(jac, P.shape[:-1] + jac.shape).copy(),
        transport="constant", params={"v": v.tolist()})


def build_free_laplacian(grid: Grid) -> FiberedPropagator:
    """Time-one propagator of ``P^2``: ``u0(p) = exp(-i p^2)``, ``v = 2p``."""
    eye = 2.0 * np.eye(grid.d)
    return FiberedPropagator(
        grid=grid, label="laplacian",
        dispersion=lambda P: np.sum(P * P, axis=-1),
        velocity_fn=lambda P: 2.0 * P,
        jacobian_fn=lambda P: np.broadcast_to(eye, P.shape[:-1] + eye.shape).copy(),
        transport="quadratic")


def build_coined_walk(grid: Grid, coin) -> FiberedPropagator:
    """Two-component walk with fiber ``diag(exp(-ip), exp(ip)) @ coin`` (1D)."""
    coin = np.asarray(coin, dtype=complex)
    if coin.shape != (2, 2):
        raise PreconditionError("coin must be a 2x2 matrix")
    if np.max(np.abs(coin.conj().T @ coin - np.eye(2))) > 1e-12:
        raise PreconditionError("coin is not unitary to 1e-12")
    if grid.d != 1:
        raise PreconditionError("the coined walk is one-dimensional")

    def fiber(P):
        p = P[..., 0]
        S = np.zeros(p.shape + (2, 2), dtype=complex)
        S[..., 0, 0] = np.exp(-1j * p)
        S[..., 1, 1] = np.exp(1j * p)
        return S @ coin

    def dfiber(P):
        p = P[..., 0]
        S = np.zeros(p.shape + (2, 2), dtype=complex)
        S[..., 0, 0] = -1j * np.exp(-1j * p)
        S[..., 1, 1] = 1j * np.exp(1j * p)
        return (S @ coin)[..., np.newaxis]

    return FiberedPropagator(grid=grid, label="coined_walk", components=2,
                             fiber_matrix=fiber, fiber_matrix_derivative=dfiber,
                             params={"coin": coin.tolist()})


def _band_velocities_analytic(U0: FiberedPropagator, P: np.ndarray) -> np.ndarray:
    """Hellmann-Feynman for unitary fibers: ``v_b = Re(i <u_b, M' u_b> / lambda_b)``."""
    M = U0.fiber_matrix(P)
    dM = U0.fiber_matrix_derivative(P)  # (..., c, c, d)
    lam, vec = np.linalg.eig(M)
    vec, _ = np.linalg.qr(vec)
    lam = np.einsum("...ji,...jk,...ki->...i", vec.conj(), M, vec)
    dlam = np.einsum("...ji,...jkl,...ki->...il", vec.conj(), dM, vec)
    return np.real(1j * dlam / lam[..., np.newaxis])


# -- full propagators --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PositionMultiplier:
    """Unit-modulus function of position: ``grid.shape`` or ``(c, c) + grid.shape``."""

    values: np.ndarray

    def apply(self, a: np.ndarray, grid: Grid) -> np.ndarray:
        return apply_fiber(self.values, a, grid)

    def inverse(self) -> "PositionMultiplier":
        v = self.values
        if v.ndim >= 2 and v.shape[0] == v.shape[1] and v.ndim > 2:
            return PositionMultiplier(np.conj(np.swapaxes(v, 0, 1)))
        return PositionMultiplier(np.conj(v))


Factor = Union[FiberedPropagator, PositionMultiplier]


@dataclass(frozen=True, eq=False)
class Propagator:
    """Product of factors; ``factors`` are listed in the order in which they act."""

    grid: Grid
    factors: tuple
    label: str = "propagator"
    free: Optional[FiberedPropagator] = None
    potential: Optional[np.ndarray] = None

    @property
    def components(self) -> int:
        for f in self.factors:
            if isinstance(f, FiberedPropagator):
                return f.components
        return 1

    def step(self, a: np.ndarray) -> np.ndarray:
        for f in self.factors:
            a = f.step(a) if isinstance(f, FiberedPropagator) else f.apply(a, self.grid)
        return a

    def inverse_step(self, a: np.ndarray) -> np.ndarray:
        for f in reversed(self.factors):
            if isinstance(f, FiberedPropagator):
                a = f.inverse_step(a)
            else:
                a = f.inverse().apply(a, self.grid)
        return a

    @cached_property
    def _inverse_factors(self):
        return tuple(f if isinstance(f, FiberedPropagator) else f.inverse()
                     for f in reversed(self.factors))

    def apply_array(self, a: np.ndarray, n: int = 1) -> np.ndarray:
        for _ in range(abs(n)):
            a = self.step(a) if n > 0 else self.inverse_step(a)
        return a


AnyPropagator = Union[FiberedPropagator, Propagator]


def _potential_values(grid: Grid, W) -> np.ndarray:
    vals = W(grid.X) if callable(W) else np.asarray(W, dtype=float)
    vals = np.asarray(vals)
    if vals.shape != grid.shape:
        raise GridMismatchError(f"potential has shape {vals.shape}, grid is {grid.shape}")
    if np.iscomplexobj(vals):
        if np.max(np.abs(vals.imag)) > 0:
            raise PreconditionError("potential must be real-valued")
        vals = vals.real
    return vals.astype(float)


def _check_support(grid: Grid, mask: np.ndarray, what: str, guard_fraction: float):
    inside = np.all(np.abs(grid.X) <= grid.guard_radius(guard_fraction), axis=-1)
    if np.any(mask & ~inside):
        raise PreconditionError(f"{what} support touches the guard band")


def build_full_split_step(U0: FiberedPropagator, W, guard_fraction: float = GUARD_FRACTION) -> Propagator:
    """``exp(-i W(Q)/2) U0 exp(-i W(Q)/2)``; ``W == 0`` returns a propagator acting as ``U0``."""
    grid = U0.grid
    vals = _potential_values(grid, W)
    _check_support(grid, vals != 0, "potential", guard_fraction)
    if not np.any(vals != 0):
        return Propagator(grid, (U0,), label=f"{U0.label}+0", free=U0, potential=vals)
    half = PositionMultiplier(np.exp(-0.5j * vals))
    return Propagator(grid, (half, U0, half), label=f"{U0.label}+split_step", free=U0,
                      potential=vals)


def sites_mask(grid: Grid, sites: Iterable) -> np.ndarray:
    """Boolean mask of lattice sites given as integer offsets from the origin."""
    mask = np.zeros(grid.shape, dtype=bool)
    for s in sites:
        idx = tuple(np.atleast_1d(np.asarray(s, dtype=int)) + grid.N // 2)
        if len(idx) != grid.d or any(not 0 <= i < grid.N for i in idx):
            raise PreconditionError(f"site {s} is outside the grid")
        mask[idx] = True
    return mask


def build_phase_defect(U0: FiberedPropagator, theta: float, sites: Iterable,
                       guard_fraction: float = GUARD_FRACTION) -> Propagator:
    """``exp(-i theta chi_A(Q)) U0`` for a finite site set ``A``."""
    grid = U0.grid
    mask = sites_mask(grid, sites)
    _check_support(grid, mask, "defect", guard_fraction)
    vals = theta * mask.astype(float)
    if theta == 0 or not mask.any():
        return Propagator(grid, (U0,), label=f"{U0.label}+0", free=U0, potential=vals)
    return Propagator(grid, (U0, PositionMultiplier(np.exp(-1j * vals))),
                      label=f"{U0.label}+phase_defect", free=U0, potential=vals)


def evolve(U: AnyPropagator, state: State, n: int, guard: bool = True,
           guard_fraction: float = GUARD_FRACTION) -> State:
    """``U^n state`` (negative ``n`` applies the inverse); result in position space."""
    state = state.position()
    if state.grid != U.grid:
        raise GridMismatchError("state and propagator live on different grids")
    a = U.apply_array(state.amplitudes, n)
    if guard:
        check_guard(a, state.grid, guard_fraction, what=f"U^{n} state")
    return State(state.grid, a, POSITION)


# -- velocity and critical values --------------------------------------------

def velocity_operator(U0: FiberedPropagator, method: str = "analytic", step: float = 1e-3) -> np.ndarray:
    """Velocity table on the grid.

    ``finite_difference`` takes ``(i/2s) log(U0(s e_j) U0(-s e_j)^-1)``
    fiberwise, using ``U0(x) = exp(-ix.Q) U0 exp(ix.Q)``, i.e. the fiber at
    ``p + x``. The logarithm (a phase difference) makes the stencil exact for
    dispersions of degree two or less. For matrix fibers it differentiates the
    eigenphases instead.
    """
    if method == "analytic":
        return U0.velocity
    if method != "finite_difference":
        raise PreconditionError(f"unknown velocity method {method!r}")
    if not step > 0:
        raise PreconditionError("finite-difference step must be positive")
    P = U0.grid.P
    d = U0.grid.d
    if U0.is_scalar:
        out = np.empty(P.shape)
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            ratio = np.exp(-1j * (U0.dispersion(P + e) - U0.dispersion(P - e)))
            out[..., j] = -np.angle(ratio) / (2 * step)
        return out
    lam0, vec0 = U0._eig
    bands = lam0.shape[-1]
    out = np.empty(P.shape[:-1] + (bands, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        ph = []
        for sgn in (1, -1):
            lam, vec = np.linalg.eig(U0.fiber_matrix(P + sgn * e))
            # match bands by eigenvector overlap with the unshifted fiber
            ov = np.abs(np.einsum("...ji,...jk->...ik", vec0.conj(), vec))
            order = np.argmax(ov, axis=-1)
            ph.append(np.take_along_axis(lam, order, axis=-1))
        # omega = -angle(lambda); v = d omega / dp
        dphase = np.angle(ph[0] / ph[1])
        out[..., j] = -dphase / (2 * step)
    return out


@dataclass(frozen=True)
class CriticalSet:
    """Closed arcs ``[lo, hi]`` (angles, ``0 <= lo < 2 pi``, ``hi >= lo``) on the unit circle."""

    arcs: tuple
    v_min: float

    def contains(self, angle: float) -> bool:
        return any(_arc_contains(a, angle) for a in self.arcs)

    def intersects(self, window) -> bool:
        return any(_arcs_overlap(a, window) for a in self.arcs)

    @property
    def empty(self) -> bool:
        return not self.arcs


def _arc_contains(arc, angle) -> bool:
    lo, hi = arc
    t = (angle - lo) % TWO_PI
    return t <= hi - lo + 1e-15


def _arcs_overlap(a, b) -> bool:
    return (_arc_contains(a, b[0]) or _arc_contains(a, b[1 % 2] % TWO_PI)
            or _arc_contains(b, a[0]) or _arc_contains(b, a[1] % TWO_PI))


def window_arc(center: float, half_width: float) -> tuple:
    """Arc ``(center - half_width, center + half_width)`` normalised to ``lo`` in ``[0, 2 pi)``."""
    lo = (center - half_width) % TWO_PI
    return (lo, lo + 2 * half_width)


def _cluster_arcs(values: np.ndarray, gap_tol: float) -> list:
    """Arcs covering sorted angles, merging neighbours closer than ``gap_tol``."""
    vals = np.sort(values.ravel())
    if vals.size == 0:
        return []
    gaps = np.diff(np.concatenate([vals, [vals[0] + TWO_PI]]))
    breaks = np.nonzero(gaps > gap_tol)[0]
    if breaks.size == 0:
        return [(0.0, TWO_PI)]
    arcs = []
    n = vals.size
    for k in range(breaks.size):
        start = (breaks[k - 1] + 1) % n if k > 0 else (breaks[-1] + 1) % n
        lo, hi = vals[start], vals[breaks[k]]
        if hi < lo:
            hi += TWO_PI
        arcs.append((float(lo), float(hi)))
    return arcs


def edge_kink_axes(U0: FiberedPropagator) -> list:
    """Axes along which the velocity of a scalar model jumps across the zone edge.

    A dispersion that is smooth on the momentum torus has ``v(-pi/h)`` equal to
    the limit at ``+pi/h``; e.g. ``u0 = exp(-i p^2)`` does not, and its
    zone-edge momenta behave like critical points.
    """
    if not U0.is_scalar:
        return []
    out = []
    for j in range(U0.grid.d):
        v = np.moveaxis(U0.velocity[..., j], j, 0)
        step = max(float(np.max(np.abs(v[1] - v[0]))), float(np.max(np.abs(v[-1] - v[-2]))))
        if float(np.max(np.abs(v[0] - v[-1]))) > 10.0 * step + 1e-12:
            out.append(j)
    return out


def critical_values(U0: FiberedPropagator, v_min: float = DEFAULT_V_MIN) -> CriticalSet:
    """Arcs covering the quasi-energies of all grid momenta slower than ``v_min``.

    Images of neighbouring grid momenta are at most ``v_min * dp * sqrt(d)``
    apart, so angles closer than that are merged into one arc. Zone-edge
    momenta across which the velocity jumps (see :func:`edge_kink_axes`) are
    added as critical as well.
    """
    if not v_min > 0:
        raise PreconditionError("v_min must be positive")
    speed = U0.speed
    if v_min > np.max(speed):
        raise AllCriticalError(f"v_min={v_min} exceeds the largest grid velocity {np.max(speed):.4g}")
    lam = U0.quasi_energies()
    grid = U0.grid
    root_d = math.sqrt(grid.d)
    arcs = _cluster_arcs(lam[speed < v_min], 1.5 * v_min * grid.dp * root_d + 1e-12)
    kinks = edge_kink_axes(U0)
    if kinks:
        face = np.zeros(grid.shape, dtype=bool)
        for j in kinks:
            idx = [slice(None)] * grid.d
            for k in (0, -1):
                idx[j] = k
                face[tuple(idx)] = True
        arcs += _cluster_arcs(lam[face], 1.5 * float(np.max(speed)) * grid.dp * root_d + 1e-12)
    arcs.sort()
    return CriticalSet(tuple(arcs), v_min)


def window_preimage(U0: FiberedPropagator, window) -> np.ndarray:
    """Boolean mask of grid momenta (per band for matrices) whose quasi-energy lies in ``window``."""
    lam = U0.quasi_energies()
    lo, hi = window
    return ((lam - lo) % TWO_PI) <= (hi - lo)


def critical_set_sound(U0: FiberedPropagator, cs: CriticalSet) -> bool:
    """Every grid momentum with ``|v| < v_min`` maps into a critical arc."""
    lam = U0.quasi_energies()
    slow = lam[U0.speed < cs.v_min]
    return all(cs.contains(float(t)) for t in slow)


def quasi_energy_injective(U0: FiberedPropagator) -> bool:
    """True when ``w(p)`` spans less than one period, so each quasi-energy fixes ``|w|``.

    For the Laplacian this is ``d (pi/h)^2 < 2 pi``; it is what makes the
    scattering on the lattice elastic in ``|p|``.
    """
    U0._require_scalar()
    w = U0.phase
    return float(np.max(w) - np.min(w)) < TWO_PI


# -- transport identities ----------------------------------------------------

def transport_identity_residual(U0: FiberedPropagator, phi: State, n: int) -> float:
    """``max_j ||U0^n Q_j U0^-n phi - (Q_j - n V_j) phi|| / ||phi||``."""
    U0._require_scalar()
    grid = U0.grid
    phi = phi.position()
    nrm = phi.norm()
    psi = evolve(U0, phi, -n)
    phi_hat = fft_array(phi.amplitudes, grid)
    worst = 0.0
    for j in range(grid.d):
        lhs = U0.apply_array(apply_position_coordinate(psi, j).amplitudes, n)
        rhs = (apply_position_coordinate(phi, j).amplitudes
               - n * ifft_array(phi_hat * U0.velocity[..., j], grid))
        res = math.sqrt(float(np.sum(np.abs(lhs - rhs) ** 2)) * grid.dx_volume) / nrm
        worst = max(worst, res)
    return worst


def transported_localisation(U0: FiberedPropagator, f: LocalisationFunction, nu: float,
                             n: int, phi: State) -> State:
    """``f(nu (Q + n V)) phi`` computed without powers of ``U0``.

    Constant velocity: a plain position multiplier ``f(nu (x + n v))``.
    Quadratic dispersion (``V = 2P``): the chirp identity
    ``f(nu (Q + 2nP)) = exp(-iQ^2/4n) f(2 n nu P) exp(iQ^2/4n)``.
    """
    grid = U0.grid
    phi = phi.position()
    X = grid.X
    if n == 0 or U0.transport == "constant":
        shift = n * np.asarray(U0.params.get("v", np.zeros(grid.d))) if n else 0.0
        weight = f(nu * (X + shift))
        return phi.with_amplitudes(phi.amplitudes * weight)
    if U0.transport != "quadratic":
        raise PreconditionError(f"{U0.label}: no closed form for the transported position")
    chirp = np.exp(1j * np.sum(X * X, axis=-1) / (4.0 * n))
    a_hat = fft_array(phi.amplitudes * chirp, grid)
    a_hat = a_hat * f(2.0 * n * nu * grid.P)
    return phi.with_amplitudes(ifft_array(a_hat, grid) * np.conj(chirp))


def trotter_transport_check(U0: FiberedPropagator, f: LocalisationFunction, nu: float,
                            n: int, phi: State) -> float:
    """``||U0^-n f(nu Q) U0^n phi - f(nu (Q + n V)) phi|| / ||phi||``."""
    phi = phi.position()
    grid = U0.grid
    moved = U0.apply_array(phi.amplitudes, n)
    lhs = U0.apply_array(moved * f(nu * grid.X), -n)
    rhs = transported_localisation(U0, f, nu, n, phi).amplitudes
    return math.sqrt(float(np.sum(np.abs(lhs - rhs) ** 2)) * grid.dx_volume) / phi.norm()


def velocity_domain_mass(U0: FiberedPropagator, state: State, v_min: float) -> float:
    """Relative momentum-space mass of ``state`` where ``|v(p)| < v_min``."""
    U0._require_scalar()
    m = state.momentum()
    w = np.sum(np.abs(m.amplitudes) ** 2, axis=0)
    total = np.sum(w)
    return float(np.sum(w[U0.speed < v_min]) / total) if total > 0 else 0.0


def min_speed_on_support(U0: FiberedPropagator, state: State, rel_tol: float = 1e-14) -> float:
    """Smallest ``|v(p)|`` over momenta carrying more than ``rel_tol`` of the peak density."""
    U0._require_scalar()
    m = state.momentum()
    w = np.sum(np.abs(m.amplitudes) ** 2, axis=0)
    support = w > rel_tol * np.max(w)
    return float(np.min(U0.speed[support]))
