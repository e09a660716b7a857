"""Truncated lattice Hilbert space: grids, states and the Fourier transform.

Positions sit at ``x_k = (k - N/2) h`` on every axis and momenta at
``p_m = (m - N/2) dp`` with ``dp = 2 pi / (N h)``. Amplitudes are normalised
so that ``sum |a(x)|^2 h^d`` is the squared norm in position space and
``sum |a(p)|^2 dp^d`` the squared norm in momentum space; the transform
between the two is then unitary::

    a(p) = (2 pi)^(-d/2) sum_x h^d a(x) exp(-i p.x)

The lattice spacing ``h`` plays the role of the continuum length unit: a
state whose momentum support stays well inside ``[-pi/h, pi/h)`` and whose
position support stays away from the box edge behaves like a sampled
continuum wavefunction.

Arrays carry an internal-component axis in front of the spatial axes,
``(c, N, ..., N)``. Low-level helpers accept any number of leading batch
axes so that many probes can be evolved with one FFT call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GridMismatchError, PreconditionError, RepresentationError, TruncationError

POSITION = "position"
MOMENTUM = "momentum"

#: default fraction of the half-box reserved as guard band
GUARD_FRACTION = 0.1
#: relative mass allowed in the guard band before a truncation error
GUARD_TOL = 1e-10


@dataclass(frozen=True)
class Grid:
    """Periodic ``d``-dimensional lattice with ``N`` points of spacing ``h`` per axis."""

    d: int
    N: int
    h: float = 1.0
    periodic: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.d < 1:
            raise PreconditionError(f"dimension must be positive, got {self.d}")
        if self.N < 2 or self.N & (self.N - 1):
            raise PreconditionError(f"N must be a power of two, got {self.N}")
        if not self.h > 0:
            raise PreconditionError(f"spacing must be positive, got {self.h}")
        if not self.periodic:
            raise PreconditionError("only periodic grids are supported")

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def axes(self) -> tuple:
        """Spatial axes of an array shaped ``(..., c, N, ..., N)``."""
        return tuple(range(-self.d, 0))

    @property
    def dp(self) -> float:
        return 2 * math.pi / (self.N * self.h)

    @property
    def dx_volume(self) -> float:
        return self.h ** self.d

    @property
    def dp_volume(self) -> float:
        return self.dp ** self.d

    @property
    def length(self) -> float:
        return self.N * self.h

    @cached_property
    def x(self) -> np.ndarray:
        """1D position coordinates (same on every axis)."""
        return (np.arange(self.N) - self.N // 2) * self.h

    @cached_property
    def p(self) -> np.ndarray:
        """1D momentum coordinates, covering ``[-pi/h, pi/h)``."""
        return (np.arange(self.N) - self.N // 2) * self.dp

    @cached_property
    def X(self) -> np.ndarray:
        """Position points, shape ``grid.shape + (d,)``."""
        return _mesh(self.x, self.d)

    @cached_property
    def P(self) -> np.ndarray:
        """Momentum points, shape ``grid.shape + (d,)``."""
        return _mesh(self.p, self.d)

    def guard_radius(self, guard_fraction: float = GUARD_FRACTION) -> float:
        return (1.0 - guard_fraction) * self.length / 2

    @cached_property
    def _fft_phase(self):
        return (self.h / math.sqrt(2 * math.pi)) ** self.d

    @cached_property
    def _ifft_phase(self):
        return (math.sqrt(2 * math.pi) / self.h) ** self.d


def _mesh(coord, d):
    grids = np.meshgrid(*([coord] * d), indexing="ij")
    out = np.stack(grids, axis=-1)
    out.flags.writeable = False
    return out


# -- raw array transforms ----------------------------------------------------

def fft_array(a: np.ndarray, grid: Grid) -> np.ndarray:
    """Position amplitudes to momentum amplitudes over the trailing ``d`` axes."""
    axes = grid.axes
    out = np.fft.fftn(np.fft.ifftshift(a, axes=axes), axes=axes)
    return np.fft.fftshift(out, axes=axes) * grid._fft_phase


def ifft_array(a: np.ndarray, grid: Grid) -> np.ndarray:
    """Inverse of :func:`fft_array`."""
    axes = grid.axes
    out = np.fft.ifftn(np.fft.ifftshift(a, axes=axes), axes=axes)
    return np.fft.fftshift(out, axes=axes) * grid._ifft_phase


def density(a: np.ndarray, grid: Grid) -> np.ndarray:
    """Position density summed over internal components, including the cell volume."""
    return np.sum(np.abs(a) ** 2, axis=-grid.d - 1) * grid.dx_volume


def guard_mass(a: np.ndarray, grid: Grid, guard_fraction: float = GUARD_FRACTION) -> np.ndarray:
    """Relative mass outside the guard radius (sup-norm box), per leading batch entry."""
    rho = density(a, grid)
    inside = np.all(np.abs(grid.X) <= grid.guard_radius(guard_fraction), axis=-1)
    axes = tuple(range(-grid.d, 0))
    total = np.sum(rho, axis=axes)
    outside = np.sum(np.where(inside, 0.0, rho), axis=axes)
    return outside / np.where(total > 0, total, 1.0)


def check_guard(a: np.ndarray, grid: Grid, guard_fraction: float = GUARD_FRACTION,
                tol: float = GUARD_TOL, what: str = "state") -> None:
    leak = np.max(guard_mass(a, grid, guard_fraction))
    if leak > tol:
        raise TruncationError(f"{what}: relative guard-band mass {leak:.3e} exceeds {tol:.1e}")


# -- states ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class State:
    """Complex amplitudes on a grid, tagged with their representation."""

    grid: Grid
    amplitudes: np.ndarray
    rep: str = POSITION

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex)
        if a.ndim == self.grid.d:
            a = a[np.newaxis]
        if a.shape[1:] != self.grid.shape:
            raise GridMismatchError(f"amplitudes of shape {a.shape} do not fit grid {self.grid.shape}")
        if self.rep not in (POSITION, MOMENTUM):
            raise RepresentationError(f"unknown representation {self.rep!r}")
        if a is self.amplitudes:
            a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "amplitudes", a)

    @property
    def components(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def cell(self) -> float:
        return self.grid.dx_volume if self.rep == POSITION else self.grid.dp_volume

    def norm(self) -> float:
        return math.sqrt(float(np.sum(np.abs(self.amplitudes) ** 2)) * self.cell)

    def normalized(self) -> "State":
        return self.with_amplitudes(self.amplitudes / self.norm())

    def with_amplitudes(self, a: np.ndarray, rep: Optional[str] = None) -> "State":
        return State(self.grid, a, self.rep if rep is None else rep)

    def position(self) -> "State":
        """This state in position representation (transforming if needed)."""
        return self if self.rep == POSITION else to_position(self)

    def momentum(self) -> "State":
        return self if self.rep == MOMENTUM else to_momentum(self)

    def __add__(self, other):
        _same_space(self, other)
        return self.with_amplitudes(self.amplitudes + other.amplitudes)

    def __sub__(self, other):
        _same_space(self, other)
        return self.with_amplitudes(self.amplitudes - other.amplitudes)

    def __mul__(self, c):
        return self.with_amplitudes(self.amplitudes * c)

    __rmul__ = __mul__


def _same_space(a: State, b: State):
    if a.grid != b.grid:
        raise GridMismatchError("states live on different grids")
    if a.rep != b.rep:
        raise RepresentationError(f"representation mismatch: {a.rep} vs {b.rep}")
    if a.components != b.components:
        raise GridMismatchError("states have different internal component counts")


def to_momentum(state: State) -> State:
    if state.rep != POSITION:
        raise RepresentationError("to_momentum expects a position-representation state")
    return State(state.grid, fft_array(state.amplitudes, state.grid), MOMENTUM)


def to_position(state: State) -> State:
    if state.rep != MOMENTUM:
        raise RepresentationError("to_position expects a momentum-representation state")
    return State(state.grid, ifft_array(state.amplitudes, state.grid), POSITION)


def inner(a: State, b: State) -> complex:
    """``<a, b>``, conjugate-linear in ``a``."""
    _same_space(a, b)
    return complex(np.vdot(a.amplitudes, b.amplitudes)) * a.cell


def apply_position_function(g: Callable[[np.ndarray], np.ndarray], r: float, state: State) -> State:
    """Multiply by ``g(x / r)``.

    ``g`` receives points of shape ``(..., d)``. Momentum-representation input
    is transformed to position space first and the result is returned there.
    """
    if not r > 0:
        raise PreconditionError(f"scale must be positive, got {r}")
    state = state.position()
    weight = np.asarray(g(state.grid.X / r), dtype=float)
    return state.with_amplitudes(state.amplitudes * weight)


def apply_position_coordinate(state: State, j: int = 0) -> State:
    """``Q_j`` acting on a state (position representation)."""
    state = state.position()
    return state.with_amplitudes(state.amplitudes * state.grid.X[..., j])


def weighted_norm(state: State, t: float) -> float:
    """``|| <Q>^t phi ||`` with ``<Q> = (1 + Q^2)^(1/2)``."""
    if t < 0:
        raise PreconditionError("weight exponent must be nonnegative")
    state = state.position()
    weight = (1.0 + np.sum(state.grid.X ** 2, axis=-1)) ** t
    return math.sqrt(float(np.sum(weight * np.abs(state.amplitudes) ** 2)) * state.grid.dx_volume)


def delta_state(grid: Grid, site: Optional[Sequence[int]] = None, components: int = 1) -> State:
    """Unit-norm lattice delta at the given site index (the origin by default)."""
    a = np.zeros((components,) + grid.shape, dtype=complex)
    idx = tuple(site) if site is not None else (grid.N // 2,) * grid.d
    a[(0,) + idx] = 1.0 / math.sqrt(grid.dx_volume)
    return State(grid, a)


# -- wavepackets -------------------------------------------------------------

def smooth_bump(s: np.ndarray) -> np.ndarray:
    """``exp(1 - 1/(1 - s^2))`` on ``|s| < 1`` and zero outside (C-infinity, peak 1)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass(frozen=True)
class WavepacketSpec:
    """Compact-momentum wavepacket.

    The momentum profile is a product over axes of a C-infinity bump supported
    exactly on ``[p_lo, p_hi]``, optionally multiplied by a Gaussian of width
    ``sigma_p`` about the window centre, and shifted to ``center`` by the phase
    ``exp(-i p.center)``. The Gaussian envelope buys much faster position-space
    decay than the bare bump.
    """

    center: tuple
    p_lo: tuple
    p_hi: tuple
    sigma_p: Optional[float] = None
    polarization: Optional[tuple] = None

    def __post_init__(self):
        for name in ("center", "p_lo", "p_hi"):
            v = getattr(self, name)
            object.__setattr__(self, name, tuple(float(t) for t in np.atleast_1d(v)))
        if not (len(self.center) == len(self.p_lo) == len(self.p_hi)):
            raise PreconditionError("center and momentum window must have the same dimension")
        if any(lo >= hi for lo, hi in zip(self.p_lo, self.p_hi)):
            raise PreconditionError("momentum window must have p_lo < p_hi on every axis")
        if self.sigma_p is not None and not self.sigma_p > 0:
            raise PreconditionError("sigma_p must be positive")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def p_center(self) -> np.ndarray:
        return 0.5 * (np.array(self.p_lo) + np.array(self.p_hi))


def wavepacket_profile(grid: Grid, spec: WavepacketSpec) -> np.ndarray:
    """Momentum amplitudes (unnormalised, single component) of ``spec`` on ``grid``."""
    if spec.d != grid.d:
        raise GridMismatchError(f"wavepacket is {spec.d}D but grid is {grid.d}D")
    pmax = math.pi / grid.h
    if min(spec.p_lo) <= -pmax or max(spec.p_hi) >= pmax - grid.dp:
        raise PreconditionError("momentum window must lie strictly inside the dual grid")
    P = grid.P
    prof = np.ones(grid.shape)
    for j in range(grid.d):
        c = 0.5 * (spec.p_lo[j] + spec.p_hi[j])
        half = 0.5 * (spec.p_hi[j] - spec.p_lo[j])
        s = (P[..., j] - c) / half
        prof = prof * smooth_bump(s)
        if spec.sigma_p is not None:
            prof = prof * np.exp(-0.5 * ((P[..., j] - c) / spec.sigma_p) ** 2)
    if not np.any(prof > 0):
        raise PreconditionError("momentum window contains no grid momentum")
    phase = np.exp(-1j * (P @ np.asarray(spec.center)))
    return prof * phase


def make_wavepacket(grid: Grid, spec: WavepacketSpec, components: int = 1) -> State:
    """Normalised position-representation state built from ``spec``."""
    prof = wavepacket_profile(grid, spec)
    if components == 1:
        a = prof[np.newaxis]
    else:
        pol = np.asarray(spec.polarization if spec.polarization is not None
                         else (1.0,) + (0.0,) * (components - 1), dtype=complex)
        if pol.shape != (components,):
            raise PreconditionError("polarization length must equal the component count")
        pol = pol / np.linalg.norm(pol)
        a = pol.reshape((components,) + (1,) * grid.d) * prof
    return to_position(State(grid, a, MOMENTUM).normalized())


def window_mass_fraction(state: State, spec: WavepacketSpec) -> float:
    """Fraction of the momentum-space mass inside the spec's window."""
    m = state.momentum()
    P = m.grid.P
    inside = np.ones(m.grid.shape, dtype=bool)
    for j in range(m.grid.d):
        inside &= (P[..., j] >= spec.p_lo[j]) & (P[..., j] <= spec.p_hi[j])
    w = np.sum(np.abs(m.amplitudes) ** 2, axis=0)
    return float(np.sum(w[inside]) / np.sum(w))


def position_moments(state: State) -> tuple:
    """Mean position vector and rms width of the position density."""
    s = state.position()
    rho = density(s.amplitudes, s.grid)
    total = rho.sum()
    X = s.grid.X
    mean = np.array([np.sum(rho * X[..., j]) / total for j in range(s.grid.d)])
    var = sum(np.sum(rho * (X[..., j] - mean[j]) ** 2) / total for j in range(s.grid.d))
    return mean, math.sqrt(max(var, 0.0))
