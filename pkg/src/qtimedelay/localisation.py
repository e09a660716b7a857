"""Localisation functions and their dilation averages.

A localisation function equals one on the closed unit ball, vanishes outside
the ball of radius ``1 + w`` and interpolates with a C-infinity monotone
step in between. Its renormalised dilation average

    R_f(x) = int_0^inf dmu/mu (f(mu x) - chi_[0,1](mu))

has the closed-form gradient ``-x / x^2`` for radial ``f``; that gradient,
evaluated on the velocity, is what the time operator consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import DomainError, PreconditionError

QUAD_EPSABS = 1e-11


def _psi(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _dpsi(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def smooth_step(s):
    """C-infinity step: 1 for ``s <= 0``, 0 for ``s >= 1``; ``g(s) + g(1 - s) = 1``."""
    s = np.asarray(s, dtype=float)
    a, b = _psi(1.0 - s), _psi(s)
    return a / (a + b)


def smooth_step_derivative(s):
    s = np.asarray(s, dtype=float)
    a, b = _psi(1.0 - s), _psi(s)
    da, db = -_dpsi(1.0 - s), _dpsi(s)
    den = a + b
    return (da * b - a * db) / den ** 2


@dataclass(frozen=True)
class LocalisationFunction:
    """Even bump with plateau radius 1 and transition width ``w``.

    Called on points of shape ``(..., d)``. ``profile`` is the radial profile
    ``f_0`` with ``f(x) = f_0(|x|)``; a non-radial family may pass its own
    ``func`` (and ``grad``), in which case ``radial`` must be False.
    """

    w: float = 1.0
    radial: bool = True
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not self.w > 0:
            raise PreconditionError(f"transition width must be positive, got {self.w}")
        if self.radial and self.func is not None:
            raise PreconditionError("a custom func requires radial=False")
        if not self.radial and self.func is None:
            raise PreconditionError("non-radial localisation needs an explicit func")

    @property
    def support_radius(self) -> float:
        return 1.0 + self.w

    def profile(self, t):
        """Radial profile ``f_0(t)`` for ``t >= 0``."""
        return smooth_step((np.asarray(t, dtype=float) - 1.0) / self.w)

    def profile_derivative(self, t):
        return smooth_step_derivative((np.asarray(t, dtype=float) - 1.0) / self.w) / self.w

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.func is not None:
            return self.func(x)
        return self.profile(np.sqrt(np.sum(x * x, axis=-1)))

    def gradient(self, x):
        """``(grad f)(x)``, shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            return self.grad(x)
        if not self.radial:
            raise PreconditionError("non-radial localisation without an explicit gradient")
        t = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(t > 0, x / t, 0.0)
        return self.profile_derivative(t) * unit


def make_bump(w: float = 1.0) -> LocalisationFunction:
    """Radial C-infinity bump: 1 on ``|x| <= 1``, 0 on ``|x| >= 1 + w``."""
    return LocalisationFunction(w=w)


def _as_point(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    norm = float(np.sqrt(np.sum(x * x)))
    if norm == 0.0:
        raise DomainError("the averaged localisation is singular at x = 0")
    return x, norm


def averaged_localisation(f: LocalisationFunction, x) -> float:
    """``R_f(x)`` by adaptive quadrature in ``u = log mu`` (absolute error ~1e-11)."""
    x, norm = _as_point(x)
    u_plateau = -math.log(norm)
    u_support = math.log(f.support_radius / norm)
    lo, hi = min(0.0, u_plateau) - 1.0, max(0.0, u_support) + 1.0

    def integrand(u):
        mu = math.exp(u)
        return float(f(mu * x)) - (1.0 if u <= 0 else 0.0)

    points = sorted({0.0, u_plateau, u_support})
    val, _ = integrate.quad(integrand, lo, hi, points=points, epsabs=QUAD_EPSABS,
                            epsrel=0.0, limit=400)
    return val


def grad_averaged_localisation(f: LocalisationFunction, x, quadrature: bool = False) -> np.ndarray:
    """``(grad R_f)(x)``.

    Radial ``f`` gives ``-x / x^2`` exactly; otherwise (or with
    ``quadrature=True``) each component is ``int_0^inf dmu (d_j f)(mu x)``.
    """
    x, norm = _as_point(x)
    if f.radial and not quadrature:
        return -x / norm ** 2
    a, b = 1.0 / norm, f.support_radius / norm
    out = np.empty_like(x)
    for j in range(x.size):
        val, _ = integrate.quad(lambda mu: float(f.gradient(mu * x)[j]), a, b,
                                epsabs=QUAD_EPSABS, epsrel=0.0, limit=400)
        out[j] = val
    return out


def lattice_sum_F(f: LocalisationFunction, nu: float, x) -> float:
    """``sum_n f(nu n x)``; finitely many nonzero terms since ``f`` has compact support."""
    if not nu > 0:
        raise PreconditionError("nu must be positive")
    x, norm = _as_point(x)
    nmax = int(math.floor(f.support_radius / (nu * norm))) + 1
    n = np.arange(-nmax, nmax + 1)
    pts = nu * n[:, None] * x[None, :]
    return float(np.sum(f(pts)))
