"""scikit-learn style wrappers.

States are passed as complex position amplitudes: one state of shape
``grid.shape`` (or ``(c,) + grid.shape``), or a batch with a leading
sample axis. ``fit`` only validates and records shapes; the numbers come
out of ``transform`` or the fitted attributes.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .delay import DelayTolerances, TimeDelayReport, convergence_study, sojourn_free
from .errors import GridMismatchError
from .hilbert import Grid, State
from .localisation import make_bump
from .models import FiberedPropagator
from .scattering import ScatteringSystem
from .timeops import TimeOperator, half_difference_sum, time_expectation


def check_amplitudes(X, grid: Grid, components: int = 1) -> np.ndarray:
    """Batch of complex amplitudes with shape ``(n, c) + grid.shape``.

    Accepts a single state (``grid.shape`` or ``(c,) + grid.shape``) or a batch.
    Raises on non-finite entries or a shape that does not match ``grid``.
    """
    a = np.asarray(X, dtype=complex)
    shape = tuple(grid.shape)
    full = (components,) + shape
    if a.shape == shape and components == 1:
        a = a[np.newaxis, np.newaxis]
    elif a.shape == full:
        a = a[np.newaxis]
    elif a.ndim == len(shape) + 1 and a.shape[1:] == shape and components == 1:
        a = a[:, np.newaxis]
    elif a.ndim != len(full) + 1 or a.shape[1:] != full:
        raise GridMismatchError(f"amplitudes of shape {a.shape} do not match grid shape {full}")
    if not np.all(np.isfinite(a)):
        raise ValueError("amplitudes contain NaN or inf")
    return a


class SojournTransformer(TransformerMixin, BaseEstimator):
    """Free sojourn quantities of states at one scale ``r``.

    ``transform`` returns, per state, the columns ``T0_r`` (two-sided free
    sojourn time), the half-difference sum and ``<phi, T_f phi>``.
    """

    def __init__(self, U0: Optional[FiberedPropagator] = None, w: float = 1.0, r: float = 64.0,
                 v_min: float = 0.1):
        self.U0 = U0
        self.w = w
        self.r = r
        self.v_min = v_min

    def fit(self, X, y=None):
        if self.U0 is None:
            raise ValueError("U0 must be set")
        a = check_amplitudes(X, self.U0.grid, self.U0.components)
        self.n_features_in_ = int(np.prod(a.shape[1:]))
        self.f_ = make_bump(self.w)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "f_")
        grid = self.U0.grid
        a = check_amplitudes(X, grid, self.U0.components)
        T = TimeOperator(self.U0, self.f_, self.v_min)
        out = np.empty((a.shape[0], 3))
        for k, amp in enumerate(a):
            phi = State(grid, amp)
            out[k, 0] = sojourn_free(self.U0, self.f_, self.r, phi).require().value
            out[k, 1] = half_difference_sum(self.U0, self.f_, self.r, phi).require().value
            out[k, 2] = time_expectation(T, phi)
        return out


class TimeDelayEstimator(BaseEstimator):
    """Sojourn-time delays of one state over ``r_list`` with the Eisenbud-Wigner check.

    After ``fit(phi)``: ``report_`` (a :class:`TimeDelayReport`),
    ``tau_sym_``, ``tau_nsym_`` (extrapolated limits) and ``ew_`` (direct route).
    """

    def __init__(self, system: Optional[ScatteringSystem] = None, w: float = 1.0,
                 r_list: Sequence[float] = (64.0, 128.0, 256.0), v_min: float = 0.1,
                 fiber_window: Optional[tuple] = None, fiber_kw: Optional[dict] = None,
                 tolerances: Optional[DelayTolerances] = None, threads: int = 1):
        self.system = system
        self.w = w
        self.r_list = r_list
        self.v_min = v_min
        self.fiber_window = fiber_window
        self.fiber_kw = fiber_kw
        self.tolerances = tolerances
        self.threads = threads

    def fit(self, X, y=None):
        if self.system is None:
            raise ValueError("system must be set")
        grid = self.system.grid
        a = check_amplitudes(X, grid, self.system.U0.components)
        if a.shape[0] != 1:
            raise ValueError("fit expects a single state")
        self.n_features_in_ = int(np.prod(a.shape[1:]))
        phi = State(grid, a[0])
        rep: TimeDelayReport = convergence_study(
            self.system, make_bump(self.w), phi, self.r_list, self.v_min, self.fiber_window,
            self.fiber_kw, self.tolerances or DelayTolerances(), self.threads)
        self.report_ = rep
        self.tau_sym_ = rep.tau_sym_limit
        self.tau_nsym_ = rep.tau_nsym_limit
        self.ew_ = rep.ew_direct
        return self

    @property
    def passed_(self) -> bool:
        check_is_fitted(self, "report_")
        return self.report_.passed
