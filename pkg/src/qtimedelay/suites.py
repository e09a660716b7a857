"""Runnable checks driven by an :class:`~qtimedelay.config.ExperimentConfig`.

Each suite returns a :class:`SuiteResult`: flat rows for the CSV table, a
nested ``details`` dict for the JSON report and a status
(``pass``/``fail``/``inconclusive``/``skipped``).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig
from .delay import DelayTolerances, convergence_study
from .errors import InconclusiveError, NonConvergenceError, TruncationError
from .hilbert import State, WavepacketSpec, make_wavepacket
from .models import (FiberedPropagator, build_full_split_step, critical_values,
                     transport_identity_residual, window_arc, window_preimage)
from .scattering import (ScatteringSystem, commutation_residual, isometry_defect,
                         scattering_apply, wave_operator_apply)
from .timeops import (ConjugateOperator, TimeOperator, auto_n_max, canonical_commutation_residual,
                      mourre_bound, smooth_sum, summation_formula_report, window_probes)

#: (identifier, group, description, what it verifies); order is the listing order
CATALOG = (
    ("transport_identity", "identities", "U0^n Q U0^-n phi - (Q - nV) phi on random packets",
     "transport of the position operator along the free evolution"),
    ("canonical_commutation", "identities", "T_f U0^n phi - (U0^n T_f - n U0^n) phi on random packets",
     "canonical commutation of the time operator with the free evolution"),
    ("summation_formula", "summation", "Richardson-extrapolated half-difference sums against <phi, T_f phi>",
     "summation formula for the time operator"),
    ("mourre_bound", "mourre", "numeric commutator expectation against the analytic multiplier minimum",
     "Mourre estimate for the conjugate operator"),
    ("smooth_sum", "smoothness", "sum of ||f(Q/r)^(1/2) U0^n phi||^2 under n_max doubling",
     "local U0-smoothness of the localisation away from critical values"),
    ("scattering_sanity", "delay", "isometry of W-, W+, [S, U0] = 0 and S = 1 without a perturbation",
     "existence and unitarity of the scattering operator"),
    ("time_delay", "delay", "symmetrised and plain sojourn-time delays against the Eisenbud-Wigner value",
     "delay formulas for symmetrised and non-symmetrised sojourn times"),
)

GROUPS = ("identities", "summation", "mourre", "smoothness", "delay")


def catalog_lines() -> list:
    return [f"{ident} [{group}]: {desc} -> {anchor}" for ident, group, desc, anchor in CATALOG]


@dataclass
class SuiteResult:
    name: str
    status: str
    rows: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def add(self, model: str, r, quantity: str, value, tail=None, verdict=None):
        self.rows.append((self.name, model, r, quantity, value, tail, verdict))


def _verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


# -- random test data --------------------------------------------------------

def random_packets(U0: FiberedPropagator, count: int, rng: np.random.Generator,
                   v_min: float, max_center: float = 20.0, components: int = 1) -> list:
    """Random compact-momentum packets whose window avoids ``|v| < 2 v_min``.

    Windows of even dispersions are kept on one side of ``p = 0``.
    """
    grid = U0.grid
    pmax = math.pi / grid.h
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 1000 * count:
            raise InconclusiveError("could not draw admissible random packets")
        width = rng.uniform(0.1, 0.4) * pmax
        lo = rng.uniform(-0.8 * pmax, 0.8 * pmax - width, size=grid.d)
        hi = lo + width
        inside = np.all((grid.P >= lo) & (grid.P <= hi), axis=-1)
        if not inside.any() or np.min(U0.speed[inside]) < 2 * v_min:
            continue
        spec = WavepacketSpec(tuple(rng.uniform(-max_center, max_center, size=grid.d)),
                              tuple(lo), tuple(hi), sigma_p=width / 12)
        out.append(make_wavepacket(grid, spec, components))
    return out


def random_windows(U0: FiberedPropagator, count: int, rng: np.random.Generator,
                   v_min: float) -> list:
    """Quasi-energy arcs that miss the critical set and contain grid momenta."""
    cs = critical_values(U0, v_min)
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 1000 * count:
            raise InconclusiveError("could not find admissible quasi-energy windows")
        win = window_arc(rng.uniform(0, 2 * math.pi), rng.uniform(0.05, 0.3))
        if cs.intersects(win) or window_preimage(U0, win).sum() < 8:
            continue
        out.append(win)
    return out


def _map(fn: Callable, items, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# -- suites ------------------------------------------------------------------

def run_identities(cfg: ExperimentConfig, U0, rng, threads: int = 1) -> SuiteResult:
    res = SuiteResult("identities", "pass")
    model = cfg.model.kind
    if U0.components != 1:
        return SuiteResult("identities", "skipped", details={"reason": "scalar models only"})
    study, tol = cfg.study, cfg.tolerances
    f = cfg.build_localisation()
    T = TimeOperator(U0, f, study.v_min)
    packets = random_packets(U0, study.n_packets, rng, study.v_min)
    powers = [n for n in range(-study.max_power, study.max_power + 1) if n != 0]

    def job(phi):
        tr = max(transport_identity_residual(U0, phi, n) for n in powers)
        cc = max(canonical_commutation_residual(T, U0, phi, n) for n in powers)
        return tr, cc

    vals = _map(job, packets, threads)
    tr = max(v[0] for v in vals)
    cc = max(v[1] for v in vals)
    ok_tr, ok_cc = tr <= tol.transport, cc <= tol.canonical
    res.add(model, "", "transport_residual_max", tr, None, _verdict(ok_tr))
    res.add(model, "", "canonical_residual_max", cc, None, _verdict(ok_cc))
    res.details = {"packets": len(packets), "max_power": study.max_power,
                   "transport_residuals": [v[0] for v in vals],
                   "canonical_residuals": [v[1] for v in vals],
                   "verdicts": {"transport_identity": ok_tr, "canonical_commutation": ok_cc}}
    res.status = _verdict(ok_tr and ok_cc)
    return res


def run_summation(cfg: ExperimentConfig, U0, phi: State) -> SuiteResult:
    res = SuiteResult("summation", "pass")
    model = cfg.model.kind
    if U0.components != 1:
        return SuiteResult("summation", "skipped", details={"reason": "scalar models only"})
    f = cfg.build_localisation()
    rep = summation_formula_report(U0, f, phi, cfg.study.r_list, cfg.study.v_min)
    tol = cfg.tolerances
    # the absolute floor covers packets whose time expectation vanishes
    ok = abs(rep.limit - rep.expectation) <= max(tol.summation_rel * abs(rep.expectation), tol.summation_abs)
    for r, v, t in zip(rep.r_list, rep.values, rep.tails):
        res.add(model, r, "half_difference_sum", v, t, None)
    for r, e in zip(rep.r_list[1:], rep.extrapolants):
        res.add(model, r, "extrapolant", e, None, None)
    res.add(model, "", "limit", rep.limit, max(rep.tails), None)
    res.add(model, "", "time_expectation", rep.expectation, None, None)
    res.add(model, "", "relative_error", rep.relative_error, None, _verdict(ok))
    res.details = {"r_list": list(rep.r_list), "values": list(rep.values), "tails": list(rep.tails),
                   "n_max": list(rep.n_max), "extrapolants": list(rep.extrapolants),
                   "limit": rep.limit, "expectation": rep.expectation,
                   "relative_error": rep.relative_error, "conclusive": rep.conclusive,
                   "verdicts": {"summation_formula": ok}}
    res.status = "inconclusive" if not rep.conclusive else _verdict(ok)
    return res


def run_mourre(cfg: ExperimentConfig, U0, rng, threads: int = 1) -> SuiteResult:
    res = SuiteResult("mourre", "pass")
    model = cfg.model.kind
    if U0.components != 1:
        return SuiteResult("mourre", "skipped", details={"reason": "scalar models only"})
    A = ConjugateOperator(U0)
    windows = random_windows(U0, cfg.study.n_windows, rng, cfg.study.v_min)
    probe_sets = [window_probes(U0, w, 3, rng) for w in windows]

    def job(item):
        w, probes = item
        return mourre_bound(U0, A, w, probes, cfg.study.v_min)

    results = _map(job, list(zip(windows, probe_sets)), threads)
    tol = cfg.tolerances.mourre
    oks = [m.numeric >= m.analytic - tol for m in results]
    for (lo, hi), m, ok in zip(windows, results, oks):
        res.add(model, "", f"numeric_minus_analytic[{lo:.6f},{hi:.6f}]", m.numeric - m.analytic,
                None, _verdict(ok))
    res.details = {"windows": [list(w) for w in windows],
                   "numeric": [m.numeric for m in results],
                   "analytic": [m.analytic for m in results],
                   "multiplier_route": [m.multiplier_route for m in results],
                   "verdicts": {"mourre_bound": all(oks)}}
    res.status = _verdict(all(oks))
    return res


def run_smoothness(cfg: ExperimentConfig, U0, phi: State, threads: int = 1) -> SuiteResult:
    res = SuiteResult("smoothness", "pass")
    model = cfg.model.kind
    if U0.components != 1:
        return SuiteResult("smoothness", "skipped", details={"reason": "scalar models only"})
    f = cfg.build_localisation()

    def job(r):
        n = auto_n_max(U0, f, r, phi, cfg.study.v_min)
        return smooth_sum(U0, f, r, phi, n), smooth_sum(U0, f, r, phi, 2 * n)

    pairs = _map(job, list(cfg.study.r_list), threads)
    oks, conclusive, rels = [], True, []
    for r, (a, b) in zip(cfg.study.r_list, pairs):
        rel = abs(a.value - b.value) / max(abs(b.value), 1e-300)
        ok = rel <= cfg.tolerances.smooth_rel
        oks.append(ok)
        rels.append(rel)
        # the doubled range may be cut by the guard band; it still has to extend past n_max
        conclusive = conclusive and a.conclusive and b.tail <= b.tol and b.n_max > a.n_max
        res.add(model, r, "smooth_sum", a.value, a.tail, None)
        res.add(model, r, "smooth_sum_doubled", b.value, b.tail, None)
        res.add(model, r, "doubling_change", rel, None, _verdict(ok))
    res.details = {"r_list": list(cfg.study.r_list),
                   "n_max": [a.n_max for a, _ in pairs], "n_max_doubled_reached": [b.n_max for _, b in pairs],
                   "values": [a.value for a, _ in pairs],
                   "values_doubled": [b.value for _, b in pairs], "relative_change": rels,
                   "conclusive": conclusive, "verdicts": {"smooth_sum": all(oks)}}
    res.status = "inconclusive" if not conclusive else _verdict(all(oks))
    return res


def scattering_sanity(sys: ScatteringSystem, phi: State) -> dict:
    """Isometry defects of ``W-``, ``W+``, ``||[S, U0] phi||`` and ``||S phi - phi||`` for ``W = 0``."""
    wm = wave_operator_apply(sys, phi, "-")
    wp = wave_operator_apply(sys, phi, "+")
    s_phi = scattering_apply(sys, phi, wm).state
    free = ScatteringSystem(sys.U0, build_full_split_step(sys.U0, np.zeros(sys.grid.shape)),
                            tol_w=sys.tol_w, n_w=sys.n_w, guard_fraction=sys.guard_fraction)
    trivial = scattering_apply(free, phi).state
    return {
        "isometry_defect_minus": isometry_defect(phi, wm.state),
        "isometry_defect_plus": isometry_defect(phi, wp.state),
        "commutation_residual": commutation_residual(sys, phi, s_phi),
        "free_s_residual": (trivial - phi.position()).norm(),
        "n_star_minus": wm.n_star,
        "n_star_plus": wp.n_star,
    }


def delay_tolerances(cfg: ExperimentConfig) -> DelayTolerances:
    t = cfg.tolerances
    return DelayTolerances(t.rel, t.abs, t.fiber_rel, t.fiber_abs, t.halving, t.ew_zero, t.fiber_support)


def run_delay(cfg: ExperimentConfig, U0, phi: State, threads: int = 1) -> SuiteResult:
    res = SuiteResult("delay", "pass")
    model = cfg.model.kind
    if U0.components != 1:
        return SuiteResult("delay", "skipped", details={"reason": "time operator needs a scalar model"})
    sys = cfg.build_system(U0)
    f = cfg.build_localisation()
    study, tol = cfg.study, cfg.tolerances
    sanity = scattering_sanity(sys, phi)
    sanity_ok = {
        "isometry": max(sanity["isometry_defect_minus"], sanity["isometry_defect_plus"]) <= tol.scattering,
        "commutation": sanity["commutation_residual"] <= tol.scattering,
        "free_s": sanity["free_s_residual"] <= 1e-12,
    }
    for key in ("isometry_defect_minus", "isometry_defect_plus", "commutation_residual", "free_s_residual"):
        res.add(model, "", key, sanity[key], None, None)
    fiber_kw = None
    if study.fiber_window is not None:
        fiber_kw = {"sigma_p": study.fiber_sigma_p, "stride": study.fiber_stride,
                    "delta": study.fiber_delta, "tol_S": tol.tol_S, "v_min": study.v_min}
    rep = convergence_study(sys, f, phi, study.r_list, study.v_min, study.fiber_window, fiber_kw,
                            delay_tolerances(cfg), threads)
    for rec in rep.records:
        tail = max(rec.tails.values())
        for q in ("t_r", "free_phi", "free_s_phi", "t_2", "hd_phi", "hd_s_phi",
                  "tau_sym", "tau_nsym", "tau_free", "elastic_difference"):
            res.add(model, rec.r, q, getattr(rec, q), tail, None)
    for r, e in zip(study.r_list[1:], rep.tau_sym_extrapolants):
        res.add(model, r, "tau_sym_extrapolant", e, None, None)
    for r, e in zip(study.r_list[1:], rep.tau_nsym_extrapolants):
        res.add(model, r, "tau_nsym_extrapolant", e, None, None)
    v = rep.verdicts
    res.add(model, "", "tau_sym_limit", rep.tau_sym_limit, None, _verdict(v["tau_sym_vs_ew"]))
    res.add(model, "", "tau_nsym_limit", rep.tau_nsym_limit, None, _verdict(v["tau_nsym_vs_tau_sym"]))
    res.add(model, "", "ew_direct", rep.ew_direct, None, None)
    if rep.ew_fiber is not None:
        res.add(model, "", "ew_fiber", rep.ew_fiber, None, _verdict(v["fiber_vs_direct"]))
        res.add(model, "", "ew_fiber_halved", rep.ew_fiber_halved, None, None)
    res.add(model, "", "scattered_slow_mass", rep.scattered_slow_mass, None, None)
    verdicts = {f"scattering_{k}": ok for k, ok in sanity_ok.items()}
    verdicts.update(v)
    res.details = {"scattering_sanity": sanity, "report": rep.as_dict(), "verdicts": verdicts}
    if not rep.conclusive:
        res.status = "inconclusive"
    else:
        res.status = _verdict(all(verdicts.values()))
    return res


RUNNERS = ("identities", "summation", "mourre", "smoothness", "delay")


def run_suite(name: str, cfg: ExperimentConfig, U0, phi: State, rng: np.random.Generator,
              threads: int = 1) -> SuiteResult:
    """Run one suite group; numerical give-ups are reported as ``inconclusive``."""
    try:
        if name == "identities":
            return run_identities(cfg, U0, rng, threads)
        if name == "summation":
            return run_summation(cfg, U0, phi)
        if name == "mourre":
            return run_mourre(cfg, U0, rng, threads)
        if name == "smoothness":
            return run_smoothness(cfg, U0, phi, threads)
        if name == "delay":
            return run_delay(cfg, U0, phi, threads)
    except (InconclusiveError, NonConvergenceError, TruncationError) as exc:
        return SuiteResult(name, "inconclusive", details={"error": type(exc).__name__, "message": str(exc)})
    raise ValueError(f"unknown suite {name!r}")
