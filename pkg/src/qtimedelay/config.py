"""Experiment configuration: TOML schema, validation and model construction.

A config file has the top-level keys ``schema_version`` and ``seed`` and the
tables ``[model]`` (with an optional ``[model.potential]``), ``[grid]``,
``[state]``, ``[localisation]``, ``[study]``, ``[tolerances]`` and ``[run]``.
Everything is validated before any computation; unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .hilbert import GUARD_FRACTION, Grid, WavepacketSpec, make_wavepacket
from .localisation import make_bump
from .models import (build_coined_walk, build_free_laplacian, build_free_shift,
                     build_full_split_step, build_phase_defect, sites_mask)
from .scattering import ScatteringSystem

SCHEMA_VERSION = 1
MODEL_KINDS = ("shift", "laplacian", "coined_walk")
POTENTIAL_KINDS = ("none", "gaussian", "sites", "phase_defect")
SUITE_NAMES = ("identities", "summation", "mourre", "smoothness", "delay", "all")


@dataclass(frozen=True)
class PotentialConfig:
    kind: str = "none"
    depth: float = 0.0
    width: float = 1.0
    center: tuple = ()
    theta: float = 0.0
    sites: tuple = ()
    values: tuple = ()


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    velocity: tuple = ()
    coin_angle: float = math.pi / 4
    experimental: bool = False
    potential: PotentialConfig = PotentialConfig()


@dataclass(frozen=True)
class GridConfig:
    d: int
    N: int
    h: float
    guard_fraction: float = GUARD_FRACTION


@dataclass(frozen=True)
class StateConfig:
    center: tuple
    p_lo: tuple
    p_hi: tuple
    sigma_p: Optional[float] = None
    polarization: Optional[tuple] = None


@dataclass(frozen=True)
class StudyConfig:
    r_list: tuple
    v_min: float = 0.1
    n_packets: int = 20
    max_power: int = 16
    n_windows: int = 10
    fiber_window: Optional[tuple] = None
    fiber_sigma_p: float = 0.02
    fiber_stride: int = 16
    fiber_delta: int = 4


@dataclass(frozen=True)
class ToleranceConfig:
    tol_w: float = 1e-9
    tol_S: float = 1e-6
    n_w: int = 20000
    transport: float = 1e-10
    canonical: float = 1e-8
    summation_rel: float = 5e-2
    summation_abs: float = 1e-8
    mourre: float = 1e-9
    smooth_rel: float = 1e-6
    scattering: float = 1e-8
    rel: float = 5e-2
    abs: float = 2e-2
    fiber_rel: float = 2e-2
    fiber_abs: float = 5e-4
    halving: float = 1e-2
    ew_zero: float = 2e-6
    fiber_support: float = 1e-8


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    model: ModelConfig
    grid: GridConfig
    state: StateConfig
    w: float
    study: StudyConfig
    tolerances: ToleranceConfig = ToleranceConfig()
    seed: int = 0
    suite: str = "all"
    out: str = "out"
    schema_version: int = SCHEMA_VERSION

    def as_dict(self) -> dict:
        """Everything that affects results (the output directory does not)."""
        d = asdict(self)
        d.pop("out")
        return d

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the validated config."""
        text = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    # -- construction --------------------------------------------------------

    def build_grid(self) -> Grid:
        return Grid(self.grid.d, self.grid.N, self.grid.h)

    def build_free(self, grid: Optional[Grid] = None):
        grid = grid or self.build_grid()
        m = self.model
        if m.kind == "shift":
            return build_free_shift(grid, m.velocity)
        if m.kind == "laplacian":
            return build_free_laplacian(grid)
        a = m.coin_angle
        coin = np.array([[math.cos(a), math.sin(a)], [math.sin(a), -math.cos(a)]])
        return build_coined_walk(grid, coin)

    def build_full(self, U0):
        grid = U0.grid
        pot = self.model.potential
        gf = self.grid.guard_fraction
        if pot.kind == "phase_defect":
            return build_phase_defect(U0, pot.theta, pot.sites, guard_fraction=gf)
        if pot.kind == "none":
            W = np.zeros(grid.shape)
        elif pot.kind == "gaussian":
            r2 = np.sum((grid.X - np.asarray(pot.center)) ** 2, axis=-1)
            W = -pot.depth * np.exp(-r2 / (2 * pot.width ** 2))
        else:
            W = np.zeros(grid.shape)
            for s, v in zip(pot.sites, pot.values):
                W = W + v * sites_mask(grid, [s])
        return build_full_split_step(U0, W, guard_fraction=gf)

    def build_state(self, grid: Grid, components: int = 1):
        s = self.state
        spec = WavepacketSpec(s.center, s.p_lo, s.p_hi, sigma_p=s.sigma_p, polarization=s.polarization)
        return make_wavepacket(grid, spec, components)

    def build_localisation(self):
        return make_bump(self.w)

    def build_system(self, U0=None) -> ScatteringSystem:
        if U0 is None:
            U0 = self.build_free()
        U = self.build_full(U0)
        t = self.tolerances
        return ScatteringSystem(U0, U, tol_w=t.tol_w, n_w=t.n_w,
                                guard_fraction=self.grid.guard_fraction)


# -- parsing -----------------------------------------------------------------

class _Section:
    """Typed reader over one TOML table that remembers which keys were used."""

    def __init__(self, data, where: str):
        if not isinstance(data, dict):
            raise ConfigError(f"[{where}] must be a table")
        self.data = data
        self.where = where
        self.used = set()

    def _get(self, key, default, required):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(f"[{self.where}] missing required key '{key}'")
            return default
        return self.data[key]

    def num(self, key, default=None, required=False, lo=None, hi=None, lo_open=False, integer=False):
        v = self._get(key, default, required)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            kind = "an integer" if integer else "a number"
            raise ConfigError(f"[{self.where}] '{key}' must be {kind}")
        if not math.isfinite(v):
            raise ConfigError(f"[{self.where}] '{key}' must be finite")
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise ConfigError(f"[{self.where}] '{key}' = {v} is below the allowed range")
        if hi is not None and v > hi:
            raise ConfigError(f"[{self.where}] '{key}' = {v} is above the allowed range")
        return int(v) if integer else float(v)

    def vec(self, key, default=None, required=False, length=None):
        v = self._get(key, default, required)
        if v is None:
            return None
        if not isinstance(v, list) or not all(isinstance(t, (int, float)) and not isinstance(t, bool)
                                              for t in v):
            raise ConfigError(f"[{self.where}] '{key}' must be a list of numbers")
        if length is not None and len(v) != length:
            raise ConfigError(f"[{self.where}] '{key}' must have {length} entries")
        if not all(math.isfinite(t) for t in v):
            raise ConfigError(f"[{self.where}] '{key}' must be finite")
        return tuple(float(t) for t in v)

    def choice(self, key, options, default=None, required=False):
        v = self._get(key, default, required)
        if v not in options:
            raise ConfigError(f"[{self.where}] '{key}' must be one of {', '.join(options)}")
        return v

    def flag(self, key, default=False):
        v = self._get(key, default, False)
        if not isinstance(v, bool):
            raise ConfigError(f"[{self.where}] '{key}' must be true or false")
        return v

    def text(self, key, default):
        v = self._get(key, default, False)
        if not isinstance(v, str) or not v:
            raise ConfigError(f"[{self.where}] '{key}' must be a non-empty string")
        return v

    def sub(self, key) -> "_Section":
        return _Section(self._get(key, {}, False), f"{self.where}.{key}")

    def finish(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(f"[{self.where}] unknown key(s): {', '.join(extra)}")


def _parse_potential(sec: _Section, d: int) -> PotentialConfig:
    kind = sec.choice("kind", POTENTIAL_KINDS, default="none")
    if kind == "gaussian":
        out = PotentialConfig(kind, depth=sec.num("depth", required=True),
                              width=sec.num("width", required=True, lo=0, lo_open=True),
                              center=sec.vec("center", default=[0.0] * d, length=d))
    elif kind in ("sites", "phase_defect"):
        raw = sec._get("sites", None, True)
        if not isinstance(raw, list) or not raw:
            raise ConfigError(f"[{sec.where}] 'sites' must be a non-empty list")
        sites = []
        for s in raw:
            s = s if isinstance(s, list) else [s]
            if len(s) != d or not all(isinstance(t, int) and not isinstance(t, bool) for t in s):
                raise ConfigError(f"[{sec.where}] every site must be {d} integer offset(s)")
            sites.append(tuple(s))
        if kind == "phase_defect":
            out = PotentialConfig(kind, theta=sec.num("theta", required=True), sites=tuple(sites))
        else:
            values = sec.vec("values", required=True, length=len(sites))
            out = PotentialConfig(kind, sites=tuple(sites), values=values)
    else:
        out = PotentialConfig()
    sec.finish()
    return out


def parse_config(data: dict, name: str = "config") -> ExperimentConfig:
    """Validate a decoded TOML document and return the typed config."""
    top = _Section(data, "top")
    version = top.num("schema_version", required=True, integer=True)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    seed = top.num("seed", default=0, lo=0, integer=True)

    g = top.sub("grid")
    d = g.num("d", required=True, integer=True, lo=1, hi=2)
    N = g.num("N", required=True, integer=True, lo=16, hi=65536 if d == 1 else 1024)
    if N % 2:
        raise ConfigError("[grid] 'N' must be even")
    grid = GridConfig(d, N, g.num("h", required=True, lo=0, lo_open=True),
                      g.num("guard_fraction", default=GUARD_FRACTION, lo=0, lo_open=True, hi=0.45))
    g.finish()

    m = top.sub("model")
    kind = m.choice("kind", MODEL_KINDS, required=True)
    velocity = m.vec("velocity", default=None, length=d)
    coin_angle = m.num("coin_angle", default=math.pi / 4)
    experimental = m.flag("experimental")
    pot = _parse_potential(m.sub("potential"), d)
    m.finish()
    if kind == "shift" and velocity is None:
        raise ConfigError("[model] shift model needs 'velocity'")
    if kind != "shift" and velocity is not None:
        raise ConfigError("[model] 'velocity' only applies to the shift model")
    if kind == "coined_walk":
        if not experimental:
            raise ConfigError("[model] coined_walk is optional and needs 'experimental = true'")
        if d != 1:
            raise ConfigError("[model] coined_walk is implemented in 1D")
    model = ModelConfig(kind, velocity or (), coin_angle, experimental, pot)

    s = top.sub("state")
    center = s.vec("center", required=True, length=d)
    p_lo = s.vec("p_lo", required=True, length=d)
    p_hi = s.vec("p_hi", required=True, length=d)
    sigma_p = s.num("sigma_p", default=None, lo=0, lo_open=True)
    pol = s.vec("polarization", default=None, length=2)
    s.finish()
    pmax = math.pi / grid.h
    for lo, hi in zip(p_lo, p_hi):
        if not -pmax < lo < hi < pmax:
            raise ConfigError("[state] need -pi/h < p_lo < p_hi < pi/h on every axis")
    state = StateConfig(center, p_lo, p_hi, sigma_p, pol)

    loc = top.sub("localisation")
    w = loc.num("w", default=1.0, lo=0, lo_open=True)
    loc.finish()

    st = top.sub("study")
    r_list = st.vec("r_list", required=True)
    if len(r_list) < 3:
        raise ConfigError("[study] 'r_list' needs at least three scales")
    if any(r <= 0 for r in r_list) or any(b <= a for a, b in zip(r_list, r_list[1:])):
        raise ConfigError("[study] 'r_list' must be positive and strictly ascending")
    fw = st.vec("fiber_window", default=None, length=2)
    if fw is not None and not fw[0] < fw[1]:
        raise ConfigError("[study] 'fiber_window' must satisfy lo < hi")
    study = StudyConfig(
        r_list, st.num("v_min", default=0.1, lo=0, lo_open=True),
        st.num("n_packets", default=20, integer=True, lo=1, hi=1000),
        st.num("max_power", default=16, integer=True, lo=1, hi=10000),
        st.num("n_windows", default=10, integer=True, lo=1, hi=1000),
        fw, st.num("fiber_sigma_p", default=0.02, lo=0, lo_open=True),
        st.num("fiber_stride", default=16, integer=True, lo=1),
        st.num("fiber_delta", default=4, integer=True, lo=2))
    st.finish()

    t = top.sub("tolerances")
    defaults = ToleranceConfig()
    vals = {}
    for key, default in asdict(defaults).items():
        if key == "n_w":
            vals[key] = t.num(key, default=default, integer=True, lo=1, hi=10 ** 7)
        else:
            vals[key] = t.num(key, default=default, lo=0, lo_open=True, hi=1.0)
    t.finish()
    tolerances = ToleranceConfig(**vals)

    r = top.sub("run")
    suite = r.choice("suite", SUITE_NAMES, default="all")
    out = r.text("out", "out")
    cfg_name = r.text("name", name)
    r.finish()
    top.finish()
    return ExperimentConfig(cfg_name, model, grid, state, w, study, tolerances, seed, suite, out, version)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, name=path.stem)


def bundled_config_path(name: str) -> Path:
    """Path of a config shipped with the package (``shift_phase_defect``, ``laplacian_well``)."""
    path = Path(__file__).parent / "configs" / f"{name}.toml"
    if not path.exists():
        raise ConfigError(f"no bundled config named '{name}'")
    return path
