"""Scenario files: grid, initial data, solver and diagnostics settings.

Scenarios are YAML mappings.  Keys carrying physical quantities name their
unit (``time_T``, ``sigma_vorticity``, ``period_length``).  Example::

    name: tg
    seed: 0
    grid: {dimension: 2, modes_per_axis: 64}
    initial_data: {family: taylor_green, amplitude: 1.0}
    solver: {time_T: 1.0, tol: 1.0e-10}
    diagnostics: {sigma_vorticity: 0.5}
    output: {snapshot_times: [0.5, 1.0]}
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .diagnostics import DiagnosticsConfig
from .fields import DEALIAS_MODES, VectorField, pointwise_magnitude
from .io import read_snapshot
from .solver import SolverConfig
from .spectral import TWO_PI, SpectralGrid, project_coeffs

UNIT_TOL = 1e-8


class ScenarioError(ValueError):
    """Invalid scenario; the message names the offending key."""


@dataclass(frozen=True)
class Scenario:
    name: str
    grid: SpectralGrid
    initial: dict
    solver: SolverConfig
    time_T: float
    diagnostics: DiagnosticsConfig
    seed: int = 0
    unit_director: bool = True
    output_dir: str | None = None
    snapshot_times: tuple = ()
    raw: dict = field(default_factory=dict, compare=False)
    base_dir: Path = field(default=Path("."), compare=False)

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()


# -- initial data families ---------------------------------------------------


def _zero_velocity(grid: SpectralGrid) -> VectorField:
    return VectorField(grid, np.zeros((grid.dimension,) + grid.spectral_shape), "velocity")


def _constant_director(grid: SpectralGrid, vector=(0.0, 0.0, 1.0)) -> VectorField:
    vals = np.broadcast_to(np.asarray(vector, dtype=float).reshape((3,) + (1,) * grid.dimension),
                           (3,) + grid.shape)
    return VectorField.from_values(grid, vals, "director")


def taylor_green(grid: SpectralGrid, amplitude: float = 1.0):
    """Steady-shape vortex array with sup norm ``amplitude`` and a uniform director."""
    X = grid.points()
    s = 2 * math.pi / grid.period
    if grid.dimension == 2:
        x, y = (s * c for c in X)
        u = amplitude * np.stack([np.cos(x) * np.sin(y), -np.sin(x) * np.cos(y)])
    else:
        x, y, z = (s * c for c in X)
        u = amplitude * np.stack(
            [np.sin(x) * np.cos(y) * np.cos(z), -np.cos(x) * np.sin(y) * np.cos(z), np.zeros_like(x)]
        )
    return VectorField.from_values(grid, u, "velocity"), _constant_director(grid)


def single_mode(grid: SpectralGrid, amplitude: float = 1.0, mode=None, polarization=None):
    """``u = amplitude * a sin(k.x)`` with ``a`` orthogonal to the integer mode ``k``."""
    n = grid.dimension
    k = np.asarray(mode if mode is not None else [1] + [0] * (n - 1), dtype=float)
    if k.shape != (n,) or not np.any(k):
        raise ScenarioError(f"initial_data.mode: need {n} integers, not all zero")
    if polarization is None:
        if n == 2:
            a = np.array([-k[1], k[0]])
        else:
            trial = np.eye(3)[int(np.argmin(np.abs(k)))]
            a = np.cross(k, trial)
    else:
        a = np.asarray(polarization, dtype=float)
        if a.shape != (n,) or abs(a @ k) > 1e-12 * np.linalg.norm(a) * np.linalg.norm(k):
            raise ScenarioError("initial_data.polarization: must be orthogonal to the mode")
    a = a / np.linalg.norm(a)
    phase = sum(kc * (2 * math.pi / grid.period) * x for kc, x in zip(k, grid.points()))
    u = amplitude * a.reshape((n,) + (1,) * n) * np.sin(phase)[None]
    return VectorField.from_values(grid, u, "velocity"), _constant_director(grid)


def geodesic_director(grid: SpectralGrid, theta_amplitude: float = 0.1, wavenumber: int = 1,
                      axis: int = 0, velocity_amplitude: float = 0.0):
    """``d = (cos th, sin th, 0)``, ``th = theta_amplitude sin(m x_axis)``; optional vortex velocity."""
    if not 0 <= axis < grid.dimension:
        raise ScenarioError(f"initial_data.axis: must lie in [0, {grid.dimension})")
    x = grid.points()[axis] * (2 * math.pi / grid.period)
    th = theta_amplitude * np.sin(wavenumber * x)
    d = VectorField.from_values(grid, np.stack([np.cos(th), np.sin(th), np.zeros_like(th)]), "director")
    if velocity_amplitude:
        u, _ = taylor_green(grid, velocity_amplitude)
    else:
        u = _zero_velocity(grid)
    return u, d


def random_band(grid: SpectralGrid, amplitude: float = 1.0, k_min: int = 1, k_max: int | None = None,
                director_amplitude: float = 0.5, seed: int = 0):
    """Random divergence-free velocity and unit director with modes in a band of integer wavenumbers.

    The velocity is rescaled to sup norm ``amplitude``; the director is the
    normalization of ``e_3`` plus a random perturbation of size ``director_amplitude``.
    """
    n = grid.dimension
    k_max = grid.modes_per_axis // 3 if k_max is None else int(k_max)
    if not 0 < k_min <= k_max:
        raise ScenarioError("initial_data.k_min/k_max: need 0 < k_min <= k_max")
    rng = np.random.default_rng(seed)
    radius = np.sqrt(sum(idx.astype(float) ** 2 for idx in grid.index))
    band = (radius >= k_min) & (radius <= k_max) & grid.dealias_mask

    def noise(comps):
        c = rng.standard_normal((comps,) + grid.spectral_shape) + 1j * rng.standard_normal(
            (comps,) + grid.spectral_shape)
        return c * band

    uh = project_coeffs(grid, noise(n))
    uvals = grid.inverse(uh)
    peak = float(np.max(pointwise_magnitude(uvals, n)))
    u = VectorField(grid, grid.forward(uvals) * (amplitude / peak if peak > 0 else 0.0), "velocity")
    pert = grid.inverse(noise(3))
    pert *= director_amplitude / max(float(np.max(np.abs(pert))), 1e-300)
    dv = pert + np.array([0.0, 0.0, 1.0]).reshape((3,) + (1,) * n)
    dv /= pointwise_magnitude(dv, n)[None]
    return u, VectorField.from_values(grid, dv, "director")


def constant_state(grid: SpectralGrid, director=(0.0, 0.0, 1.0)):
    """Zero velocity and a uniform (not necessarily unit) director."""
    return _zero_velocity(grid), _constant_director(grid, director)


FAMILIES = {
    "taylor_green": taylor_green,
    "single_mode": single_mode,
    "geodesic_director": geodesic_director,
    "random_band": random_band,
    "constant": constant_state,
}


def build_initial(scenario: Scenario) -> tuple[VectorField, VectorField]:
    """Materialize ``(u0, d0)`` and check the unit-director claim."""
    params = dict(scenario.initial)
    family = params.pop("family", None)
    grid = scenario.grid
    if family == "snapshot":
        try:
            u = read_snapshot(scenario.base_dir / params["u_path"], grid.period)
            d = read_snapshot(scenario.base_dir / params["d_path"], grid.period)
        except KeyError as exc:
            raise ScenarioError(f"initial_data.{exc.args[0]}: required for snapshot data") from None
        if u.grid != grid or d.grid != grid:
            raise ScenarioError("initial_data: snapshot resolution does not match grid")
        u = VectorField(grid, u.coeffs, "velocity")
        d = VectorField(grid, d.coeffs, "director")
    elif family in FAMILIES:
        if family == "random_band":
            params.setdefault("seed", scenario.seed)
        try:
            u, d = FAMILIES[family](grid, **params)
        except TypeError as exc:
            raise ScenarioError(f"initial_data: bad parameters for {family}: {exc}") from None
        except ValueError as exc:
            raise ScenarioError(f"initial_data: {exc}") from None
    else:
        raise ScenarioError(
            f"initial_data.family: unknown family {family!r}; choose from {sorted(FAMILIES) + ['snapshot']}"
        )
    if scenario.unit_director:
        dev = float(np.max(np.abs(pointwise_magnitude(d.values, grid.dimension) - 1.0)))
        if dev > UNIT_TOL:
            raise ScenarioError(
                f"initial_data.unit_director: |d0| deviates from 1 by {dev:.3e} (limit {UNIT_TOL:g})"
            )
    return u, d


# -- loading ----------------------------------------------------------------


def _section(raw: dict, key: str) -> dict:
    val = raw.get(key, {}) or {}
    if not isinstance(val, dict):
        raise ScenarioError(f"{key}: expected a mapping")
    return dict(val)


def _number(sec: dict, key: str, where: str, default=None, positive=False, integer=False):
    if key not in sec:
        if default is None:
            raise ScenarioError(f"{where}.{key}: required")
        return default
    val = sec.pop(key)
    try:
        val = int(val) if integer else float(val)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}.{key}: expected a number, got {val!r}") from None
    if positive and not val > 0:
        raise ScenarioError(f"{where}.{key}: must be positive, got {val}")
    return val


def _reject_unknown(sec: dict, where: str) -> None:
    if sec:
        raise ScenarioError(f"{where}: unknown keys {sorted(sec)}")


def scenario_from_dict(raw: dict, base_dir: Path = Path(".")) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario: top level must be a mapping")
    raw_copy = json.loads(json.dumps(raw, default=str))

    g = _section(raw, "grid")
    try:
        grid = SpectralGrid(
            _number(g, "dimension", "grid", integer=True),
            _number(g, "modes_per_axis", "grid", integer=True),
            _number(g, "period_length", "grid", TWO_PI, positive=True),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"grid: {exc}") from None
    _reject_unknown(g, "grid")

    init = _section(raw, "initial_data")
    if "family" not in init:
        raise ScenarioError("initial_data.family: required")
    unit = bool(init.pop("unit_director", True))

    s = _section(raw, "solver")
    time_T = _number(s, "time_T", "solver", positive=True)
    mode = s.pop("dealias_mode", "two_thirds")
    if mode not in DEALIAS_MODES:
        raise ScenarioError(f"solver.dealias_mode: must be one of {DEALIAS_MODES}, got {mode!r}")
    try:
        solver = SolverConfig(
            tol=_number(s, "tol", "solver", 1e-10, positive=True),
            max_iter=_number(s, "max_iter", "solver", 60, positive=True, integer=True),
            nodes=_number(s, "nodes", "solver", 8, positive=True, integer=True),
            C_star=_number(s, "C_star", "solver", 1.0, positive=True),
            safety=_number(s, "safety", "solver", 0.5, positive=True),
            min_window=_number(s, "min_window_time", "solver", 1e-8, positive=True),
            max_window=_number(s, "max_window_time", "solver", math.inf, positive=True),
            T_max=_number(s, "T_max_time", "solver", 1.0, positive=True),
            renormalize=bool(s.pop("renormalize", False)),
            dealias_mode=mode,
            retries=_number(s, "retries", "solver", 4, integer=True),
            max_windows=_number(s, "max_windows", "solver", 100_000, positive=True, integer=True),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"solver: {exc}") from None
    _reject_unknown(s, "solver")

    dg = _section(raw, "diagnostics")
    t_blow = dg.pop("t_blow_time", None)
    try:
        diag = DiagnosticsConfig(
            sigma=_number(dg, "sigma_vorticity", "diagnostics", 1.0, positive=True),
            a=_number(dg, "a", "diagnostics", 4.0),
            b=_number(dg, "b", "diagnostics", 6.0),
            t_blow=None if t_blow is None else float(t_blow),
            eta_bins=_number(dg, "eta_bins", "diagnostics", 16, positive=True, integer=True),
            eta_samples=_number(dg, "eta_samples", "diagnostics", 4, positive=True, integer=True),
            smoothing_order=_number(dg, "smoothing_order", "diagnostics", 1, integer=True),
        )
        diag.window()
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"diagnostics: {exc}") from None
    _reject_unknown(dg, "diagnostics")

    out = _section(raw, "output")
    snaps = tuple(float(t) for t in out.pop("snapshot_times", []) or [])
    if any(not 0 <= t <= time_T for t in snaps):
        raise ScenarioError("output.snapshot_times: every time must lie in [0, time_T]")
    out_dir = out.pop("dir", None)
    _reject_unknown(out, "output")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ScenarioError(f"seed: expected an integer, got {seed!r}")
    unknown = set(raw) - {"name", "seed", "grid", "initial_data", "solver", "diagnostics", "output"}
    if unknown:
        raise ScenarioError(f"scenario: unknown keys {sorted(unknown)}")

    scen = Scenario(
        name=str(raw.get("name", "scenario")),
        grid=grid,
        initial=init,
        solver=solver,
        time_T=time_T,
        diagnostics=diag,
        seed=seed,
        unit_director=unit,
        output_dir=out_dir,
        snapshot_times=snaps,
        raw=raw_copy,
        base_dir=Path(base_dir),
    )
    build_initial(scen)
    return scen


def load_scenario(path) -> Scenario:
    """Read and validate a YAML scenario; raises FileNotFoundError or ScenarioError."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario: cannot parse {path}: {exc}") from None
    return scenario_from_dict(raw, path.parent)


__all__ = ["Scenario", "ScenarioError", "load_scenario", "scenario_from_dict", "build_initial", "FAMILIES",
           "taylor_green", "single_mode", "geodesic_director", "random_band", "constant_state"]
