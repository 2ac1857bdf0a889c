"""Self-checks run by ``mildflow verify``; each compares against an exact answer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diagnostics import unit_length_deviation
from .fields import VectorField, sup_norm, derivative_norm
from .rescaler import RescaleParams, residual_check, zoom
from .scenario import geodesic_director, taylor_green
from .solver import SolverConfig, march, picard_solve
from .spectral import make_grid, heat_semigroup, leray_project, divergence


@dataclass
class Check:
    name: str
    value: float
    limit: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.limit)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34s} {self.value:.3e} (limit {self.limit:.1e})"


def _random_field(grid, comps, seed):
    rng = np.random.default_rng(seed)
    return VectorField.from_values(grid, rng.standard_normal((comps,) + grid.shape))


def check_semigroup(N: int) -> list[Check]:
    g = make_grid(2, N)
    f = _random_field(g, 2, 1)
    a = heat_semigroup(heat_semigroup(f, 0.03), 0.07).coeffs
    b = heat_semigroup(f, 0.1).coeffs
    comp = np.max(np.abs(a - b)) / np.max(np.abs(b))
    excess = max(sup_norm(heat_semigroup(f, t), 1) - sup_norm(f, 1) for t in (1e-3, 1e-2, 0.1, 1.0))
    return [Check("semigroup composition", comp, 1e-12),
            Check("sup-norm contractivity", max(excess, 0.0) / sup_norm(f, 1), 1e-12)]


def check_projection(N: int) -> list[Check]:
    g = make_grid(3, N // 2)
    f = _random_field(g, 3, 2)
    p = leray_project(f)
    idem = np.max(np.abs(leray_project(p).coeffs - p.coeffs)) / np.max(np.abs(p.coeffs))
    div = np.max(np.abs(divergence(p).coeffs)) / np.max(np.abs(p.coeffs))
    return [Check("projection idempotence", idem, 1e-12), Check("projected divergence", div, 1e-12)]


def check_taylor_green(N: int, T: float) -> Check:
    g = make_grid(2, N)
    u0, d0 = taylor_green(g, 1.0)
    traj = march(u0, d0, T, SolverConfig())
    err = max(abs(sup_norm(traj.u(i)) - math.exp(-2 * t)) for i, t in enumerate(traj.times))
    return Check(f"Taylor-Green decay to t={T:g}", err, 1e-6)


def check_geodesic(N: int, T: float) -> Check:
    g = make_grid(2, N)
    u0, d0 = geodesic_director(g, 0.1)
    traj = march(u0, d0, T, SolverConfig())
    x = g.points()[0]
    err = 0.0
    for i, t in enumerate(traj.times):
        th = 0.1 * math.exp(-t) * np.sin(x)
        exact = np.stack([np.cos(th), np.sin(th), np.zeros_like(th)])
        err = max(err, float(np.max(np.abs(g.inverse(traj.d_hat[i]) - exact))))
    return Check(f"geodesic director to t={T:g}", err, 1e-8)


def check_coupled(N: int, T: float) -> list[Check]:
    g = make_grid(2, N)
    u0, d0 = geodesic_director(g, 0.5, velocity_amplitude=1.0)
    cfg = SolverConfig(tol=1e-11)
    traj, _ = picard_solve(u0, d0, T, cfg, warn=False)
    dev = max(unit_length_deviation(traj.d(i)) for i in range(traj.nt))
    res = residual_check(traj)
    z = zoom(traj, RescaleParams(2, (0.0, 0.0), 0.0))
    scale = max(
        max(abs(2 * sup_norm(z.u(i)) - sup_norm(traj.u(i))),
            abs(2 * derivative_norm(z.d(i), 1) - derivative_norm(traj.d(i), 1)))
        for i in range(traj.nt)
    )
    return [
        Check("unit length along coupled run", dev, 1e-6),
        Check("mild residual of Picard output", res, 10 * cfg.tol),
        Check("zoom residual (M=2)", residual_check(z), max(10 * res, 1e-14)),
        Check("zoom norm scaling (M=2)", scale, 1e-8),
    ]


def run_checks(quick: bool = False) -> list[Check]:
    N = 32 if quick else 64
    T = 0.25 if quick else 1.0
    checks = []
    checks += check_semigroup(N)
    checks += check_projection(N)
    checks.append(check_taylor_green(N, T))
    checks.append(check_geodesic(N, T / 2))
    checks += check_coupled(N, 0.05)
    return checks
