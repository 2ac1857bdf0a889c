"""Parabolic zoom of trajectories and the mild-equation residual.

The zoom ``u_M(x, t) = u(x_k + x/M, t_k + t/M^2) / M``, ``d_M(x, t) = d(x_k + x/M, t_k + t/M^2)``
maps a field of period ``L`` to one of period ``M L``.  Writing the output on
a grid of period ``M L`` with the same mode count makes the transform exact
for every ``M > 0``: Fourier index ``j`` stays index ``j`` and only picks up
the phase of the shift.  Node times map affinely, so window polynomials are
carried over without re-interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import pointwise_magnitude
from .solver import Trajectory, duhamel_map, trajectory_distance


@dataclass(frozen=True)
class RescaleParams:
    """Scale ``M``, centre ``x_k`` (a point of the fundamental cell) and base time ``t_k``."""

    M: float
    x_k: tuple
    t_k: float

    def __post_init__(self):
        if not (self.M > 0 and math.isfinite(self.M)):
            raise ValueError(f"scale M must be positive, got {self.M}")
        object.__setattr__(self, "x_k", tuple(float(x) for x in self.x_k))
        if not all(math.isfinite(x) for x in self.x_k) or not math.isfinite(self.t_k):
            raise ValueError("centre and base time must be finite")

    def then(self, other: "RescaleParams", period: float) -> "RescaleParams":
        """Parameters of applying ``self`` and then ``other`` as one zoom."""
        x = tuple((a + b / self.M) % period for a, b in zip(self.x_k, other.x_k))
        return RescaleParams(self.M * other.M, x, self.t_k + other.t_k / self.M**2)


def _check_params(traj: Trajectory, p: RescaleParams) -> None:
    n, L = traj.grid.dimension, traj.grid.period
    if len(p.x_k) != n:
        raise ValueError(f"centre needs {n} coordinates, got {len(p.x_k)}")
    if not all(0.0 <= x < L for x in p.x_k):
        raise ValueError(f"centre {p.x_k} lies outside the fundamental cell [0, {L})")


def shift_phase(grid, x_k) -> np.ndarray:
    """Multiplier ``exp(i k.x_k)``; Nyquist modes are dropped unless the shift is on the grid."""
    phase = np.ones(grid.spectral_shape, dtype=complex)
    N = grid.modes_per_axis
    for axis, (k, idx) in enumerate(zip(grid.kvec, grid.index)):
        phase = phase * np.exp(1j * k * x_k[axis])
        cells = x_k[axis] / grid.spacing
        if abs(cells - round(cells)) > 1e-12:
            phase = phase * (np.abs(idx) != N // 2)
    return phase


def zoom(traj: Trajectory, p: RescaleParams, times=None) -> Trajectory:
    """Rescaled trajectory on the torus of period ``M L``.

    Without ``times`` every node is carried over (rescaled time
    ``M^2 (t - t_k)``) and the window structure is kept.  With ``times`` (in
    rescaled units) the source is interpolated at ``t_k + t/M^2``; each of
    those samples then forms its own break point.
    """
    _check_params(traj, p)
    grid = traj.grid
    phase = shift_phase(grid, p.x_k)
    out_grid = grid.with_period(grid.period * p.M)
    M2 = p.M**2
    if times is None:
        u_hat = traj.u_hat * phase / p.M
        d_hat = traj.d_hat * phase
        return Trajectory(out_grid, M2 * (traj.times - p.t_k), u_hat, d_hat, traj.breaks, (), traj.blowup)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    src = p.t_k + times / M2
    tol = 1e-12 * max(1.0, abs(traj.t0), abs(traj.t1))
    if np.any(src < traj.t0 - tol) or np.any(src > traj.t1 + tol):
        raise ValueError(
            f"rescaled window [{src.min():.6g}, {src.max():.6g}] exits the source window "
            f"[{traj.t0:.6g}, {traj.t1:.6g}]"
        )
    src = np.clip(src, traj.t0, traj.t1)
    us, ds = zip(*(traj.interpolate(t) for t in src))
    u_hat = np.stack(us) * phase / p.M
    d_hat = np.stack(ds) * phase
    return Trajectory(out_grid, times, u_hat, d_hat, tuple(range(max(times.size - 1, 1))), (), traj.blowup)


def residual_check(traj: Trajectory, mode: str = "two_thirds") -> float:
    """Distance between ``traj`` and the Duhamel map applied to it from its first node."""
    if traj.nt < 2:
        raise ValueError("residual needs at least two nodes")
    image = duhamel_map(traj.u(0), traj.d(0), traj, mode)
    return trajectory_distance(traj, image)


def zoom_norm_series(series, p: RescaleParams) -> np.ndarray:
    """Map ``(t, |u|_inf + |grad d|_inf)`` rows through the zoom."""
    arr = np.asarray(series, dtype=float)
    return np.column_stack([p.M**2 * (arr[:, 0] - p.t_k), arr[:, 1] / p.M])


def peak_point(traj: Trajectory, node: int = -1) -> tuple[tuple, float, float]:
    """Grid point maximizing ``|u| + |grad d|`` at a node, with its time and value."""
    grid = traj.grid
    u = grid.inverse(traj.u_hat[node])
    G = grid.inverse(np.stack([dv * traj.d_hat[node] for dv in grid.dvec], axis=-grid.dimension - 1))
    s = pointwise_magnitude(u, grid.dimension) + pointwise_magnitude(G, grid.dimension)
    where = np.unravel_index(int(np.argmax(s)), s.shape)
    x = tuple(i * grid.spacing for i in where)
    return x, float(traj.times[node]), float(s[where])


def peak_params(traj: Trajectory, node: int = -1) -> RescaleParams:
    """Zoom centred on the peak of ``|u| + |grad d|`` with ``M`` equal to that peak.

    After the zoom the peak value is 1 at the origin.  This is a convenience
    choice, not an asymptotic selection rule.
    """
    x, t, value = peak_point(traj, node)
    if value <= 0:
        raise ValueError("fields vanish at the requested node; no natural scale")
    return RescaleParams(value, x, t)
