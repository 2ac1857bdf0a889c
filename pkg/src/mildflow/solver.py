"""Duhamel map, Picard iteration and window marching for the mild formulation.

Within a window ``[t0, t0 + h]`` the trajectory is represented by its values at
``m`` Chebyshev-Lobatto nodes.  The nonlinear terms are interpolated in time
by the Lagrange polynomial through those nodes and each Fourier mode is
integrated against ``exp(-(t - s)|k|^2)`` exactly, so the stiff factor never
enters a quadrature error.  The per-mode weights are

    W_ij(a) = int_0^{t_i} exp(-a (t_i - s)) l_j(s / h) ds,   a = |k|^2,

evaluated by Gauss-Legendre quadrature while ``a t_i`` is moderate and by the
terminating integration-by-parts series (exact for polynomials) beyond that.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .fields import (
    OVERSAMPLE,
    StatePair,
    VectorField,
    derivative_norm,
    divergence_residual,
    nonlinear_coeffs,
    sobolev_inf_norm,
    sup_norm,
)
from .spectral import SpectralGrid, project_coeffs

logger = logging.getLogger(__name__)

DIV_TOL = 1e-10


class SolverError(RuntimeError):
    """Base class for solver failures; carries the :class:`PicardRecord` when there is one."""

    def __init__(self, message: str, record: "PicardRecord | None" = None):
        super().__init__(message)
        self.record = record


class PicardNonConvergence(SolverError):
    pass


class PicardDivergence(SolverError):
    pass


class MarchError(SolverError):
    def __init__(self, message, record=None, window: int = -1, t_start: float = float("nan"),
                 partial: "Trajectory | None" = None):
        super().__init__(message, record)
        self.window = window
        self.t_start = t_start
        self.partial = partial


class ExistenceWindowWarning(UserWarning):
    """Requested window exceeds the contraction time T_star."""


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 60
    nodes: int = 8
    C_star: float = 1.0
    safety: float = 0.5
    min_window: float = 1e-8
    max_window: float = math.inf
    T_max: float = 1.0
    renormalize: bool = False
    dealias_mode: str = "two_thirds"
    retries: int = 4
    max_windows: int = 100_000
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.nodes < 2:
            raise ValueError("need at least 2 quadrature nodes per window")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.C_star > 0:
            raise ValueError("C_star must be positive")
        if not 0 < self.safety:
            raise ValueError("safety factor must be positive")


@dataclass(frozen=True)
class SolverConstants:
    C_star: float
    K_star: float
    T_star: float
    T0: float
    sup_u0: float
    sup_grad_d0: float
    w0_u0: float
    w1_d0: float

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


@dataclass
class PicardRecord:
    distances: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    converged: bool = False
    window: tuple = (0.0, 0.0)
    quadrature_error: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.distances)

    @property
    def contraction(self) -> float:
        """Last measured ratio of successive distances (nan when none was measurable)."""
        return self.ratios[-1] if self.ratios else float("nan")

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "distances": [float(x) for x in self.distances],
            "ratios": [float(x) for x in self.ratios],
            "contraction": float(self.contraction),
            "converged": bool(self.converged),
            "window": [float(x) for x in self.window],
            "quadrature_error": float(self.quadrature_error),
        }


@dataclass(frozen=True)
class WindowRecord:
    index: int
    t_start: float
    length: float
    T0: float
    sup_u: float
    sup_grad_d: float
    picard: PicardRecord

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "t_start": float(self.t_start),
            "length": float(self.length),
            "T0": float(self.T0),
            "sup_u": float(self.sup_u),
            "sup_grad_d": float(self.sup_grad_d),
            "picard": self.picard.as_dict(),
        }


# -- time nodes and interpolation ---------------------------------------


def lobatto_nodes(m: int) -> np.ndarray:
    """Chebyshev-Lobatto points on [0, 1] in increasing order."""
    j = np.arange(m)
    tau = 0.5 * (1.0 - np.cos(np.pi * j / (m - 1)))
    tau[0], tau[-1] = 0.0, 1.0
    return tau


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / np.prod(diff, axis=1)
    return w / np.max(np.abs(w))


def lagrange_matrix(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``L[p, j] = l_j(x_p)`` by the second barycentric formula."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = barycentric_weights(nodes)
    diff = x[:, None] - nodes[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    terms = w[None, :] / diff
    L = terms / terms.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    L[hit] = exact[hit].astype(float)
    return L


def differentiation_matrix(nodes: np.ndarray) -> np.ndarray:
    w = barycentric_weights(nodes)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def chebyshev_tail(values: np.ndarray) -> np.ndarray:
    """``|c_{m-2}| + |c_{m-1}|`` of the Chebyshev expansion through Lobatto samples.

    ``values`` has the node index first; the result drops that axis.
    """
    m = values.shape[0]
    N = m - 1
    theta = np.pi * np.arange(m) / N
    k = np.arange(m)
    # nodes ascend, x_j = -cos(theta_j), so T_k(x_j) = (-1)^k cos(k theta_j)
    T = ((-1.0) ** k)[:, None] * np.cos(k[:, None] * theta[None, :])
    wj = np.ones(m)
    wj[[0, -1]] = 0.5
    C = (2.0 / N) * T * wj[None, :]
    C[[0, -1]] *= 0.5
    coef = np.tensordot(C[-2:], values, axes=(1, 0))
    return np.abs(coef[0]) + np.abs(coef[1])


# -- exponential weights ------------------------------------------------


@lru_cache(maxsize=16)
def _node_tables(taus: tuple) -> dict:
    nodes = np.asarray(taus)
    m = nodes.size
    D = differentiation_matrix(nodes)
    powers = [np.eye(m)]
    for _ in range(1, m):
        powers.append(powers[-1] @ D)
    dnorm = max(float(np.max(np.sum(np.abs(D), axis=1))), 1.0)
    switch = 4.0 * dnorm
    ngl = int(math.ceil(math.sqrt(16.0 * switch))) + m + 16
    sig, wgl = np.polynomial.legendre.leggauss(ngl)
    sig = 0.5 * (sig + 1.0)
    wgl = 0.5 * wgl
    # L[i][g, j] = l_j(tau_i * sigma_g)
    L = np.stack([lagrange_matrix(nodes, nodes[i] * sig) for i in range(m)])
    return {"D": np.stack(powers), "switch": switch, "sig": sig, "wgl": wgl, "L": L}


def exponential_weights(a: np.ndarray, h: float, taus: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Free-evolution factors ``E[i, q]`` and Duhamel weights ``W[i, j, q]``.

    ``a`` holds the distinct decay rates ``|k|^2``; ``taus`` are the node
    positions in [0, 1] (first node at 0), and the window length is ``h``.
    """
    a = np.asarray(a, dtype=float)
    taus = np.asarray(taus, dtype=float)
    m = taus.size
    tab = _node_tables(tuple(taus.tolist()))
    t = h * taus
    E = np.exp(-np.outer(t, a))
    W = np.zeros((m, m, a.size))
    for i in range(1, m):
        c = a * t[i]
        gl = c <= tab["switch"]
        if np.any(gl):
            expo = np.exp(-np.outer(c[gl], 1.0 - tab["sig"])) * tab["wgl"][None, :]
            W[i, :, gl] = t[i] * (expo @ tab["L"][i])
        ibp = ~gl
        if np.any(ibp):
            ai = a[ibp]
            alpha = ai * h
            ec = np.exp(-c[ibp])
            acc = np.zeros((ai.size, m))
            for p in range(m):
                Dp = tab["D"][p]
                term = Dp[i][None, :] - ec[:, None] * Dp[0][None, :]
                acc += ((-1.0) ** p) * term / (ai * alpha**p)[:, None]
            W[i, :, ibp] = acc
    return E, W


@lru_cache(maxsize=64)
def _window_operator(grid: SpectralGrid, h: float, taus: tuple):
    ksq = grid.ksq
    uniq, inv = np.unique(ksq, return_inverse=True)
    inv = inv.reshape(ksq.shape)
    E, W = exponential_weights(uniq, h, np.asarray(taus))
    E_full = E[:, inv]
    W_full = W[:, :, inv]
    decay = np.where(uniq > 0, -np.expm1(-h * uniq) / np.where(uniq > 0, uniq, 1.0), h)[inv]
    return E_full, W_full, decay


def _einsum_nodes(W: np.ndarray, N: np.ndarray, n: int) -> np.ndarray:
    sp = "xyz"[:n]
    return np.einsum(f"ij{sp},jc{sp}->ic{sp}", W, N)


# -- trajectory ---------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Node samples of ``(u, d)`` over one or more consecutive windows.

    ``breaks`` lists the node index where each window starts; consecutive
    windows share their boundary node.  Inside a window the nodes are the
    quadrature nodes of the Duhamel integrals, and states between nodes are
    recovered by polynomial interpolation.
    """

    grid: SpectralGrid
    times: np.ndarray
    u_hat: np.ndarray
    d_hat: np.ndarray
    breaks: tuple = (0,)
    records: tuple = ()
    blowup: bool = False

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise ValueError("times must be a non-empty 1-D array")
        if np.any(np.diff(times) <= 0):
            raise ValueError("node times must be strictly increasing")
        if self.u_hat.shape[0] != times.size or self.d_hat.shape[0] != times.size:
            raise ValueError("state arrays must have one entry per node")
        if self.breaks[0] != 0 or any(b >= times.size for b in self.breaks):
            raise ValueError(f"bad window breaks {self.breaks}")
        for arr in (times, self.u_hat, self.d_hat):
            arr.flags.writeable = False
        object.__setattr__(self, "times", times)

    @property
    def nt(self) -> int:
        return self.times.size

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    def window_slices(self) -> list[tuple[int, int]]:
        """``(first, last)`` node index of every window, inclusive."""
        ends = list(self.breaks[1:]) + [self.nt - 1]
        return list(zip(self.breaks, ends))

    def u(self, i: int) -> VectorField:
        return VectorField(self.grid, self.u_hat[i], "velocity")

    def d(self, i: int) -> VectorField:
        return VectorField(self.grid, self.d_hat[i], "director")

    def state(self, i: int) -> StatePair:
        return StatePair(self.u(i), self.d(i), float(self.times[i]))

    def states(self):
        for i in range(self.nt):
            yield self.state(i)

    def window(self, w: int) -> "Trajectory":
        a, b = self.window_slices()[w]
        return Trajectory(self.grid, self.times[a : b + 1], self.u_hat[a : b + 1], self.d_hat[a : b + 1])

    def interpolate(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients of ``(u, d)`` at time ``t`` from the window polynomial."""
        if not (self.t0 - 1e-12 * max(1.0, abs(self.t0)) <= t <= self.t1 + 1e-12 * max(1.0, abs(self.t1))):
            raise ValueError(f"t={t} outside [{self.t0}, {self.t1}]")
        for a, b in self.window_slices():
            if t <= self.times[b] or b == self.nt - 1:
                break
        if a == b:
            return self.u_hat[a].copy(), self.d_hat[a].copy()
        nodes = self.times[a : b + 1]
        L = lagrange_matrix(nodes, np.array([t]))[0]
        u = np.tensordot(L, self.u_hat[a : b + 1], axes=(0, 0))
        d = np.tensordot(L, self.d_hat[a : b + 1], axes=(0, 0))
        return u, d

    def with_states(self, u_hat: np.ndarray, d_hat: np.ndarray) -> "Trajectory":
        return replace(self, u_hat=u_hat, d_hat=d_hat, records=(), blowup=False)


def constant_trajectory(u0: VectorField, d0: VectorField, T: float, nodes: int = 8,
                        t0: float = 0.0) -> Trajectory:
    times = t0 + T * lobatto_nodes(nodes)
    u = np.broadcast_to(u0.coeffs, (nodes,) + u0.coeffs.shape).copy()
    d = np.broadcast_to(d0.coeffs, (nodes,) + d0.coeffs.shape).copy()
    return Trajectory(u0.grid, times, u, d)


def concatenate(pieces: list, records=(), blowup: bool = False) -> Trajectory:
    """Join windows end to end; each piece's first node replaces the previous last node."""
    grid = pieces[0].grid
    times, us, ds, breaks = [], [], [], []
    offset = 0
    for k, p in enumerate(pieces):
        if k == 0:
            times.append(p.times)
            us.append(p.u_hat)
            ds.append(p.d_hat)
            breaks.extend(p.breaks)
            offset = p.nt - 1
        else:
            times[-1] = times[-1][:-1]
            us[-1] = us[-1][:-1]
            ds[-1] = ds[-1][:-1]
            times.append(p.times)
            us.append(p.u_hat)
            ds.append(p.d_hat)
            breaks.extend(offset + b for b in p.breaks)
            offset += p.nt - 1
    return Trajectory(
        grid,
        np.concatenate(times),
        np.concatenate(us),
        np.concatenate(ds),
        tuple(breaks),
        tuple(records),
        blowup,
    )


# -- the Duhamel map ----------------------------------------------------


def _window_taus(times: np.ndarray) -> tuple[float, tuple]:
    h = float(times[-1] - times[0])
    taus = (times - times[0]) / h
    taus[0], taus[-1] = 0.0, 1.0
    return h, tuple(np.round(taus, 15).tolist())


def _apply_window(grid, u_init, d_init, U, D, times, mode, zero_nonlinearity=False):
    """One application of the Duhamel map on a single window.

    Returns the new node values together with the interpolated nonlinear
    terms (so callers can estimate the time-interpolation error).
    """
    h, taus = _window_taus(times)
    E, W, _ = _window_operator(grid, h, taus)
    n = grid.dimension
    U_new = E[:, None] * u_init[None]
    D_new = E[:, None] * d_init[None]
    if zero_nonlinearity:
        return U_new, D_new, np.zeros_like(U), np.zeros_like(D)
    mom, dn = nonlinear_coeffs(grid, U, D, mode)
    Nu = -project_coeffs(grid, mom)
    U_new = U_new + _einsum_nodes(W, Nu, n)
    D_new = D_new + _einsum_nodes(W, dn, n)
    return U_new, D_new, Nu, dn


def _check_initial(u0: VectorField, d0: VectorField) -> None:
    if u0.grid != d0.grid:
        raise ValueError("u0 and d0 live on different grids")
    if u0.comp_shape != (u0.grid.dimension,):
        raise ValueError(f"u0 must have {u0.grid.dimension} components")
    if d0.comp_shape != (3,):
        raise ValueError("d0 must have 3 components")
    res = divergence_residual(u0)
    if res > DIV_TOL * max(1.0, sup_norm(u0)):
        raise ValueError(f"u0 is not divergence-free (residual {res:.3e})")


def duhamel_map(u0: VectorField, d0: VectorField, traj: Trajectory, mode: str = "two_thirds",
                zero_nonlinearity: bool = False) -> Trajectory:
    """Apply the map S to ``traj``: free evolution of the data plus Duhamel integrals.

    The integrals run from the first node of ``traj``.  For a multi-window
    trajectory each window continues from the previous window's output at
    its last node, which is the same integral split at the window boundary.
    """
    _check_initial(u0, d0)
    if traj.grid != u0.grid:
        raise ValueError("trajectory and data live on different grids")
    U_out = np.empty_like(traj.u_hat)
    D_out = np.empty_like(traj.d_hat)
    u_init, d_init = u0.coeffs, d0.coeffs
    for a, b in traj.window_slices():
        if a == b:
            U_out[a], D_out[a] = u_init, d_init
            continue
        sl = slice(a, b + 1)
        U, D, _, _ = _apply_window(traj.grid, u_init, d_init, traj.u_hat[sl], traj.d_hat[sl],
                                   traj.times[sl], mode, zero_nonlinearity)
        U_out[sl], D_out[sl] = U, D
        u_init, d_init = U[-1], D[-1]
    return replace(traj, u_hat=U_out, d_hat=D_out, records=(), blowup=False)


def node_distances(grid: SpectralGrid, du: np.ndarray, dd: np.ndarray) -> np.ndarray:
    """Per node ``sup|du| + ||dd||_{W^{1,inf}}`` for batched coefficient differences."""
    out = _sup_batch(grid, du) + _sup_batch(grid, dd)
    for axis in range(grid.dimension):
        out = out + _sup_batch(grid, dd * grid.dvec[axis])
    return out


def _sup_batch(grid: SpectralGrid, coeffs: np.ndarray) -> np.ndarray:
    """Oversampled sup of the vector magnitude, one value per leading index."""
    vals = grid.sample(coeffs, OVERSAMPLE)  # (m, c, *X)
    mag = np.sqrt(np.sum(vals**2, axis=1))
    return mag.reshape(mag.shape[0], -1).max(axis=1)


def trajectory_distance(a: Trajectory, b: Trajectory) -> float:
    """Sup over nodes of ``sup|u_a - u_b| + ||d_a - d_b||_{W^{1,inf}}``."""
    if a.grid != b.grid or a.nt != b.nt:
        raise ValueError("trajectories are not node-compatible")
    return float(np.max(node_distances(a.grid, a.u_hat - b.u_hat, a.d_hat - b.d_hat)))


# -- constants ------------------------------------------------------------


def initial_amplitude(u0: VectorField, d0: VectorField) -> float:
    """``||u0||_inf + ||grad d0||_inf``."""
    return sup_norm(u0) + derivative_norm(d0, 1)


def existence_time_estimate(u0: VectorField, d0: VectorField, C_star: float = 1.0,
                            T_max: float = 1.0) -> float:
    """``T0 = (4 C_star (||u0||_inf + ||grad d0||_inf))^-2``, capped at ``T_max``."""
    if u0.grid != d0.grid:
        raise ValueError("u0 and d0 live on different grids")
    A = initial_amplitude(u0, d0)
    if A <= 1e-300:
        return float(T_max)
    return min(float(T_max), (1.0 / (4.0 * C_star * A)) ** 2)


def solver_constants(u0: VectorField, d0: VectorField, C_star: float = 1.0,
                     T_max: float = math.inf) -> SolverConstants:
    """K_star, T_star and T0 for the data, with regularity index k = 0."""
    w0 = sobolev_inf_norm(u0, 0)
    w1 = sobolev_inf_norm(d0, 1)
    K = 2.0 * C_star * (w0 + w1)
    KK = K + K * K
    if KK > 0:
        T_star = min(1.0 / (4.0 * C_star * KK), 1.0 / (16.0 * C_star**2 * KK**2))
    else:
        T_star = math.inf
    return SolverConstants(
        C_star=C_star,
        K_star=K,
        T_star=T_star,
        T0=existence_time_estimate(u0, d0, C_star, T_max),
        sup_u0=sup_norm(u0),
        sup_grad_d0=derivative_norm(d0, 1),
        w0_u0=w0,
        w1_d0=w1,
    )


# -- Picard iteration ---------------------------------------------------


def picard_solve(u0: VectorField, d0: VectorField, T: float, cfg: SolverConfig | None = None,
                 t0: float = 0.0, warn: bool = True) -> tuple[Trajectory, PicardRecord]:
    """Iterate the Duhamel map from the free evolution until successive iterates agree.

    Raises :class:`PicardNonConvergence` when ``cfg.max_iter`` is exhausted and
    :class:`PicardDivergence` on non-finite or exploding iterates; both carry
    the :class:`PicardRecord`.
    """
    cfg = cfg or SolverConfig()
    _check_initial(u0, d0)
    if not (T > 0 and math.isfinite(T)):
        raise ValueError(f"window length must be positive and finite, got {T}")
    grid = u0.grid
    if warn:
        consts = solver_constants(u0, d0, cfg.C_star)
        if T > consts.T_star:
            warnings.warn(
                f"window {T:.3e} exceeds T_star={consts.T_star:.3e}; contraction is not guaranteed",
                ExistenceWindowWarning,
                stacklevel=2,
            )
    times = t0 + T * lobatto_nodes(cfg.nodes)
    h, taus = _window_taus(times)
    E, _, decay = _window_operator(grid, h, taus)
    U = E[:, None] * u0.coeffs[None]
    D = E[:, None] * d0.coeffs[None]

    record = PicardRecord(window=(float(times[0]), float(times[-1])))
    scale = sup_norm(u0) + sobolev_inf_norm(d0, 1)
    floor = 1e-12 * max(scale, 1.0)
    Nu = dn = None
    for _ in range(cfg.max_iter):
        U_new, D_new, Nu, dn = _apply_window(grid, u0.coeffs, d0.coeffs, U, D, times, cfg.dealias_mode)
        if not (np.all(np.isfinite(U_new)) and np.all(np.isfinite(D_new))):
            raise PicardDivergence("non-finite Picard iterate", record)
        dist = float(np.max(node_distances(grid, U_new - U, D_new - D)))
        if record.distances and record.distances[-1] > floor:
            record.ratios.append(dist / record.distances[-1])
        record.distances.append(dist)
        U, D = U_new, D_new
        if dist <= cfg.tol:
            record.converged = True
            break
        if len(record.distances) > 2 and dist > cfg.divergence_factor * max(record.distances[0], floor):
            raise PicardDivergence(f"Picard iterates exploded (distance {dist:.3e})", record)
    if not record.converged:
        raise PicardNonConvergence(
            f"no convergence in {cfg.max_iter} iterations on window of length {T:.3e} "
            f"(last distance {record.distances[-1]:.3e})",
            record,
        )
    record.quadrature_error = _quadrature_error(grid, Nu, dn, decay)
    return Trajectory(grid, times, U, D), record


def _quadrature_error(grid: SpectralGrid, Nu: np.ndarray, dn: np.ndarray, decay: np.ndarray) -> float:
    """Bound on the time-interpolation error of one window's Duhamel integrals.

    Uses the last two Chebyshev coefficients of the interpolated nonlinear
    terms, integrated against the heat factor and summed over modes (a
    sup-norm bound); the director part also carries first derivatives.
    """
    tail_u = chebyshev_tail(Nu)
    tail_d = chebyshev_tail(dn)
    grad_w = 1.0 + sum(np.abs(k) for k in grid.kvec)
    eu = 2.0 * np.sum(decay * np.sqrt(np.sum(tail_u**2, axis=0)))
    ed = 2.0 * np.sum(decay * grad_w * np.sqrt(np.sum(tail_d**2, axis=0)))
    return float(eu + ed)


def _renormalize(grid: SpectralGrid, d_hat: np.ndarray) -> np.ndarray:
    d = grid.inverse(d_hat)
    mag = np.sqrt(np.sum(d**2, axis=0))
    return grid.forward(d / np.where(mag > 0, mag, 1.0))


def march(u0: VectorField, d0: VectorField, T_total: float, cfg: SolverConfig | None = None) -> Trajectory:
    """Cover ``[0, T_total]`` by consecutive Picard windows.

    Each window has length ``min(safety * T0, remaining, max_window)`` with T0
    re-estimated from the state at the window start; a failing window is
    retried at half length up to ``cfg.retries`` times.  If T0 drops below
    ``cfg.min_window`` marching stops and the result carries ``blowup=True``.
    """
    cfg = cfg or SolverConfig()
    _check_initial(u0, d0)
    grid = u0.grid
    t = 0.0
    u, d = u0, d0
    pieces, records = [], []
    blowup = False
    eps = 1e-13 * max(1.0, T_total)
    while T_total - t > eps:
        T0 = existence_time_estimate(u, d, cfg.C_star, cfg.T_max)
        if T0 < cfg.min_window or len(records) >= cfg.max_windows:
            logger.warning("stopping at t=%.6g: T0=%.3e, windows=%d", t, T0, len(records))
            blowup = True
            break
        h = min(cfg.safety * T0, T_total - t, cfg.max_window)
        if T_total - t - h < eps:
            h = T_total - t
        attempt = 0
        while True:
            try:
                piece, rec = picard_solve(u, d, h, cfg, t0=t, warn=False)
                break
            except SolverError as exc:
                attempt += 1
                if attempt > cfg.retries or h / 2 < cfg.min_window:
                    partial = concatenate(pieces, records, True) if pieces else None
                    raise MarchError(
                        f"window {len(records)} at t={t:.6g} failed after {attempt} attempts: {exc}",
                        exc.record, len(records), t, partial,
                    ) from exc
                h /= 2
        records.append(WindowRecord(len(records), t, h, T0, sup_norm(u), derivative_norm(d, 1), rec))
        logger.debug("window %d [%.6g, %.6g] iterations=%d", len(records) - 1, t, t + h, rec.iterations)
        if cfg.renormalize:
            D = np.array(piece.d_hat)
            D[-1] = _renormalize(grid, D[-1])
            piece = piece.with_states(piece.u_hat, D)
        pieces.append(piece)
        t = float(piece.times[-1])
        u = VectorField(grid, piece.u_hat[-1], "velocity")
        d = VectorField(grid, piece.d_hat[-1], "director")
    if not pieces:
        return Trajectory(grid, np.array([0.0]), u0.coeffs[None].copy(), d0.coeffs[None].copy(),
                          (0,), (), blowup)
    return concatenate(pieces, records, blowup)
