"""Monitors and blow-up quantities computed from a solved trajectory.

Everything here is read-only over its inputs.  Quantities tied to the
vorticity direction are only defined in three dimensions; in 2D they come
back marked not applicable together with scalar vorticity statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, spatial

from .fields import (
    OVERSAMPLE,
    VectorField,
    _check_order,
    derivative_norm,
    divergence_residual,
    pointwise_magnitude,
    sup_norm,
)
from .spectral import SpectralGrid, curl_coeffs, grad_coeffs

NOT_APPLICABLE = "not applicable"


@dataclass(frozen=True)
class BlowupWindowConfig:
    """Vorticity threshold and integrability exponents for the direction criterion.

    ``a`` and ``b`` must satisfy ``2 <= a < inf`` and ``2/a + 3/b <= 1``.
    """

    sigma: float
    a: float = 4.0
    b: float = 6.0
    t_blow: float | None = None

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be a positive number, got {self.sigma}")
        if not (2.0 <= self.a < math.inf):
            raise ValueError(f"exponent a must satisfy 2 <= a < inf, got {self.a}")
        if not self.b > 0:
            raise ValueError(f"exponent b must be positive, got {self.b}")
        if 2.0 / self.a + 3.0 / self.b > 1.0 + 1e-12:
            raise ValueError(
                f"exponents violate 2/a + 3/b <= 1: 2/{self.a} + 3/{self.b} = "
                f"{2.0 / self.a + 3.0 / self.b:.4f}"
            )


# -- pointwise monitors -------------------------------------------------


def unit_length_deviation(d: VectorField, factor: int = OVERSAMPLE) -> float:
    """Max over the oversampled grid of ``| |d| - 1 |``."""
    if d.comp_shape != (3,):
        raise ValueError("unit-length deviation needs a 3-component director")
    mag = pointwise_magnitude(d.sample(factor), d.grid.dimension)
    return float(np.max(np.abs(mag - 1.0)))


def unit_length_excess(d: VectorField, factor: int = OVERSAMPLE) -> float:
    """Max of ``(|d| - 1)_+``, the one-sided quantity bounded by the maximum principle."""
    mag = pointwise_magnitude(d.sample(factor), d.grid.dimension)
    return float(max(np.max(mag - 1.0), 0.0))


@dataclass
class SmoothingTable:
    order: int
    times: np.ndarray
    u_products: np.ndarray
    d_products: np.ndarray
    flagged: bool
    growth_limit: float = 10.0

    def as_dict(self) -> dict:
        return {
            "order": self.order,
            "times": self.times.tolist(),
            "u_products": self.u_products.tolist(),
            "d_products": self.d_products.tolist(),
            "flagged": bool(self.flagged),
            "bound_u": float(np.max(self.u_products, initial=0.0)),
            "bound_d": float(np.max(self.d_products, initial=0.0)),
        }


def smoothing_rate_check(traj, order: int, growth_limit: float = 10.0) -> SmoothingTable:
    """Tabulate ``s^{l/2} |grad^l u|_inf`` and ``s^{l/2} |grad^{l+1} d|_inf``, ``s = t - t0``.

    The flag is raised when either product grows by more than ``growth_limit``
    between consecutive nodes of positive age.
    """
    _check_order(traj.grid, order + 1)
    t0 = traj.t0
    rows_t, pu, pd = [], [], []
    for i in range(traj.nt):
        s = float(traj.times[i] - t0)
        if s <= 0:
            continue
        w = s ** (order / 2.0)
        rows_t.append(float(traj.times[i]))
        pu.append(w * derivative_norm(traj.u(i), order))
        pd.append(w * derivative_norm(traj.d(i), order + 1))
    pu, pd = np.array(pu), np.array(pd)
    flagged = _grows(pu, growth_limit) or _grows(pd, growth_limit)
    return SmoothingTable(order, np.array(rows_t), pu, pd, flagged, growth_limit)


def _grows(p: np.ndarray, limit: float) -> bool:
    if p.size < 2:
        return False
    floor = 1e-12 * max(float(np.max(p)), 1e-300)
    prev, nxt = p[:-1], p[1:]
    ok = prev > floor
    return bool(np.any(nxt[ok] > limit * prev[ok]))


# -- vorticity direction --------------------------------------------------


@dataclass
class VorticityDirection:
    """Vorticity, its superlevel mask and direction on the 2x oversampled grid."""

    applicable: bool
    omega: VectorField
    magnitude: np.ndarray
    mask: np.ndarray
    zeta: np.ndarray | None
    sigma: float
    factor: int = OVERSAMPLE

    @property
    def stats(self) -> dict:
        mag = self.magnitude
        return {
            "max_vorticity": float(np.max(mag)),
            "mean_vorticity": float(np.mean(mag)),
            "mask_fraction": float(np.mean(self.mask)),
            "direction": "available" if self.applicable else NOT_APPLICABLE,
        }


def vorticity_direction(u: VectorField, sigma: float, factor: int = OVERSAMPLE) -> VorticityDirection:
    """``omega = curl u``, ``mask = {|omega| > sigma}`` and ``zeta = omega/|omega|`` on the mask.

    Off the mask ``zeta`` is zero.  In 2D the vorticity is a scalar and no
    direction field exists; the result then has ``applicable=False``.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    grid = u.grid
    omega = VectorField(grid, curl_coeffs(grid, u.coeffs))
    vals = omega.sample(factor)
    mag = pointwise_magnitude(vals, grid.dimension)
    mask = mag > sigma
    if grid.dimension == 2:
        return VorticityDirection(False, omega, mag, mask, None, sigma, factor)
    safe = np.where(mask, mag, 1.0)
    zeta = np.where(mask[None], vals / safe[None], 0.0)
    return VorticityDirection(True, omega, mag, mask, zeta, sigma, factor)


# -- modulus of continuity ------------------------------------------------


@dataclass
class ModulusTable:
    """``eta[i]`` bounds ``|f(x) - f(y)|`` over sampled pairs with ``|x - y| <= radii[i]``."""

    radii: np.ndarray
    eta: np.ndarray
    exact: bool
    points: int

    def __len__(self) -> int:
        return self.radii.size

    def as_dict(self) -> dict:
        return {"radii": self.radii.tolist(), "eta": self.eta.tolist(), "exact": self.exact,
                "points": self.points}


def log_bins(spacing: float, period: float, dimension: int, count: int = 16) -> np.ndarray:
    """Logarithmic radii from one grid cell to the largest periodic distance."""
    rmax = 0.5 * period * math.sqrt(dimension)
    if count == 1:
        return np.array([rmax])
    return np.geomspace(spacing, rmax, count)


def modulus_from_samples(values: np.ndarray, period: float, mask: np.ndarray | None = None,
                         bins=16, max_exact: int = 4096, pairs: int = 10**6,
                         seed: int = 0) -> ModulusTable:
    """Sampled modulus of continuity of gridded ``values`` (components first).

    Distances use the periodic minimum image.  Up to ``max_exact`` points every
    pair is visited; beyond that ``pairs`` uniformly drawn pairs are used.  The
    table is made monotone by a running maximum over increasing radii.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim < 2:
        raise ValueError("samples need a leading component axis")
    n = values.ndim - 1
    shape = values.shape[1:]
    spacing = period / shape[0]
    if mask is None:
        mask = np.ones(shape, dtype=bool)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} does not match samples {shape}")
    radii = np.asarray(bins, dtype=float) if np.ndim(bins) else log_bins(spacing, period, n, int(bins))
    idx = np.argwhere(mask)
    count = idx.shape[0]
    if count == 0:
        return ModulusTable(radii[:0], np.zeros(0), True, 0)
    pos = idx * spacing
    vals = values[(slice(None),) + tuple(idx.T)].T  # (count, c)
    best = np.zeros(radii.size)

    def accumulate(a, b):
        delta = np.abs(pos[a] - pos[b])
        delta = np.minimum(delta, period - delta)
        dist = np.sqrt(np.sum(delta**2, axis=-1))
        diff = np.sqrt(np.sum((vals[a] - vals[b]) ** 2, axis=-1))
        slot = np.searchsorted(radii, dist * (1 - 1e-12), side="left")
        keep = slot < radii.size
        np.maximum.at(best, slot[keep], diff[keep])

    exact = count <= max_exact
    if exact:
        chunk = max(1, 2_000_000 // count)
        all_idx = np.arange(count)
        for start in range(0, count, chunk):
            rows = np.arange(start, min(start + chunk, count))
            a = np.repeat(rows, count)
            b = np.tile(all_idx, rows.size)
            sel = b > a
            accumulate(a[sel], b[sel])
    else:
        rng = np.random.default_rng(seed)
        for start in range(0, pairs, 1_000_000):
            size = min(1_000_000, pairs - start)
            a = rng.integers(0, count, size)
            b = rng.integers(0, count, size)
            accumulate(a, b)
    return ModulusTable(radii, np.maximum.accumulate(best), exact, count)


def modulus_of_continuity(f: VectorField, mask: np.ndarray | None = None, factor: int = 1,
                          **kwargs) -> ModulusTable:
    """Modulus table of ``f`` sampled on the ``factor``-refined grid (full grid if no mask)."""
    vals = f.sample(factor) if factor > 1 else f.values
    if vals.ndim == f.grid.dimension:
        vals = vals[None]
    return modulus_from_samples(vals, f.grid.period, mask, **kwargs)


# -- type I rate ----------------------------------------------------------


@dataclass
class TypeOneRate:
    C_est: float
    classification: str
    products: np.ndarray
    trend: float

    def as_dict(self) -> dict:
        return {"C_est": self.C_est, "classification": self.classification, "trend": self.trend,
                "products": self.products.tolist()}


def type_one_rate(norm_series, t_blow: float, growth: float = 10.0) -> TypeOneRate:
    """Estimate C in ``|u|_inf + |grad d|_inf <= C (t_blow - t)^{-1/2}``.

    Products ``(t_blow - t)^{1/2} s(t)`` are compared at the last sample against
    their median: above ``growth`` times the median the series is
    super-type-I, below ``1/growth`` it is bounded, otherwise type-I consistent.
    """
    arr = np.asarray(norm_series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ValueError("norm series must be a non-empty list of (t, value) pairs")
    t, s = arr[:, 0], arr[:, 1]
    if np.any(t >= t_blow):
        raise ValueError("all sample times must precede t_blow")
    order = np.argsort(t)
    P = np.sqrt(t_blow - t[order]) * s[order]
    C = float(np.max(P))
    med = float(np.median(P))
    trend = float(P[-1] / med) if med > 0 else (math.inf if P[-1] > 0 else 0.0)
    if trend > growth:
        label = "super-type-I"
    elif trend < 1.0 / growth:
        label = "bounded"
    else:
        label = "type-I-consistent"
    return TypeOneRate(C, label, P, trend)


# -- direction gradient integral ------------------------------------------


def _nearest_extension(zeta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill off-mask points with the value of the periodically nearest mask point.

    Equidistant mask points are averaged, so the fill commutes with grid
    rotations and reflections instead of depending on scan order.
    """
    shape = mask.shape
    on = np.argwhere(mask)
    off = np.argwhere(~mask)
    # exact ties: squared index distances are integers
    tree = spatial.cKDTree(on, boxsize=shape)
    dist, _ = tree.query(off)
    groups = tree.query_ball_point(off, dist + 1e-9)
    counts = np.array([len(g) for g in groups])
    members = np.concatenate([np.asarray(g, dtype=np.int64) for g in groups])
    src = zeta[(slice(None),) + tuple(on.T)]  # (c, count_on)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    fill = np.add.reduceat(src[:, members], starts, axis=1) / counts
    out = np.array(zeta, dtype=float, copy=True)
    out[(slice(None),) + tuple(off.T)] = fill
    return out


def _eroded(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for ax in range(mask.ndim):
        out &= np.roll(mask, 1, axis=ax) & np.roll(mask, -1, axis=ax)
    return out


def direction_gradient_norm(zeta: np.ndarray, mask: np.ndarray, period: float, b: float) -> float:
    """``||grad zeta||_{L^b}`` over the one-cell-eroded mask.

    ``zeta`` holds the direction samples (components first) on a uniform
    periodic grid; it is extended off the mask by nearest values and
    differentiated spectrally.
    """
    if not np.any(mask):
        return 0.0
    n = mask.ndim
    N = mask.shape[0]
    fine = SpectralGrid(n, N, period)
    ext = zeta if np.all(mask) else _nearest_extension(zeta, mask)
    grad = fine.inverse(grad_coeffs(fine, fine.forward(ext)))  # (c, n, *X)
    mag = pointwise_magnitude(grad, n)
    inner = _eroded(mask)
    cell = (period / N) ** n
    return float((np.sum(mag[inner] ** b) * cell) ** (1.0 / b))


def direction_gradient_integral_from_fields(times, zetas, masks, period: float, a: float, b: float) -> float:
    """Trapezoid in time of ``||grad zeta(t)||_{L^b(mask(t))}^a``."""
    times = np.asarray(times, dtype=float)
    vals = np.array([direction_gradient_norm(z, m, period, b) ** a for z, m in zip(zetas, masks)])
    if times.size < 2:
        return 0.0
    return float(integrate.trapezoid(vals, times))


def direction_gradient_integral(traj, cfg: BlowupWindowConfig) -> float:
    """Time integral of the direction-gradient norm over the strong-vorticity set."""
    if traj.grid.dimension != 3:
        raise ValueError("direction gradient integral is defined for 3D trajectories only")
    zetas, masks = [], []
    for i in range(traj.nt):
        vd = vorticity_direction(traj.u(i), cfg.sigma)
        zetas.append(vd.zeta)
        masks.append(vd.mask)
    return direction_gradient_integral_from_fields(traj.times, zetas, masks, traj.grid.period, cfg.a, cfg.b)


# -- full report ------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsConfig:
    sigma: float = 1.0
    a: float = 4.0
    b: float = 6.0
    t_blow: float | None = None
    eta_bins: int = 16
    eta_samples: int = 4
    smoothing_order: int = 1
    growth: float = 10.0
    seed: int = 0

    def window(self) -> BlowupWindowConfig:
        return BlowupWindowConfig(self.sigma, self.a, self.b, self.t_blow)


@dataclass
class DiagnosticsReport:
    times: np.ndarray
    sup_u: np.ndarray
    sup_grad_d: np.ndarray
    unit_deviation: np.ndarray
    divergence_residual: np.ndarray
    smoothing: SmoothingTable
    eta_d: list = field(default_factory=list)
    eta_zeta: list = field(default_factory=list)
    type_one: TypeOneRate | None = None
    direction_integral: float | str = NOT_APPLICABLE
    vorticity: list = field(default_factory=list)

    def csv_rows(self):
        for row in zip(self.times, self.sup_u, self.sup_grad_d, self.unit_deviation, self.divergence_residual):
            yield tuple(float(x) for x in row)

    def as_dict(self) -> dict:
        def running(tables):
            if not tables:
                return []
            return np.max(np.stack([t.eta for _, t in tables]), axis=0).tolist()

        return {
            "times": self.times.tolist(),
            "sup_u": self.sup_u.tolist(),
            "sup_grad_d": self.sup_grad_d.tolist(),
            "unit_deviation": self.unit_deviation.tolist(),
            "divergence_residual": self.divergence_residual.tolist(),
            "max_unit_deviation": float(np.max(self.unit_deviation)),
            "smoothing": self.smoothing.as_dict(),
            "eta_d": [{"t": t, **tab.as_dict()} for t, tab in self.eta_d],
            "eta_d_running_max": running(self.eta_d),
            "eta_zeta": [{"t": t, **tab.as_dict()} for t, tab in self.eta_zeta]
            if self.eta_zeta != NOT_APPLICABLE else NOT_APPLICABLE,
            "type_one": self.type_one.as_dict() if self.type_one else NOT_APPLICABLE,
            "direction_integral": self.direction_integral,
            "vorticity": self.vorticity,
        }


def norm_series(traj) -> np.ndarray:
    """Rows ``(t, |u|_inf + |grad d|_inf)`` for every node."""
    return np.array([(float(traj.times[i]), sup_norm(traj.u(i)) + derivative_norm(traj.d(i), 1))
                     for i in range(traj.nt)])


def diagnose(traj, cfg: DiagnosticsConfig | None = None) -> DiagnosticsReport:
    """Run every monitor over ``traj``."""
    cfg = cfg or DiagnosticsConfig()
    times = np.asarray(traj.times)
    su, sg, dev, div = [], [], [], []
    for i in range(traj.nt):
        u, d = traj.u(i), traj.d(i)
        su.append(sup_norm(u))
        sg.append(derivative_norm(d, 1))
        dev.append(unit_length_deviation(d))
        div.append(divergence_residual(u))
    order = min(cfg.smoothing_order, traj.grid.modes_per_axis // 3 - 1)
    report = DiagnosticsReport(
        times=times,
        sup_u=np.array(su),
        sup_grad_d=np.array(sg),
        unit_deviation=np.array(dev),
        divergence_residual=np.array(div),
        smoothing=smoothing_rate_check(traj, order, cfg.growth),
    )
    picks = np.unique(np.linspace(0, traj.nt - 1, max(1, cfg.eta_samples)).round().astype(int))
    three_d = traj.grid.dimension == 3
    for i in picks:
        t = float(times[i])
        report.eta_d.append((t, modulus_of_continuity(traj.d(i), bins=cfg.eta_bins, seed=cfg.seed)))
        vd = vorticity_direction(traj.u(i), cfg.sigma)
        report.vorticity.append({"t": t, **vd.stats})
        if three_d and np.any(vd.mask):
            tab = modulus_from_samples(vd.zeta, traj.grid.period, vd.mask, bins=cfg.eta_bins, seed=cfg.seed)
            report.eta_zeta.append((t, tab))
    if not three_d:
        report.eta_zeta = NOT_APPLICABLE
    else:
        report.direction_integral = direction_gradient_integral(traj, cfg.window())
    if cfg.t_blow is not None and np.any(times < cfg.t_blow):
        series = np.column_stack([times, report.sup_u + report.sup_grad_d])
        report.type_one = type_one_rate(series[times < cfg.t_blow], cfg.t_blow, cfg.growth)
    return report
