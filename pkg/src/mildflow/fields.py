"""Velocity and director fields, discrete sup/Sobolev norms, nonlinear terms."""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .spectral import SpectralGrid, curl_coeffs, div_coeffs, grad_coeffs

ROLES = ("generic", "velocity", "director")
OVERSAMPLE = 2
DIV_TOL = 1e-10


class VectorField:
    """A field on a :class:`SpectralGrid` held by its Fourier coefficients.

    ``coeffs`` has shape ``comp_shape + grid.spectral_shape``; ``comp_shape`` is
    ``()`` for scalars, ``(c,)`` for vectors and ``(c, n)`` for gradients.
    Physical samples are materialized on first access and cached.  The object
    is immutable: arrays are flagged read-only.

    Roles carry invariants checked on construction: a ``velocity`` has ``n``
    components and vanishing divergence, a ``director`` has 3 components in
    any dimension.
    """

    __slots__ = ("grid", "coeffs", "role", "_values", "_lock")

    def __init__(self, grid: SpectralGrid, coeffs, role: str = "generic"):
        coeffs = np.array(coeffs, dtype=complex)
        n = grid.dimension
        if coeffs.shape[coeffs.ndim - n :] != grid.spectral_shape:
            raise ValueError(
                f"coefficient shape {coeffs.shape} does not end in {grid.spectral_shape}"
            )
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        coeffs.flags.writeable = False
        self.grid = grid
        self.coeffs = coeffs
        self.role = role
        self._values = None
        self._lock = threading.Lock()
        if role == "velocity":
            if self.comp_shape != (n,):
                raise ValueError(f"velocity needs {n} components, got {self.comp_shape}")
            res = divergence_residual(self)
            scale = max(float(np.max(np.abs(self.values))), 1.0)
            if res > DIV_TOL * scale:
                raise ValueError(f"velocity is not divergence-free (residual {res:.3e})")
        elif role == "director" and self.comp_shape != (3,):
            raise ValueError(f"director needs 3 components, got {self.comp_shape}")

    @classmethod
    def from_values(cls, grid: SpectralGrid, values, role: str = "generic") -> "VectorField":
        values = np.asarray(values, dtype=float)
        if values.shape[values.ndim - grid.dimension :] != grid.shape:
            raise ValueError(f"sample shape {values.shape} does not end in {grid.shape}")
        out = cls(grid, grid.forward(values), role)
        # the given samples are the primary data; keep them bit for bit
        kept = values.copy()
        kept.flags.writeable = False
        out._values = kept
        return out

    @property
    def comp_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[: self.coeffs.ndim - self.grid.dimension]

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            with self._lock:
                if self._values is None:
                    v = self.grid.inverse(self.coeffs)
                    v.flags.writeable = False
                    self._values = v
        return self._values

    def sample(self, factor: int = OVERSAMPLE) -> np.ndarray:
        return self.grid.sample(self.coeffs, factor)

    def with_coeffs(self, coeffs, role: str | None = None) -> "VectorField":
        return VectorField(self.grid, coeffs, self.role if role is None else role)

    def __getitem__(self, i) -> "VectorField":
        return VectorField(self.grid, self.coeffs[i])

    def _combine(self, other, op) -> "VectorField":
        if isinstance(other, VectorField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return VectorField(self.grid, op(self.coeffs, other.coeffs))
        return NotImplemented

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __neg__(self):
        return VectorField(self.grid, -self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, VectorField):
            return NotImplemented
        return VectorField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return VectorField(self.grid, self.coeffs / scalar)

    def __repr__(self) -> str:
        return f"VectorField(role={self.role!r}, comp_shape={self.comp_shape}, grid={self.grid})"


@dataclass(frozen=True)
class StatePair:
    """The pair (velocity, director) at one instant."""

    u: VectorField
    d: VectorField
    t: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.d.grid:
            raise ValueError("u and d must share a grid")

    @property
    def grid(self) -> SpectralGrid:
        return self.u.grid


def constant_field(grid: SpectralGrid, vector, role: str = "generic") -> VectorField:
    vector = np.asarray(vector, dtype=float)
    coeffs = np.zeros(vector.shape + grid.spectral_shape, dtype=complex)
    coeffs[(Ellipsis,) + (0,) * grid.dimension] = vector
    return VectorField(grid, coeffs, role)


# -- norms --------------------------------------------------------------


def pointwise_magnitude(values: np.ndarray, n: int) -> np.ndarray:
    """Euclidean (Frobenius for tensors) magnitude over all component axes."""
    comp_axes = tuple(range(values.ndim - n))
    if not comp_axes:
        return np.abs(values)
    return np.sqrt(np.sum(values**2, axis=comp_axes))


def _sup_coeffs(grid: SpectralGrid, coeffs: np.ndarray, factor: int = OVERSAMPLE) -> float:
    return float(np.max(pointwise_magnitude(grid.sample(coeffs, factor), grid.dimension)))


def sup_norm(f: VectorField, factor: int = OVERSAMPLE) -> float:
    """Max of the pointwise magnitude over a ``factor``-times oversampled grid."""
    return _sup_coeffs(f.grid, f.coeffs, factor)


def multi_indices(n: int, order: int):
    """All ``beta`` in N_0^n with ``|beta| == order``."""
    for combo in itertools.combinations_with_replacement(range(n), order):
        beta = [0] * n
        for axis in combo:
            beta[axis] += 1
        yield tuple(beta)


def derivative_coeffs(grid: SpectralGrid, coeffs: np.ndarray, beta) -> np.ndarray:
    mult = 1.0
    for axis, p in enumerate(beta):
        if p:
            mult = mult * grid.dvec[axis] ** p
    return coeffs * mult


def _check_order(grid: SpectralGrid, k: int) -> None:
    if k < 0:
        raise ValueError(f"derivative order must be nonnegative, got {k}")
    if 3 * k > grid.modes_per_axis:
        raise ValueError(f"derivative order {k} exceeds N/3 = {grid.modes_per_axis / 3:.2f}")


def sobolev_inf_norm(f: VectorField, k: int) -> float:
    """``sum_{|beta| <= k} sup_norm(d^beta f)`` with spectral derivatives."""
    _check_order(f.grid, k)
    total = 0.0
    for order in range(k + 1):
        for beta in multi_indices(f.grid.dimension, order):
            total += _sup_coeffs(f.grid, derivative_coeffs(f.grid, f.coeffs, beta))
    return total


def derivative_norm(f: VectorField, order: int, factor: int = OVERSAMPLE) -> float:
    """Sup of ``|nabla^order f|``, the Frobenius norm over all ordered index tuples."""
    _check_order(f.grid, order)
    grid, n = f.grid, f.grid.dimension
    acc = None
    for beta in multi_indices(n, order):
        weight = math.factorial(order) / math.prod(math.factorial(b) for b in beta)
        vals = grid.sample(derivative_coeffs(grid, f.coeffs, beta), factor)
        sq = weight * pointwise_magnitude(vals, n) ** 2
        acc = sq if acc is None else acc + sq
    return float(np.sqrt(np.max(acc)))


def divergence_residual(u: VectorField) -> float:
    """Collocation max of ``|div u|`` computed spectrally."""
    return float(np.max(np.abs(u.grid.inverse(div_coeffs(u.grid, u.coeffs)))))


def vorticity_coeffs(u: VectorField) -> np.ndarray:
    return curl_coeffs(u.grid, u.coeffs)


# -- nonlinear terms ----------------------------------------------------

DEALIAS_MODES = ("two_thirds", "padded")


def _components(a: np.ndarray, n: int, count: int) -> list[np.ndarray]:
    return [a[(Ellipsis, i) + (slice(None),) * n] for i in range(count)]


def nonlinear_coeffs(
    grid: SpectralGrid, u_hat: np.ndarray, d_hat: np.ndarray, mode: str = "two_thirds"
) -> tuple[np.ndarray, np.ndarray]:
    """Both nonlinear terms for batched coefficients.

    Returns ``(div(u (x) u + grad d (.) grad d), |grad d|^2 d - (u . grad) d)`` as
    coefficient arrays shaped like ``u_hat`` and ``d_hat``.  In ``two_thirds``
    mode the inputs are truncated to ``|k| <= N/3`` first, quadratic products
    are formed on the native grid and the cubic term on the 2x grid, which
    makes every retained mode alias-free.  ``padded`` skips the input
    truncation and forms every product on the 2x grid.
    """
    if mode not in DEALIAS_MODES:
        raise ValueError(f"dealias mode must be one of {DEALIAS_MODES}, got {mode!r}")
    n = grid.dimension
    mask = grid.dealias_mask
    if mode == "two_thirds":
        u_hat = u_hat * mask
        d_hat = d_hat * mask
        quad = 1
    else:
        quad = 2
    G_hat = grad_coeffs(grid, d_hat)  # (..., 3, n, *s)

    def to_phys(c, factor):
        return grid.sample(c, factor)

    def to_coeffs(v, factor):
        return grid.truncate(sfft.rfftn(v, axes=grid.axes, norm="forward"), factor)

    # quadratic stress and advection
    u = _components(to_phys(u_hat, quad), n, n)
    G = to_phys(G_hat, quad)
    Gc = [_components(G[(Ellipsis, a) + (slice(None),) * (n + 1)], n, n) for a in range(3)]
    # Gc[a][i] = d_i d_a
    stress = []
    for i in range(n):
        row = []
        for j in range(n):
            s = u[i] * u[j]
            for a in range(3):
                s = s + Gc[a][i] * Gc[a][j]
            row.append(s)
        stress.append(np.stack(row, axis=-n - 1))
    stress = np.stack(stress, axis=-n - 2)
    mom_hat = div_coeffs(grid, to_coeffs(stress, quad))
    adv = np.stack([sum(u[i] * Gc[a][i] for i in range(n)) for a in range(3)], axis=-n - 1)
    adv_hat = to_coeffs(adv, quad)

    # cubic |grad d|^2 d on the refined grid
    G2 = to_phys(G_hat, 2)
    d2 = to_phys(d_hat, 2)
    gsq = np.sum(G2**2, axis=(-n - 2, -n - 1))
    cubic_hat = to_coeffs(gsq[(Ellipsis, None) + (slice(None),) * n] * d2, 2)

    return mom_hat * mask, (cubic_hat - adv_hat) * mask


def momentum_nonlinearity(u: VectorField, d: VectorField, mode: str = "two_thirds") -> VectorField:
    """``div(u (x) u + grad d (.) grad d)`` with ``(grad d (.) grad d)_ij = d_i d . d_j d``."""
    if u.grid != d.grid:
        raise ValueError("u and d must share a grid")
    mom, _ = nonlinear_coeffs(u.grid, u.coeffs, d.coeffs, mode)
    return VectorField(u.grid, mom)


def director_nonlinearity(u: VectorField, d: VectorField, mode: str = "two_thirds") -> VectorField:
    """``|grad d|^2 d - (u . grad) d``, the non-diffusive part of the director equation."""
    if u.grid != d.grid:
        raise ValueError("u and d must share a grid")
    _, dn = nonlinear_coeffs(u.grid, u.coeffs, d.coeffs, mode)
    return VectorField(u.grid, dn)
