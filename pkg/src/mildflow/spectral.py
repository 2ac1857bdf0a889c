"""Fourier machinery on the periodic box [0, L)^n.

Coefficients are stored in the real-to-complex (``rfftn``) layout with
``norm="forward"``, so a stored value is the true Fourier coefficient
``f_hat(k)`` of ``f(x) = sum_k f_hat(k) exp(i k.x)``.  Leading array axes are
component (or batch) axes; the trailing ``dimension`` axes are spatial.

The field-level operators at the bottom (``heat_semigroup``, ``leray_project``
and friends) accept anything exposing ``.grid``, ``.coeffs`` and
``.with_coeffs``; in practice that is :class:`mildflow.fields.VectorField`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SpectralGrid:
    """Resolution and wavenumber layout of the periodic domain.

    Parameters
    ----------
    dimension:
        Spatial dimension, 2 or 3.
    modes_per_axis:
        Collocation points per axis ``N`` (even, at least 8).
    period:
        Side length ``L`` of the box.
    """

    dimension: int
    modes_per_axis: int
    period: float = TWO_PI

    modes: np.ndarray = field(init=False, repr=False, compare=False)
    kvec: tuple = field(init=False, repr=False, compare=False)
    dvec: tuple = field(init=False, repr=False, compare=False)
    index: tuple = field(init=False, repr=False, compare=False)
    ksq: np.ndarray = field(init=False, repr=False, compare=False)
    dealias_mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        n, N = self.dimension, self.modes_per_axis
        if n not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {n}")
        if N % 2:
            raise ValueError(f"resolution must be even, got {N}")
        if N < 8:
            raise ValueError(f"resolution must be at least 8, got {N}")
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ValueError(f"period must be positive, got {self.period}")

        modes = np.fft.fftfreq(N, 1.0 / N).astype(int)  # 0..N/2-1, -N/2..-1
        scale = TWO_PI / self.period
        index, kvec, dvec = [], [], []
        for axis in range(n):
            idx = modes if axis < n - 1 else np.arange(N // 2 + 1)
            shape = [1] * n
            shape[axis] = idx.size
            idx = idx.reshape(shape)
            k = scale * idx
            # Nyquist derivative is not representable for real fields
            dk = np.where(np.abs(idx) == N // 2, 0.0, k)
            index.append(idx)
            kvec.append(k)
            dvec.append(1j * dk)
        ksq = sum(k**2 for k in kvec)
        mask = np.ones(ksq.shape, dtype=bool)
        for idx in index:
            mask = mask & (3 * np.abs(idx) <= N)

        set_ = object.__setattr__
        set_(self, "modes", modes)
        set_(self, "index", tuple(index))
        set_(self, "kvec", tuple(kvec))
        set_(self, "dvec", tuple(dvec))
        set_(self, "ksq", ksq)
        set_(self, "dealias_mask", mask)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.modes_per_axis,) * self.dimension

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        N = self.modes_per_axis
        return (N,) * (self.dimension - 1) + (N // 2 + 1,)

    @property
    def spacing(self) -> float:
        return self.period / self.modes_per_axis

    @property
    def npoints(self) -> int:
        return self.modes_per_axis**self.dimension

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dimension, 0))

    def with_period(self, period: float) -> "SpectralGrid":
        return SpectralGrid(self.dimension, self.modes_per_axis, period)

    def points(self, factor: int = 1) -> list[np.ndarray]:
        """Collocation coordinates (``indexing="ij"``) on a ``factor``-times finer grid."""
        M = self.modes_per_axis * factor
        x = np.arange(M) * (self.period / M)
        return np.meshgrid(*([x] * self.dimension), indexing="ij")

    # -- transforms -----------------------------------------------------

    def forward(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfftn(values, axes=self.axes, norm="forward")

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.irfftn(coeffs, s=self.shape, axes=self.axes, norm="forward")

    def pad(self, coeffs: np.ndarray, factor: int) -> np.ndarray:
        """Zero-pad to the ``factor * N`` grid, splitting Nyquist modes evenly.

        The trigonometric interpolant is preserved exactly, so the refined
        samples at every ``factor``-th point coincide with the originals.
        """
        if factor == 1:
            return coeffs
        N = self.modes_per_axis
        M = N * factor
        h = N // 2
        out = coeffs
        n = self.dimension
        for j in range(n - 1):
            ax = out.ndim - n + j
            src = np.moveaxis(out, ax, 0)
            dst = np.zeros((M,) + src.shape[1:], dtype=complex)
            dst[:h] = src[:h]
            dst[M - h + 1 :] = src[h + 1 :]
            dst[h] = 0.5 * src[h]
            dst[M - h] = 0.5 * src[h]
            out = np.moveaxis(dst, 0, ax)
        src = out
        dst = np.zeros(src.shape[:-1] + (M // 2 + 1,), dtype=complex)
        dst[..., :h] = src[..., :h]
        dst[..., h] = 0.5 * src[..., h]
        return dst

    def truncate(self, coeffs: np.ndarray, factor: int) -> np.ndarray:
        """Inverse of :meth:`pad` up to dropping modes the native grid cannot hold."""
        if factor == 1:
            return coeffs
        N = self.modes_per_axis
        M = N * factor
        h = N // 2
        n = self.dimension
        out = coeffs
        for j in range(n - 1):
            ax = out.ndim - n + j
            src = np.moveaxis(out, ax, 0)
            dst = np.zeros((N,) + src.shape[1:], dtype=complex)
            dst[:h] = src[:h]
            dst[h + 1 :] = src[M - h + 1 :]
            out = np.moveaxis(dst, 0, ax)
        dst = np.zeros(out.shape[:-1] + (h + 1,), dtype=complex)
        dst[..., :h] = out[..., :h]
        return dst

    def sample(self, coeffs: np.ndarray, factor: int = 1) -> np.ndarray:
        """Physical values on the ``factor``-times refined collocation grid."""
        if factor == 1:
            return self.inverse(coeffs)
        M = self.modes_per_axis * factor
        padded = self.pad(coeffs, factor)
        return sfft.irfftn(padded, s=(M,) * self.dimension, axes=self.axes, norm="forward")

    def refined(self, factor: int) -> "SpectralGrid":
        return SpectralGrid(self.dimension, self.modes_per_axis * factor, self.period)


def make_grid(dimension: int, modes_per_axis: int, period: float = TWO_PI) -> SpectralGrid:
    """Build a :class:`SpectralGrid`; raises ``ValueError`` on bad resolution or dimension."""
    return SpectralGrid(int(dimension), int(modes_per_axis), float(period))


# -- array kernels ------------------------------------------------------


def heat_multiplier(grid: SpectralGrid, t: float) -> np.ndarray:
    return np.exp(-t * grid.ksq)


def _comp(a: np.ndarray, i: int, n: int) -> np.ndarray:
    return a[(Ellipsis, i) + (slice(None),) * n]


def project_coeffs(grid: SpectralGrid, f_hat: np.ndarray) -> np.ndarray:
    """Leray projection of coefficients shaped ``(..., n, *spectral)``.

    Uses the same wavevector as the spectral derivative (Nyquist components
    zeroed), so ``div`` of the result and the projection of any spectral
    gradient vanish exactly.
    """
    n = grid.dimension
    if f_hat.shape[-n - 1] != n:
        raise ValueError(f"projection needs {n} components, got {f_hat.shape[-n - 1]}")
    kvec = [np.broadcast_to(d.imag, grid.spectral_shape) for d in grid.dvec]
    ksq = sum(k**2 for k in kvec)
    ksq = np.where(ksq == 0, 1.0, ksq)
    kdotf = sum(kvec[i] * _comp(f_hat, i, n) for i in range(n)) / ksq
    return np.stack([_comp(f_hat, i, n) - kvec[i] * kdotf for i in range(n)], axis=-n - 1)


def grad_coeffs(grid: SpectralGrid, f_hat: np.ndarray) -> np.ndarray:
    """Append a trailing derivative-direction axis: ``(..., c, *s) -> (..., c, n, *s)``."""
    n = grid.dimension
    return np.stack([d * f_hat for d in grid.dvec], axis=-n - 1)


def div_coeffs(grid: SpectralGrid, t_hat: np.ndarray) -> np.ndarray:
    """Contract the last component axis with the derivative: ``(..., n, *s) -> (..., *s)``."""
    n = grid.dimension
    if t_hat.shape[-n - 1] != n:
        raise ValueError(f"divergence needs a last component axis of size {n}")
    return sum(grid.dvec[i] * _comp(t_hat, i, n) for i in range(n))


def curl_coeffs(grid: SpectralGrid, u_hat: np.ndarray) -> np.ndarray:
    n = grid.dimension
    D = grid.dvec

    def comp(i):
        return _comp(u_hat, i, n)

    if n == 2:
        return D[0] * comp(1) - D[1] * comp(0)
    return np.stack(
        [
            D[1] * comp(2) - D[2] * comp(1),
            D[2] * comp(0) - D[0] * comp(2),
            D[0] * comp(1) - D[1] * comp(0),
        ],
        axis=-n - 1,
    )


# -- field-level operators ----------------------------------------------


def heat_semigroup(f, t: float):
    """Apply ``exp(t Laplacian)``: every coefficient is damped by ``exp(-t |k|^2)``."""
    if not t >= 0 or not math.isfinite(t):
        raise ValueError(f"heat semigroup needs finite t >= 0, got {t}")
    return f.with_coeffs(f.coeffs * heat_multiplier(f.grid, t))


def leray_project(f):
    """Project onto divergence-free fields; the mean mode passes through unchanged."""
    if f.comp_shape != (f.grid.dimension,):
        raise ValueError(f"expected {f.grid.dimension} components, got shape {f.comp_shape}")
    return f.with_coeffs(project_coeffs(f.grid, f.coeffs))


def gradient(f):
    """Spectral gradient; a field with component shape ``c`` becomes ``c + (n,)``."""
    return f.with_coeffs(grad_coeffs(f.grid, f.coeffs), role="generic")


def divergence(T):
    """Divergence over the last component axis (vector -> scalar, matrix -> vector)."""
    if not T.comp_shape or T.comp_shape[-1] != T.grid.dimension:
        raise ValueError(f"cannot take divergence of component shape {T.comp_shape}")
    return T.with_coeffs(div_coeffs(T.grid, T.coeffs), role="generic")


def curl(u):
    """Vorticity: a 3-vector in 3D, the scalar ``d1 u2 - d2 u1`` in 2D."""
    if u.comp_shape != (u.grid.dimension,):
        raise ValueError(f"curl needs a vector with {u.grid.dimension} components, got {u.comp_shape}")
    return u.with_coeffs(curl_coeffs(u.grid, u.coeffs), role="generic")


def laplacian(f):
    return f.with_coeffs(-f.grid.ksq * f.coeffs)


def dealias(f):
    """Two-thirds rule: zero every mode with some ``|k_axis| > N/3``."""
    return f.with_coeffs(f.coeffs * f.grid.dealias_mask)
