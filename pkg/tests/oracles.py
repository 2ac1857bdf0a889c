"""Independent reference computations used by the tests.

Nothing here imports the package: transforms use numpy.fft, integrals use
mpmath or dense trapezoid sums, and time stepping is classical RK4.
"""

import math

import mpmath
import numpy as np


def lagrange_basis_mp(nodes, j, x):
    """``l_j(x)`` through ``nodes`` in multiprecision."""
    val = mpmath.mpf(1)
    for k, xk in enumerate(nodes):
        if k != j:
            val *= (x - xk) / (mpmath.mpf(nodes[j]) - xk)
    return val


def exponential_weight_mp(a, h, taus, i, j, dps=40):
    """``int_0^{h tau_i} exp(-a (h tau_i - s)) l_j(s / h) ds`` by adaptive mpmath quadrature."""
    with mpmath.workdps(dps):
        nodes = [mpmath.mpf(float(t)) for t in taus]
        ti = mpmath.mpf(h) * nodes[i]
        a = mpmath.mpf(a)
        f = lambda s: mpmath.exp(-a * (ti - s)) * lagrange_basis_mp(nodes, j, s / h)
        # split at the boundary layer of width 1/a so the quadrature resolves it
        pts = [mpmath.mpf(0), ti]
        if a * ti > 1:
            pts = sorted(set([mpmath.mpf(0)] + [max(mpmath.mpf(0), ti - c / a) for c in (1, 5, 25)] + [ti]))
        return float(mpmath.quad(f, pts))


def trapezoid_heat_integral(a, t, n=1000):
    """``int_0^t exp(-a (t - s)) ds`` with the composite trapezoid rule on ``n`` intervals."""
    s = np.linspace(0.0, t, n + 1)
    f = np.exp(-np.multiply.outer(a, t - s))
    return (t / n) * (f[..., 1:-1].sum(axis=-1) + 0.5 * (f[..., 0] + f[..., -1]))


def _wavenumbers(N, L=2 * math.pi):
    k = np.fft.fftfreq(N, 1.0 / N) * (2 * math.pi / L)
    k[N // 2] = 0.0
    return k


def harmonic_map_rk4(d0, T, dt):
    """RK4 for ``d_t = Lap d + |grad d|^2 d`` on the 2-D torus [0, 2pi)^2.

    ``d0`` has shape ``(3, N, N)``.  Derivatives are spectral (numpy.fft),
    the product is evaluated pointwise.
    """
    N = d0.shape[-1]
    k = _wavenumbers(N)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    kfull = np.fft.fftfreq(N, 1.0 / N)
    lap = -(kfull[:, None] ** 2 + kfull[None, :] ** 2)

    def rhs(d):
        dh = np.fft.fft2(d)
        gx = np.real(np.fft.ifft2(1j * kx * dh))
        gy = np.real(np.fft.ifft2(1j * ky * dh))
        lapd = np.real(np.fft.ifft2(lap * dh))
        g2 = np.sum(gx**2 + gy**2, axis=0)
        return lapd + g2[None] * d

    steps = int(round(T / dt))
    dt = T / steps
    d = d0.copy()
    for _ in range(steps):
        k1 = rhs(d)
        k2 = rhs(d + 0.5 * dt * k1)
        k3 = rhs(d + 0.5 * dt * k2)
        k4 = rhs(d + dt * k3)
        d = d + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return d


def central_difference(f, h, axis):
    """Fourth-order periodic central difference along ``axis``."""
    r = lambda s: np.roll(f, s, axis=axis)
    return (8 * (r(-1) - r(1)) - (r(-2) - r(2))) / (12 * h)
