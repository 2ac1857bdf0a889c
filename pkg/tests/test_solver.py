import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mildflow.fields import VectorField, derivative_norm, sup_norm
from mildflow.scenario import constant_state, geodesic_director, random_band, taylor_green
from mildflow.solver import (
    ExistenceWindowWarning,
    MarchError,
    PicardDivergence,
    PicardNonConvergence,
    SolverConfig,
    Trajectory,
    concatenate,
    constant_trajectory,
    differentiation_matrix,
    duhamel_map,
    existence_time_estimate,
    exponential_weights,
    lagrange_matrix,
    lobatto_nodes,
    march,
    node_distances,
    picard_solve,
    solver_constants,
    trajectory_distance,
)
from mildflow.spectral import make_grid

from oracles import exponential_weight_mp, trapezoid_heat_integral


# -- node helpers ---------------------------------------------------------


def test_lobatto_nodes_endpoints_and_symmetry():
    t = lobatto_nodes(8)
    assert t[0] == 0.0 and t[-1] == 1.0
    assert np.all(np.diff(t) > 0)
    assert np.allclose(t + t[::-1], 1.0, atol=1e-15)


def test_lagrange_and_differentiation_exact_for_polynomials():
    t = lobatto_nodes(6)
    x = np.linspace(0, 1, 17)
    p = lambda s: 3 * s**5 - s**3 + 2 * s - 1
    dp = lambda s: 15 * s**4 - 3 * s**2 + 2
    assert np.allclose(lagrange_matrix(t, x) @ p(t), p(x), atol=1e-13)
    assert np.allclose(differentiation_matrix(t) @ p(t), dp(t), atol=1e-11)


# -- exponential weights ----------------------------------------------------


@pytest.mark.parametrize("a", [0.0, 0.5, 30.0, 900.0, 4e4])
def test_exponential_weights_match_multiprecision_quadrature(a):
    # h * a spans both the Gauss-Legendre and the integration-by-parts regime
    m, h = 6, 0.1
    taus = lobatto_nodes(m)
    E, W = exponential_weights(np.array([a]), h, taus)
    assert np.allclose(E[:, 0], np.exp(-a * (h * taus)), rtol=1e-13, atol=0)
    ref = np.array([[exponential_weight_mp(a, h, taus, i, j) for j in range(m)] for i in range(m)])
    scale = np.max(np.abs(ref))
    assert np.max(np.abs(W[:, :, 0] - ref)) <= 1e-10 * scale


@settings(max_examples=40, deadline=None)
@given(st.one_of(st.just(0.0), st.floats(1e-6, 1e6)), st.floats(1e-4, 2.0), st.integers(2, 10))
def test_weights_integrate_constants_exactly(a, h, m):
    taus = lobatto_nodes(m)
    _, W = exponential_weights(np.array([a]), h, taus)
    t = h * taus
    exact = t if a == 0 else -np.expm1(-a * t) / a
    assert np.allclose(W[:, :, 0].sum(axis=1), exact, rtol=1e-10, atol=1e-300)


# -- Duhamel map ------------------------------------------------------------


def _np_project(F):
    """Leray projection with numpy.fft on the 2-D 2pi torus."""
    N = F.shape[-1]
    k = np.fft.fftfreq(N, 1.0 / N)
    k[N // 2] = 0
    kx, ky = np.meshgrid(k, k, indexing="ij")
    Fh = np.fft.fft2(F)
    ksq = np.where(kx**2 + ky**2 == 0, 1.0, kx**2 + ky**2)
    kdot = (kx * Fh[0] + ky * Fh[1]) / ksq
    return np.real(np.fft.ifft2(np.stack([Fh[0] - kx * kdot, Fh[1] - ky * kdot])))


def test_duhamel_map_zero_data_is_fixed():
    g = make_grid(2, 16)
    u0, d0 = constant_state(g)
    traj = constant_trajectory(u0, d0, 0.3)
    out = duhamel_map(u0, d0, traj)
    assert np.array_equal(out.u_hat, traj.u_hat)
    assert np.allclose(out.d_hat, traj.d_hat, atol=1e-15)


def test_duhamel_map_frozen_input_matches_dense_trapezoid():
    # constant-in-time input: the integral reduces to int_0^t exp(-(t-s)|k|^2) ds per mode
    g = make_grid(2, 32)
    x, y = g.points()
    u0 = VectorField.from_values(g, np.stack([np.sin(y), np.sin(2 * x)]), "velocity")
    _, d0 = constant_state(g)
    T = 0.1
    traj = constant_trajectory(u0, d0, T)
    out = duhamel_map(u0, d0, traj)

    # div(u0 u0) worked out by hand
    F = np.stack([np.sin(2 * x) * np.cos(y), 2 * np.cos(2 * x) * np.sin(y)])
    PF = _np_project(F)
    # PF lives on |k|^2 = 5 only, u0 on |k|^2 = 1 and 4
    for i, t in enumerate(traj.times):
        heat_u = np.stack([math.exp(-t) * np.sin(y), math.exp(-4 * t) * np.sin(2 * x)])
        expected = heat_u - trapezoid_heat_integral(5.0, t) * PF
        got = g.inverse(out.u_hat[i])
        assert np.max(np.abs(got - expected)) < 1e-8
    assert np.allclose(out.d_hat, traj.d_hat, atol=1e-14)


def test_duhamel_map_frozen_director_input_matches_dense_trapezoid():
    g = make_grid(2, 32)
    x, y = g.points()
    u0 = VectorField.from_values(g, np.stack([np.sin(y), np.zeros_like(x)]), "velocity")
    th = 0.2 * np.sin(x)
    dth = 0.2 * np.cos(x)
    dv = np.stack([np.cos(th), np.sin(th), 0 * x])
    d0 = VectorField.from_values(g, dv, "director")
    T = 0.05
    traj = constant_trajectory(u0, d0, T)
    out = duhamel_map(u0, d0, traj)

    ddx = dth * np.stack([-np.sin(th), np.cos(th), 0 * x])
    forcing = dth**2 * dv - np.sin(y) * ddx
    fh = np.fft.fft2(forcing) / forcing[0].size
    d0h = np.fft.fft2(dv) / dv[0].size
    k = np.fft.fftfreq(32, 1.0 / 32)
    ksq = k[:, None] ** 2 + k[None, :] ** 2
    for i, t in enumerate(traj.times):
        integ = trapezoid_heat_integral(ksq, t, n=4000)
        expected_h = np.exp(-t * ksq) * d0h + integ * fh
        expected = np.real(np.fft.ifft2(expected_h * dv[0].size))
        assert np.max(np.abs(g.inverse(out.d_hat[i]) - expected)) < 1e-8


def test_duhamel_map_without_nonlinearity_is_heat_flow():
    g = make_grid(2, 32)
    u0, d0 = random_band(g, 1.0, 1, 6, 0.5, seed=3)
    traj = constant_trajectory(u0, d0, 0.2)
    out = duhamel_map(u0, d0, traj, zero_nonlinearity=True)
    for i, t in enumerate(traj.times):
        assert np.allclose(out.u_hat[i], np.exp(-t * g.ksq) * u0.coeffs, rtol=0, atol=1e-15)
        assert np.allclose(out.d_hat[i], np.exp(-t * g.ksq) * d0.coeffs, rtol=0, atol=1e-15)


def test_duhamel_map_rejects_bad_input():
    g = make_grid(2, 16)
    u0, d0 = constant_state(g)
    traj = constant_trajectory(u0, d0, 0.1)
    x, y = g.points()
    bad = VectorField.from_values(g, np.stack([np.sin(x), 0 * y]))
    with pytest.raises(ValueError, match="divergence"):
        duhamel_map(bad, d0, traj)
    other = constant_trajectory(*constant_state(make_grid(2, 32)), 0.1)
    with pytest.raises(ValueError):
        duhamel_map(u0, d0, other)


# -- constants ----------------------------------------------------------------


def test_existence_time_examples():
    g = make_grid(2, 32)
    u0, d0 = taylor_green(g, 1.0)
    assert existence_time_estimate(u0, d0) == pytest.approx(1 / 16, rel=1e-12)
    u2, _ = taylor_green(g, 2.0)
    assert existence_time_estimate(u2, d0) == pytest.approx(1 / 64, rel=1e-12)
    z, dz = constant_state(g)
    assert existence_time_estimate(z, dz, T_max=0.7) == 0.7
    small, _ = taylor_green(g, 0.01)
    assert existence_time_estimate(small, d0, T_max=1.0) == 1.0


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 20.0))
def test_doubling_amplitude_quarters_existence_time(A):
    g = make_grid(2, 16)
    u, d = taylor_green(g, A)
    u2, _ = taylor_green(g, 2 * A)
    T1 = existence_time_estimate(u, d, T_max=math.inf)
    T2 = existence_time_estimate(u2, d, T_max=math.inf)
    assert T2 == pytest.approx(T1 / 4, rel=1e-12)


def test_solver_constants_taylor_green():
    g = make_grid(2, 32)
    c = solver_constants(*taylor_green(g, 1.0))
    # ||u0||_inf = 1, ||d0||_{W^{1,inf}} = 1
    assert c.K_star == pytest.approx(4.0, rel=1e-12)
    assert c.T_star == pytest.approx(1 / (16 * 20**2), rel=1e-12)
    assert c.T0 == pytest.approx(1 / 16, rel=1e-12)


# -- Picard iteration -----------------------------------------------------------


def test_picard_zero_data_converges_in_one_iteration():
    g = make_grid(2, 16)
    traj, rec = picard_solve(*constant_state(g), 0.5, warn=False)
    assert rec.converged and rec.iterations == 1
    assert rec.distances[0] <= 1e-14


def test_picard_taylor_green_decay():
    g = make_grid(2, 64)
    u0, d0 = taylor_green(g, 1.0)
    traj, rec = picard_solve(u0, d0, 0.1, warn=False)
    assert rec.converged
    for i, t in enumerate(traj.times):
        assert abs(sup_norm(traj.u(i)) - math.exp(-2 * t)) < 1e-6


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 1000), st.floats(0.1, 1.5))
def test_picard_output_is_a_fixed_point(seed, amp):
    g = make_grid(2, 16)
    u0, d0 = random_band(g, amp, 1, 4, 0.3, seed=seed)
    cfg = SolverConfig(tol=1e-10)
    T = 0.5 * existence_time_estimate(u0, d0)
    traj, rec = picard_solve(u0, d0, T, cfg, warn=False)
    res = trajectory_distance(traj, duhamel_map(u0, d0, traj))
    assert res <= 10 * cfg.tol


def test_picard_contracts_on_contraction_window():
    g = make_grid(2, 32)
    u0, _ = taylor_green(g, 0.25)
    _, d0 = geodesic_director(g, 0.25)
    assert sup_norm(u0) + derivative_norm(d0, 1) == pytest.approx(0.5, rel=1e-10)
    c = solver_constants(u0, d0)
    traj, rec = picard_solve(u0, d0, c.T_star, SolverConfig(tol=1e-13))
    assert rec.converged
    assert all(r <= 0.55 for r in rec.ratios)


def test_picard_warns_beyond_contraction_window():
    g = make_grid(2, 16)
    u0, d0 = taylor_green(g, 1.0)
    with pytest.warns(ExistenceWindowWarning):
        picard_solve(u0, d0, 0.01)


def test_picard_nonconvergence_carries_record():
    g = make_grid(2, 16)
    u0, d0 = random_band(g, 3.0, 1, 4, 0.5, seed=0)
    with pytest.raises(PicardNonConvergence) as info:
        picard_solve(u0, d0, 0.3, SolverConfig(max_iter=3), warn=False)
    assert info.value.record.iterations == 3
    assert not info.value.record.converged


def test_picard_divergence_is_reported():
    g = make_grid(2, 16)
    u0, d0 = random_band(g, 40.0, 1, 4, 0.5, seed=0)
    with pytest.raises(PicardDivergence) as info:
        picard_solve(u0, d0, 1.0, SolverConfig(max_iter=200), warn=False)
    assert info.value.record.iterations >= 2


@pytest.mark.parametrize("T", [0.0, -1.0, math.inf, math.nan])
def test_picard_rejects_bad_window(T):
    g = make_grid(2, 16)
    with pytest.raises(ValueError):
        picard_solve(*constant_state(g), T, warn=False)


def test_quadrature_nodes_doubling_stays_within_error_model():
    g = make_grid(2, 32)
    u0, d0 = random_band(g, 1.0, 1, 4, 0.4, seed=1)
    a, ra = picard_solve(u0, d0, 0.2, SolverConfig(nodes=4, tol=1e-12), warn=False)
    b, rb = picard_solve(u0, d0, 0.2, SolverConfig(nodes=8, tol=1e-12), warn=False)
    L = lagrange_matrix(b.times, a.times)
    ub = np.tensordot(L, b.u_hat, axes=(1, 0))
    db = np.tensordot(L, b.d_hat, axes=(1, 0))
    diff = float(np.max(node_distances(g, a.u_hat - ub, a.d_hat - db)))
    assert diff <= 10 * (ra.quadrature_error + rb.quadrature_error + 2e-12)
    assert diff > 0


# -- trajectories and marching ---------------------------------------------------


def test_trajectory_invariants():
    g = make_grid(2, 16)
    u0, d0 = constant_state(g)
    traj = constant_trajectory(u0, d0, 1.0, nodes=4)
    with pytest.raises(ValueError):
        traj.u_hat[0, 0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        Trajectory(g, np.array([0.0, 0.0]), traj.u_hat[:2], traj.d_hat[:2])
    with pytest.raises(ValueError):
        Trajectory(g, traj.times, traj.u_hat[:2], traj.d_hat)
    with pytest.raises(ValueError):
        traj.interpolate(1.5)


def test_concatenate_shares_boundary_nodes():
    g = make_grid(2, 16)
    u0, d0 = taylor_green(g, 1.0)
    a = constant_trajectory(u0, d0, 0.1, nodes=4)
    b = constant_trajectory(u0, d0, 0.2, nodes=5, t0=0.1)
    c = concatenate([a, b])
    assert c.nt == 8
    assert c.breaks == (0, 3)
    assert c.window_slices() == [(0, 3), (3, 7)]
    assert c.window(1).nt == 5


def test_interpolation_is_exact_at_nodes_and_for_polynomials():
    g = make_grid(2, 16)
    u0, d0 = taylor_green(g, 1.0)
    base = constant_trajectory(u0, d0, 1.0, nodes=6)
    w = (1 + base.times + base.times**3)[:, None, None, None]
    traj = base.with_states(base.u_hat * w, base.d_hat)
    for i, t in enumerate(traj.times):
        assert np.array_equal(traj.interpolate(t)[0], traj.u_hat[i])
    uh, _ = traj.interpolate(0.37)
    assert np.allclose(uh, u0.coeffs * (1 + 0.37 + 0.37**3), atol=1e-13)


def test_march_taylor_green_window_rule():
    g = make_grid(2, 64)
    u0, d0 = taylor_green(g, 1.0)
    cfg = SolverConfig()
    traj = march(u0, d0, 1.0, cfg)
    assert not traj.blowup
    assert traj.t0 == 0.0 and traj.t1 == pytest.approx(1.0, abs=1e-13)
    T0_initial = existence_time_estimate(u0, d0)
    # norms are non-increasing here, so T0 only grows and windows only get longer
    assert len(traj.records) <= math.ceil(1.0 / (cfg.safety * T0_initial))
    for rec in traj.records:
        assert rec.length <= cfg.safety * rec.T0 * (1 + 1e-12)
    assert abs(sup_norm(traj.u(traj.nt - 1)) - math.exp(-2.0)) < 1e-6


def test_march_flags_blowup_when_existence_time_collapses():
    g = make_grid(2, 16)
    u0, d0 = taylor_green(g, 4.0)
    traj = march(u0, d0, 1.0, SolverConfig(min_window=0.1))
    assert traj.blowup and traj.nt == 1

    traj = march(*taylor_green(g, 1.0), 1.0, SolverConfig(max_windows=2))
    assert traj.blowup and len(traj.records) == 2 and traj.t1 < 1.0


def test_march_failure_raises_with_context():
    g = make_grid(2, 16)
    u0, d0 = random_band(g, 3.0, 1, 4, 0.5, seed=0)
    with pytest.raises(MarchError) as info:
        march(u0, d0, 1.0, SolverConfig(max_iter=1, retries=1))
    err = info.value
    assert err.window == 0 and err.t_start == 0.0 and err.partial is None
    assert err.record is not None


def test_march_renormalization_restores_unit_length_at_window_ends():
    g = make_grid(2, 16)
    u0, d0 = random_band(g, 1.0, 1, 4, 0.5, seed=2)
    traj = march(u0, d0, 0.05, SolverConfig(renormalize=True, max_window=0.01))
    for a, b in traj.window_slices():
        mag = np.sqrt(np.sum(g.inverse(traj.d_hat[b]) ** 2, axis=0))
        assert np.max(np.abs(mag - 1)) < 1e-13


def test_march_multiwindow_output_is_a_fixed_point():
    g = make_grid(2, 32)
    u0, d0 = geodesic_director(g, 0.5, velocity_amplitude=1.0)
    cfg = SolverConfig(tol=1e-11, max_window=0.02)
    traj = march(u0, d0, 0.06, cfg)
    assert len(traj.records) >= 3
    assert trajectory_distance(traj, duhamel_map(u0, d0, traj)) <= 10 * cfg.tol * len(traj.records)


def test_director_stays_unit_in_coupled_run():
    g = make_grid(2, 32)
    u0, d0 = geodesic_director(g, 0.5, velocity_amplitude=1.0)
    traj = march(u0, d0, 0.1, SolverConfig(tol=1e-11))
    for i in range(traj.nt):
        mag = np.sqrt(np.sum(g.sample(traj.d_hat[i], 2) ** 2, axis=0))
        assert np.max(np.abs(mag - 1)) < 1e-6


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(nodes=1)
    with pytest.raises(ValueError):
        SolverConfig(tol=0)
    with pytest.raises(ValueError):
        SolverConfig(C_star=-1)
