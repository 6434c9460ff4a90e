"""Tests for the reductions, the integrator, and the gauge step."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitma import AdmissibilityLost, ConfigurationError, make_grid
from splitma.errors import NumericalFailure
from splitma.flow import (
    FlowParams,
    dt_adaptive,
    flow_speed,
    gauge_out_f,
    lambda_eta,
    make_state,
    normalize_compat,
    normalize_exponents,
    run,
    shift_min_zero,
    step_rk4,
)
from splitma.geometry import flat_background, kahler_product_background
from splitma.grid_field import RealField, derivative, sup_norm
from splitma.oracle2d import run_factor_flow

TWO_PI = 2.0 * np.pi


@pytest.fixture(scope="module")
def grid():
    return make_grid((16, 16, 16, 16), (1, 1, 1, 1))


@pytest.fixture(scope="module")
def bg(grid):
    return flat_background(grid)


def split_sine(grid, amp_a=0.05, amp_b=0.05, k=1, m=1):
    x1, _, x3, _ = grid.mesh()
    return RealField.from_function(
        grid,
        lambda a, b, c, d: amp_a * np.sin(TWO_PI * k * a)
        + amp_b * np.sin(TWO_PI * m * c),
    )


class TestReductions:
    def test_normalize_exponents(self, grid):
        f = RealField.create(grid, np.full(grid.shape, 2.0))
        beta, f2, scale = normalize_exponents(2.0, 1.0, f)
        assert beta == 0.5 and scale == 2.0
        assert np.all(f2.data == 1.0)

    def test_normalize_identity(self, grid):
        beta, f2, scale = normalize_exponents(1.0, 1.0, None)
        assert beta == 1.0 and scale == 1.0 and f2 is None

    def test_normalize_rejects_beta_above_alpha(self):
        with pytest.raises(ConfigurationError):
            normalize_exponents(1.0, 2.0, None)

    def test_shift_min_zero(self, grid):
        u = RealField.create(grid, np.full(grid.shape, 5.0))
        assert np.all(shift_min_zero(u).data == 0.0)
        x1 = grid.mesh()[0]
        v = RealField.from_function(grid, lambda a, b, c, d: np.sin(TWO_PI * a))
        out = shift_min_zero(v)
        assert abs(out.data.min()) < 1e-15
        assert np.max(np.abs(out.data - (1.0 + np.sin(TWO_PI * x1)))) < 1e-15

    @settings(max_examples=15, deadline=None)
    @given(c=st.floats(-10, 10, allow_nan=False))
    def test_shift_idempotent(self, c):
        g = make_grid((8, 8, 8, 8), (1, 1, 1, 1))
        u = RealField.create(g, np.full(g.shape, c))
        once = shift_min_zero(u)
        twice = shift_min_zero(once)
        assert np.array_equal(once.data, twice.data)


class TestLambdaEta:
    def test_zero_potential(self, grid, bg):
        lam, eta = lambda_eta(RealField.zeros(grid), bg)
        assert np.all(lam.data == 1.0) and np.all(eta.data == 1.0)

    def test_sine_profile(self, grid, bg):
        eps = 0.03
        x1 = grid.mesh()[0]
        u = RealField.from_function(grid, lambda a, b, c, d: eps * np.sin(TWO_PI * a))
        lam, eta = lambda_eta(u, bg)
        expect = 1.0 - eps * np.pi**2 * np.sin(TWO_PI * x1)
        assert np.max(np.abs(lam.data - expect)) < 1e-12
        assert np.max(np.abs(eta.data - 1.0)) < 1e-12

    def test_admissibility_lost(self, grid, bg):
        # amplitude 1/pi^2 puts min lambda exactly at zero
        u = RealField.from_function(
            grid, lambda a, b, c, d: np.sin(TWO_PI * a) / np.pi**2
        )
        with pytest.raises(AdmissibilityLost):
            lambda_eta(u, bg)

    def test_flow_speed_values(self, grid):
        lam = np.full(grid.shape, np.e)
        eta = np.ones(grid.shape)
        s = flow_speed(lam, eta, 0.5)
        assert np.allclose(s, 0.5)


class TestDtAdaptive:
    def test_flat_reference_value(self, bg, grid):
        state = make_state(RealField.zeros(grid), bg, 1.0, 0.0)
        # two identical factor radii: rho = 2 * (1/4) * 2 * (16 pi)^2
        rho = 2 * 0.25 * 2 * (16 * np.pi) ** 2
        dt = dt_adaptive(state, bg, 1.0, cfl=1.0, dt_max=10.0)
        assert abs(dt - 1.0 / rho) < 1e-15 / rho

    def test_reference_value_n32(self):
        g32 = make_grid((32, 32, 32, 32), (1, 1, 1, 1))
        b32 = flat_background(g32)
        state = make_state(RealField.zeros(g32), b32, 1.0, 0.0)
        dt = dt_adaptive(state, b32, 1.0, cfl=1.0, dt_max=10.0)
        rho = 1024 * np.pi**2
        assert abs(rho - 10106.5) < 0.2
        assert abs(dt - 1.0 / rho) < 1e-18

    def test_cfl_linear(self, bg, grid):
        state = make_state(RealField.zeros(grid), bg, 1.0, 0.0)
        d1 = dt_adaptive(state, bg, 1.0, cfl=1.0, dt_max=10.0)
        d2 = dt_adaptive(state, bg, 1.0, cfl=0.5, dt_max=10.0)
        assert abs(d2 - 0.5 * d1) < 1e-18

    def test_lambda_scaling_monotone(self, grid, bg):
        u = split_sine(grid, 0.05, 0.0)
        s1 = make_state(RealField.zeros(grid), bg, 0.5, 0.0)
        s2 = make_state(u, bg, 0.5, 0.0)
        # min lambda < 1 increases the z-part of rho, shrinking dt
        assert dt_adaptive(s2, bg, 0.5, 1.0, 10.0) < dt_adaptive(s1, bg, 0.5, 1.0, 10.0)


class TestStepping:
    def test_stationary_point(self, grid, bg):
        u = np.zeros(grid.shape)
        out = step_rk4(u, bg, 0.5, 1e-3)
        assert np.max(np.abs(out)) < 1e-16

    def test_split_data_stays_split(self, grid, bg):
        u0 = split_sine(grid)
        params = FlowParams(beta=0.5, t_end=0.02, cfl=0.9, snapshot_stride=10)
        traj = run(bg, u0, params)
        for snap in traj.snapshots:
            mixed = derivative(snap.u, "z w")
            assert sup_norm(mixed) < 1e-10

    def test_oversized_step_fails_loudly(self, grid, bg):
        u0 = split_sine(grid, 0.09, 0.09)
        with pytest.raises((AdmissibilityLost, NumericalFailure)):
            # dt far beyond the stability limit on rough data, no retries here
            step_rk4(u0.data, bg, 0.5, 5.0)

    def test_run_trivial_steady(self, grid, bg):
        params = FlowParams(beta=0.5, t_end=1.0)
        traj = run(bg, RealField.zeros(grid), params)
        assert traj.termination == "steady"
        assert len(traj.snapshots) == 1
        assert traj.snapshots[0].t == 0.0

    def test_run_t_end_zero(self, grid, bg):
        params = FlowParams(beta=0.5, t_end=0.0)
        u0 = split_sine(grid)
        traj = run(bg, u0, params)
        assert len(traj.snapshots) == 1

    def test_speed_cache_consistency(self, grid, bg):
        u0 = split_sine(grid)
        params = FlowParams(beta=0.5, t_end=0.01, cfl=0.9, snapshot_stride=5)
        traj = run(bg, u0, params)
        for snap in traj.snapshots:
            expect = flow_speed(snap.lam.data, snap.eta.data, 0.5)
            assert np.max(np.abs(snap.du_dt.data - expect)) == 0.0

    def test_checkpoint_times_hit_exactly(self, grid, bg):
        u0 = split_sine(grid)
        params = FlowParams(beta=0.5, t_end=0.02, cfl=0.9, snapshot_stride=10**9)
        cps = [0.005, 0.01, 0.015]
        traj = run(bg, u0, params, checkpoint_times=cps)
        times = traj.times
        for c in cps:
            assert any(abs(t - c) < 1e-12 for t in times), (c, times)


class TestOracle2D:
    def test_split_flow_matches_factor_flows(self, grid, bg):
        amp = 0.04
        u0 = split_sine(grid, amp, amp)
        t_end = 0.2
        cps = [0.05, 0.1, 0.15, 0.2]
        params = FlowParams(beta=0.5, t_end=t_end, cfl=0.8, snapshot_stride=10**9)
        traj = run(bg, u0, params, checkpoint_times=cps)

        n1, n2, n3, n4 = grid.shape
        x1 = np.arange(n1) / n1
        x3 = np.arange(n3) / n3
        a0 = amp * np.sin(TWO_PI * x1)[:, None] * np.ones((1, n2))
        b0 = amp * np.sin(TWO_PI * x3)[:, None] * np.ones((1, n4))
        fa = run_factor_flow(a0, 1.0, (1.0, 1.0), 0.5, "plus", t_end, cps)
        fb = run_factor_flow(b0, 1.0, (1.0, 1.0), 0.5, "minus", t_end, cps)

        for c in cps:
            i4 = min(range(len(traj.times)), key=lambda i: abs(traj.times[i] - c))
            ia = min(range(len(fa.times)), key=lambda i: abs(fa.times[i] - c))
            ib = min(range(len(fb.times)), key=lambda i: abs(fb.times[i] - c))
            assert abs(traj.times[i4] - c) < 1e-10
            combo = (
                fa.states[ia][:, :, None, None] + fb.states[ib][None, None, :, :]
            )
            err = np.max(np.abs(traj.snapshots[i4].u.data - combo))
            assert err < 1e-7, (c, err)

    def test_frozen_factor_stays_frozen(self, grid, bg):
        # z-only data: the w-factor flow must not move
        u0 = split_sine(grid, 0.05, 0.0)
        params = FlowParams(beta=0.5, t_end=0.05, cfl=0.8, snapshot_stride=10**9)
        traj = run(bg, u0, params, checkpoint_times=[0.05])
        final = traj.snapshots[-1]
        # u stays independent of (x3, x4)
        dep = np.max(np.abs(final.u.data - final.u.data.mean(axis=(2, 3),
                                                             keepdims=True)))
        assert dep < 1e-12


class TestSpectralFilter:
    def test_filter_preserves_low_modes_damps_nyquist(self, grid):
        from splitma.grid_field import exponential_filter

        x1 = grid.mesh()[0]
        low = np.sin(TWO_PI * x1) * np.ones(grid.shape)
        out = exponential_filter(grid, low)
        assert np.max(np.abs(out - low)) < 1e-12
        nyq = np.cos(TWO_PI * 8 * x1) * np.ones(grid.shape)  # n1 = 16
        out = exponential_filter(grid, nyq)
        assert np.max(np.abs(out)) < np.exp(-36.0) * 2.0 + 1e-12

    def test_filter_idempotent_on_filtered_band(self, grid):
        from splitma.grid_field import exponential_filter

        rng = np.random.default_rng(2)
        u = rng.normal(size=grid.shape)
        once = exponential_filter(grid, u)
        twice = exponential_filter(grid, once)
        # second application only re-damps already-damped top modes
        assert np.max(np.abs(twice - once)) <= np.max(np.abs(once - u))

    def test_filtered_run_stays_close_on_smooth_data(self, grid, bg):
        u0 = split_sine(grid, 0.03, 0.03)
        base = run(bg, u0, FlowParams(beta=0.5, t_end=0.02, cfl=0.9,
                                      snapshot_stride=10**9, steady_tol=1e-30))
        filt = run(bg, u0, FlowParams(beta=0.5, t_end=0.02, cfl=0.9,
                                      snapshot_stride=10**9, steady_tol=1e-30,
                                      spectral_filter=True))
        diff = np.max(np.abs(base.snapshots[-1].u.data
                             - filt.snapshots[-1].u.data))
        assert diff < 1e-7


class TestGauge:
    def test_zero_forcing(self, grid, bg):
        zero = RealField.zeros(grid)
        res = gauge_out_f(bg, zero, zero, 0.5)
        assert abs(res.b_plus) < 1e-14 and abs(res.b_minus) < 1e-14
        assert sup_norm(res.u_inf) < 1e-14

    def test_cosine_forcing_matches_poisson_solution(self, grid, bg):
        beta = 0.5
        x1 = grid.mesh()[0]
        fp = RealField.from_function(
            grid, lambda a, b, c, d: beta * np.log(1 + 0.2 * np.cos(TWO_PI * a))
        )
        fm = RealField.zeros(grid)
        fp, fm = normalize_compat(bg, fp, fm, beta)
        res = gauge_out_f(bg, fp, fm, beta)
        assert abs(res.b_plus) < 1e-10 and abs(res.b_minus) < 1e-10
        expect = -0.2 * np.cos(TWO_PI * x1) / np.pi**2
        assert np.max(np.abs(res.u_inf.data - expect)) < 1e-12
        assert np.max(np.abs(res.g_new - (1 + 0.2 * np.cos(TWO_PI * x1)))) < 1e-12

    def test_constant_forcing_absorbed(self, grid, bg):
        c = 0.3
        fp = RealField.create(grid, np.full(grid.shape, c))
        fm = RealField.zeros(grid)
        res = gauge_out_f(bg, fp, fm, 0.5)
        assert abs(res.b_plus + c) < 1e-12
        assert sup_norm(res.u_inf) < 1e-12

    def test_non_product_background_rejected(self, grid):
        from splitma.geometry import pluriclosed_background

        bgp = pluriclosed_background(grid, 1.0, 1.0, [(1, 1, 0.5)])
        zero = RealField.zeros(grid)
        with pytest.raises(ConfigurationError):
            gauge_out_f(bgp, zero, zero, 0.5)


class TestRichardson:
    def test_rk4_order_via_cfl_halving(self):
        g = make_grid((8, 8, 8, 8), (1, 1, 1, 1))
        b = flat_background(g)
        u0 = split_sine(g, 0.05, 0.05)
        t_end = 0.02

        def final(cfl):
            params = FlowParams(beta=0.5, t_end=t_end, cfl=cfl,
                                snapshot_stride=10**9, steady_tol=1e-30)
            return run(b, u0, params).snapshots[-1].u.data

        u1 = final(0.4)
        u2 = final(0.2)
        u3 = final(0.1)
        num = np.max(np.abs(u1 - u2))
        den = np.max(np.abs(u2 - u3))
        ratio = num / den
        assert 12.0 < ratio < 20.0, ratio
