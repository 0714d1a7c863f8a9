"""Hydrostatic operator algebra: averages, projections, diagnostic velocity,
pressure term, Robin form."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydroldp.grid import NEUMANN_BOTH, Field, GridSpec, dx, dy, scalar
from hydroldp.operators import (
    BarotropicField,
    BuoyancyProfile,
    baroclinic_pressure_gradient,
    barotropic_divergence,
    curl_free_part,
    diagnostic_vertical_velocity,
    divfree_part,
    fluctuation,
    hydrostatic_project,
    robin_form,
    vertical_average,
    vertical_velocity_top,
)

GRID = GridSpec(16, 16, 8)


def rand_field(grid, comps=2, seed=0, smooth=False):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((comps, grid.nx, grid.ny, grid.nz))
    if smooth:
        from hydroldp.grid import dealias

        v = dealias(grid, v)
    return Field(grid, v)


def l2(grid, vals):
    return np.sqrt(np.sum(vals**2) * grid.cell_volume)


class TestVerticalAverage:
    def test_z_independent(self):
        vals = np.repeat(np.random.default_rng(0).standard_normal((2, 16, 16, 1)), 8, axis=-1)
        f = Field(GRID, vals)
        vb = vertical_average(f)
        assert np.allclose(vb.values, vals[..., 0])
        assert np.max(np.abs(fluctuation(f).values)) < 1e-14

    def test_odd_profile_zero_mean(self):
        g = GRID
        z = g.z
        f = scalar(g, np.broadcast_to(z + g.h / 2, (16, 16, 8)).copy())
        assert np.max(np.abs(vertical_average(f).values)) < 1e-14

    def test_projector_identity(self):
        f = rand_field(GRID, seed=4)
        tilde = fluctuation(f)
        mean_of_tilde = vertical_average(tilde)
        assert np.max(np.abs(mean_of_tilde.values)) <= 1e-12 * np.max(np.abs(f.values))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_bar_tilde_pythagoras(self, seed):
        f = rand_field(GRID, seed=seed)
        g = GRID
        total = np.sum(f.values**2) * g.cell_volume
        vb = vertical_average(f)
        bar_part = np.sum(vb.values**2) * g.cell_area * g.h
        tilde_part = np.sum(fluctuation(f).values**2) * g.cell_volume
        assert abs(total - (bar_part + tilde_part)) <= 1e-10 * total


class TestCurlFreePart:
    def _bt(self, seed):
        rng = np.random.default_rng(seed)
        return BarotropicField(GRID, rng.standard_normal((2, 16, 16)))

    def test_divergence_free_killed(self):
        # f = perp gradient of a stream function
        x2, y2 = np.meshgrid(GRID.x, GRID.y, indexing="ij")
        psi = np.sin(x2) * np.cos(2 * y2)
        f = BarotropicField(GRID, np.stack([
            np.real(np.fft.ifft2(1j * GRID.ky[..., 0] * np.fft.fft2(psi))),
            -np.real(np.fft.ifft2(1j * GRID.kx[..., 0] * np.fft.fft2(psi))),
        ]))
        q = curl_free_part(f)
        assert np.max(np.abs(q.values)) < 1e-12

    def test_identity_on_gradients(self):
        x2, y2 = np.meshgrid(GRID.x, GRID.y, indexing="ij")
        psi = np.cos(x2 + y2) + 0.5 * np.sin(2 * x2)
        f = BarotropicField(GRID, np.stack([
            np.real(np.fft.ifft2(1j * GRID.kx[..., 0] * np.fft.fft2(psi))),
            np.real(np.fft.ifft2(1j * GRID.ky[..., 0] * np.fft.fft2(psi))),
        ]))
        q = curl_free_part(f)
        assert np.max(np.abs(q.values - f.values)) < 1e-10

    def test_idempotent(self):
        f = self._bt(7)
        q1 = curl_free_part(f)
        q2 = curl_free_part(q1)
        assert np.max(np.abs(q2.values - q1.values)) <= 1e-10 * (1 + np.max(np.abs(q1.values)))

    def test_zero_mode_maps_to_zero(self):
        f = BarotropicField(GRID, np.ones((2, 16, 16)))
        assert np.max(np.abs(curl_free_part(f).values)) < 1e-14


class TestHydrostaticProjection:
    def test_fixed_point_when_constrained(self):
        f = rand_field(GRID, seed=1)
        p1 = hydrostatic_project(f)
        res = barotropic_divergence(p1)
        assert np.max(np.abs(res)) < 1e-10 * max(1, np.max(np.abs(f.values)))
        p2 = hydrostatic_project(p1)
        assert np.max(np.abs(p2.values - p1.values)) < 1e-12

    def test_constant_untouched(self):
        f = Field(GRID, np.ones((2, 16, 16, 8)) * np.array([1.0, -2.0]).reshape(2, 1, 1, 1))
        p = hydrostatic_project(f)
        assert np.allclose(p.values, f.values)

    def test_orthogonality(self):
        f = rand_field(GRID, seed=2)
        p = hydrostatic_project(f)
        rem = f.values - p.values
        ip = abs(np.sum(p.values * rem)) * GRID.cell_volume
        assert ip <= 1e-10 * l2(GRID, f.values) ** 2

    def test_self_adjoint(self):
        f, g = rand_field(GRID, seed=3), rand_field(GRID, seed=4)
        pf, pg = hydrostatic_project(f), hydrostatic_project(g)
        a = np.sum(pf.values * g.values)
        b = np.sum(f.values * pg.values)
        assert abs(a - b) <= 1e-10 * abs(a)

    def test_gradient_bound(self):
        from hydroldp.grid import dz_apply

        f = rand_field(GRID, seed=5, smooth=True)
        p = hydrostatic_project(f)
        g = GRID
        for deriv in (lambda v: dx(g, v), lambda v: dy(g, v),
                      lambda v: dz_apply(g.d1_free_matrix, v)):
            lhs = l2(g, deriv(p.values))
            rhs = l2(g, deriv(f.values))
            assert lhs <= rhs * (1 + 1e-8)

    def test_bar_commutes(self):
        # vertical mean of projection = 2-D Leray projection of the vertical mean
        f = rand_field(GRID, seed=6)
        lhs = vertical_average(hydrostatic_project(f)).values
        rhs = divfree_part(vertical_average(f)).values
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))

    def test_tilde_unchanged(self):
        f = rand_field(GRID, seed=7)
        lhs = fluctuation(hydrostatic_project(f)).values
        rhs = fluctuation(f).values
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))


class TestDiagnosticVerticalVelocity:
    def test_divfree_gives_zero(self):
        x2, y2 = np.meshgrid(GRID.x, GRID.y, indexing="ij")
        psi = np.sin(x2) * np.cos(y2)
        vperp = np.stack([
            np.real(np.fft.ifft2(1j * GRID.ky[..., 0] * np.fft.fft2(psi))),
            -np.real(np.fft.ifft2(1j * GRID.kx[..., 0] * np.fft.fft2(psi))),
        ])
        v = Field(GRID, np.repeat(vperp[..., None], 8, axis=-1))
        w = diagnostic_vertical_velocity(v)
        assert np.max(np.abs(w.values)) < 1e-12

    def test_top_value_vanishes_for_projected(self):
        v = hydrostatic_project(rand_field(GRID, seed=8))
        top = vertical_velocity_top(v)
        assert np.max(np.abs(top)) <= 1e-10 * l2(GRID, v.values)

    def test_analytic_antiderivative(self):
        # constant z-profile: cumulative midpoint rule is exact
        g = GridSpec(16, 16, 64)
        X, _, Z = g.meshgrid()
        v = Field(g, np.stack([np.sin(X), np.zeros_like(X)]))
        w = diagnostic_vertical_velocity(v)
        exact = -np.cos(X) * (Z + g.h)
        assert np.max(np.abs(w.values[0] - exact)) < 1e-6

    def test_quadrature_order_two(self):
        errs = []
        for nz in (16, 32, 64):
            g = GridSpec(8, 8, nz)
            X, _, Z = g.meshgrid()
            prof = np.cos(np.pi * (Z + g.h) / g.h)
            v = Field(g, np.stack([np.sin(X) * prof, np.zeros_like(X)]))
            w = diagnostic_vertical_velocity(v)
            exact = -np.cos(X) * (g.h / np.pi) * np.sin(np.pi * (Z + g.h) / g.h)
            errs.append(np.max(np.abs(w.values[0] - exact)))
        slopes = np.diff(np.log(errs)) / np.log(0.5)
        assert np.all(slopes > 1.7)

    def test_dz_w_is_minus_divergence(self):
        from hydroldp.grid import dz_apply
        from hydroldp.operators import horizontal_divergence

        g = GridSpec(8, 8, 48)
        X, Y, Z = g.meshgrid()
        prof = np.cos(np.pi * (Z + g.h) / g.h)
        v = Field(g, np.stack([np.sin(X) * prof, np.cos(Y) * prof]))
        w = diagnostic_vertical_velocity(v)
        dzw = dz_apply(g.d1_free_matrix, w.values[0])
        div = horizontal_divergence(v)
        assert np.max(np.abs(dzw + div)) < 5e-3 * np.max(np.abs(div))


class TestPressureTerm:
    def test_zero_theta(self):
        th = scalar(GRID, np.zeros((16, 16, 8)))
        out = baroclinic_pressure_gradient(BuoyancyProfile.constant(GRID), th)
        assert np.max(np.abs(out.values)) == 0.0

    def test_horizontal_constant(self):
        z = GRID.z
        th = scalar(GRID, np.broadcast_to(np.exp(z), (16, 16, 8)).copy())
        out = baroclinic_pressure_gradient(BuoyancyProfile.constant(GRID), th)
        assert np.max(np.abs(out.values)) < 1e-12

    def test_analytic_formula(self):
        g = GridSpec(16, 16, 64)
        X, _, _ = g.meshgrid()
        th = scalar(g, np.cos(X))
        out = baroclinic_pressure_gradient(BuoyancyProfile.constant(g), th)
        Z = g.meshgrid()[2]
        exact = -np.sin(X) * (Z + g.h)
        assert np.max(np.abs(out.values[0] - exact)) < 1e-6
        assert np.max(np.abs(out.values[1])) < 1e-12


class TestRobinForm:
    def test_constant_fields(self):
        c = 1.7
        f = scalar(GRID, np.full((16, 16, 8), c))
        alpha = 0.9
        val = robin_form(f, f, alpha)
        area = GRID.lx * GRID.ly
        assert abs(val + alpha * c**2 * area) < 1e-10

    def test_alpha_zero_pure_gradient(self):
        f = rand_field(GRID, comps=1, seed=10, smooth=True)
        g = rand_field(GRID, comps=1, seed=11, smooth=True)
        from hydroldp.operators import _full_gradient

        expected = -np.sum(_full_gradient(f) * _full_gradient(g)) * GRID.cell_volume
        assert abs(robin_form(f, g, 0.0) - expected) < 1e-12 * (1 + abs(expected))

    def test_symmetry(self):
        f = rand_field(GRID, comps=1, seed=12)
        g = rand_field(GRID, comps=1, seed=13)
        a = robin_form(f, g, 0.35)
        b = robin_form(g, f, 0.35)
        assert abs(a - b) <= 1e-12 * (1 + abs(a))


class TestBuoyancyProfile:
    def test_bound_violation_rejected(self):
        from hydroldp.errors import InvalidField

        vals = np.full((1, 16, 16, 8), 10.0)
        with pytest.raises(InvalidField):
            BuoyancyProfile(Field(GRID, vals), bound=0.1)
