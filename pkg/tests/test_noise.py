"""Noise family construction, assumption checks, pressure coupling, corrections."""

import numpy as np
import pytest

from hydroldp.errors import ModeMismatch, ParabolicityViolation
from hydroldp.grid import NEUMANN_BOTH, Field, GridSpec, dx, dy, dz_apply
from hydroldp.noise import (
    ITO,
    STRATONOVICH,
    NoiseFamily,
    build_kraichnan_family,
    check_noise_assumptions,
    parabolicity_nu,
    read_noise_family,
    stratonovich_corrections,
    transport_term,
    turbulent_pressure,
    write_noise_family,
    apply_correction_excess,
    apply_temperature_correction,
    apply_velocity_correction,
    projected_gradient_correction,
)

GRID = GridSpec(16, 16, 8)


def constant_family(grid, c=(1.0, 0.0, 0.0), mode=ITO, n=1):
    """Single constant velocity mode (c1, c2, c3); temp modes zero."""
    vel = np.zeros((n, 3, grid.nx, grid.ny, grid.nz))
    for j in range(3):
        vel[0, j] = c[j]
    temp = np.zeros_like(vel)
    return NoiseFamily(grid, vel, temp, None, mode, bound_m=1e9, bound_delta=1.0,
                       nu=float(np.dot(c, c)), divergence_free=True)


def zero_family(grid, mode=ITO, n=1):
    z = np.zeros((n, 3, grid.nx, grid.ny, grid.nz))
    return NoiseFamily(grid, z, z.copy(), None, mode, bound_m=1.0, bound_delta=1.0,
                       nu=0.0, divergence_free=True)


class TestBuildKraichnan:
    def test_zero_amplitude(self):
        fam = build_kraichnan_family(GRID, amplitude=0.0, n_modes=4)
        assert fam.nu == 0.0
        assert np.max(np.abs(fam.vel_modes)) == 0.0

    def test_single_constant_mode_nu(self):
        # closed form: one constant mode (s,0,0) gives nu = s^2 along x
        fam = constant_family(GRID, (0.7, 0.0, 0.0))
        nu = parabolicity_nu(fam, "vel", method="eig")
        assert abs(nu - 0.49) < 1e-12
        nu_dir = parabolicity_nu(fam, "vel", method="directions")
        assert nu_dir <= nu + 1e-12
        assert nu_dir >= 0.95 * nu

    def test_shell_isotropy_closed_form(self):
        # one complete horizontal shell: covariance = amp^2 * I_2 pointwise
        fam = build_kraichnan_family(GRID, amplitude=0.6, n_modes=4, vertical_fraction=0.5)
        cov = fam.covariance_matrix("vel")
        expect = np.zeros((3, 3))
        expect[0, 0] = expect[1, 1] = 0.36
        assert np.max(np.abs(cov - expect)) < 1e-12
        assert abs(fam.nu - 0.36) < 1e-10

    def test_six_mode_closed_form(self):
        fam = build_kraichnan_family(GRID, amplitude=0.6, n_modes=6, vertical_fraction=0.5)
        # velocity: horizontal 0.36*I2, vertical (0.3*0.6)^2 sin^2 <= 0.09 -> nu = 0.36
        assert abs(parabolicity_nu(fam, "vel", "eig") - 0.36) < 1e-10
        # temperature picks up the two extra horizontal waves along x-hat
        assert abs(parabolicity_nu(fam, "temp", "eig") - 0.36 * 1.25) < 1e-10

    def test_target_nu_with_margin(self):
        # choose amplitude so the family nu is 1; checker passes with margin
        amp = 1.0 / np.sqrt(1.25)
        fam = build_kraichnan_family(GRID, spectrum_exponent=1.0, amplitude=amp, n_modes=6)
        assert abs(fam.nu - 1.0) < 1e-10
        rep = check_noise_assumptions(fam)
        assert rep.all_passed
        nu_dir = parabolicity_nu(fam, "temp", method="directions")
        assert abs(nu_dir - fam.nu) <= 0.05 * fam.nu

    def test_parabolicity_violation(self):
        with pytest.raises(ParabolicityViolation):
            build_kraichnan_family(GRID, amplitude=1.5, n_modes=4)

    def test_vertical_modes_vanish_on_faces(self):
        fam = build_kraichnan_family(GRID, amplitude=0.5, n_modes=12)
        top = fam.vel_modes[:, 2] @ GRID.trace_top_weights
        bot = fam.vel_modes[:, 2] @ GRID.trace_bottom_weights
        assert np.max(np.abs(top)) < 1e-8
        assert np.max(np.abs(bot)) < 1e-8


class TestCheckAssumptions:
    def test_zero_family_passes(self):
        rep = check_noise_assumptions(zero_family(GRID))
        assert rep.all_passed
        norm_vals = [c.value for c in rep.checks if c.kind == "norm"]
        assert max(norm_vals) == 0.0

    def test_z_dependence_flagged(self):
        fam = zero_family(GRID)
        bad = fam.vel_modes.copy()
        bad[0, 0] = np.linspace(0, 1, GRID.nz)  # horizontal component varying in z
        fam2 = NoiseFamily(GRID, bad, fam.temp_modes, None, ITO, 1e9, 1.0, 1.0)
        rep = check_noise_assumptions(fam2)
        failed = {c.name for c in rep.checks if not c.passed}
        assert "z_independence_vel_H" in failed

    def test_default_family_passes(self):
        fam = build_kraichnan_family(GRID, amplitude=0.5, n_modes=6)
        rep = check_noise_assumptions(fam)
        assert rep.all_passed, rep.table()

    def test_table_renders(self):
        txt = check_noise_assumptions(zero_family(GRID)).table()
        assert "ellipticity" in txt


class TestTurbulentPressure:
    def test_no_coupling_gives_zero(self):
        fam = build_kraichnan_family(GRID, amplitude=0.4, n_modes=4)
        v = Field(GRID, np.random.default_rng(0).standard_normal((2, 16, 16, 8)),
                  bc=NEUMANN_BOTH)
        out = turbulent_pressure(fam, v)
        assert np.max(np.abs(out.values)) == 0.0

    def test_constant_velocity_gives_zero(self):
        fam = build_kraichnan_family(GRID, amplitude=0.4, n_modes=4,
                                     pressure_coupling_amplitude=0.3)
        v = Field(GRID, np.ones((2, 16, 16, 8)), bc=NEUMANN_BOTH)
        out = turbulent_pressure(fam, v)
        assert np.max(np.abs(out.values)) < 1e-13

    def test_dense_oracle(self):
        """Independent dense assembly: DFT matrices built from explicit formulas."""
        g = GridSpec(8, 8, 8)
        fam = build_kraichnan_family(g, amplitude=0.4, n_modes=2,
                                     pressure_coupling_amplitude=0.25)
        rng = np.random.default_rng(3)
        X, Y, Z = g.meshgrid()
        vvals = np.stack([np.sin(X) * np.cos(Y), np.cos(X + Y)]) * (1 + 0 * Z)
        v = Field(g, vvals, bc=NEUMANN_BOTH)

        out = turbulent_pressure(fam, v).values

        # dense DFT differentiation matrix (no np.fft)
        def dft_deriv(n, period):
            j = np.arange(n)
            W = np.exp(-2j * np.pi * np.outer(j, j) / n) / n
            k = np.fft.fftfreq(n, d=1.0 / n) * (2 * np.pi / period)
            k[n // 2] = 0.0
            Winv = np.exp(2j * np.pi * np.outer(j, j) / n)
            return np.real(Winv @ np.diag(1j * k) @ W)

        Dx = dft_deriv(g.nx, g.lx)
        Dy = dft_deriv(g.ny, g.ly)
        D3 = g.d1_matrix(NEUMANN_BOTH)
        expected = np.zeros((2, g.nx, g.ny))
        for n in range(fam.n_modes):
            tn = np.zeros((2, g.nx, g.ny, g.nz))
            for c in range(2):
                dxv = np.einsum("ab,byz->ayz", Dx, vvals[c])
                dyv = np.einsum("ab,xbz->xaz", Dy, vvals[c])
                d3v = vvals[c] @ D3.T
                tn[c] = (fam.vel_modes[n, 0] * dxv + fam.vel_modes[n, 1] * dyv
                         + fam.vel_modes[n, 2] * d3v)
            tbar = tn.mean(axis=-1)
            # dense curl-free part: solve Poisson for potential via pinv of laplacian
            div = np.einsum("ab,by->ay", Dx, tbar[0]) + np.einsum("ab,xb->xa", Dy, tbar[1])
            L = np.kron(Dx @ Dx, np.eye(g.ny)) + np.kron(np.eye(g.nx), Dy @ Dy)
            psi = np.linalg.pinv(L) @ div.reshape(-1)
            psi = psi.reshape(g.nx, g.ny)
            qn = np.stack([np.einsum("ab,by->ay", Dx, psi), np.einsum("ab,xb->xa", Dy, psi)])
            expected += np.einsum("lmxy,mxy->lxy", fam.pressure_coupling[n], qn)
        assert np.max(np.abs(out[..., 0] - expected)) < 1e-8


class TestStratonovichCorrections:
    def test_requires_stratonovich(self):
        fam = build_kraichnan_family(GRID, amplitude=0.3, n_modes=4, mode=ITO)
        with pytest.raises(ModeMismatch):
            stratonovich_corrections(fam)

    def test_zero_modes_excess_vanishes(self):
        fam = zero_family(GRID, mode=STRATONOVICH)
        ops = stratonovich_corrections(fam)
        v = Field(GRID, np.random.default_rng(1).standard_normal((2, 16, 16, 8)),
                  bc=NEUMANN_BOTH)
        exc = apply_correction_excess(ops, v, "vel")
        assert np.max(np.abs(exc)) < 1e-13
        th = Field(GRID, np.random.default_rng(2).standard_normal((1, 16, 16, 8)),
                   bc=NEUMANN_BOTH)
        exc_t = apply_correction_excess(ops, th, "temp")
        assert np.max(np.abs(exc_t)) < 1e-13

    def test_constant_mode_closed_form(self):
        # constant mode (c,0,0): full operator = Laplacian + (c^2/2) d11
        c = 0.8
        fam = constant_family(GRID, (c, 0.0, 0.0), mode=STRATONOVICH)
        ops = stratonovich_corrections(fam)
        X, Y, _ = GRID.meshgrid()
        v = Field(GRID, np.stack([np.sin(X) * np.cos(Y), np.cos(2 * X)]), bc=NEUMANN_BOTH)
        out = apply_velocity_correction(ops, v)
        lap = np.stack([-2 * np.sin(X) * np.cos(Y), -4 * np.cos(2 * X)])
        d11 = np.stack([-np.sin(X) * np.cos(Y), -4 * np.cos(2 * X)])
        expect = lap + (c**2 / 2) * d11
        assert np.max(np.abs(out - expect)) < 1e-9

    def test_nested_transport_identity(self):
        # full correction = Laplacian + 1/2 sum (m.grad)((m.grad) v) for z-independent modes
        fam = build_kraichnan_family(GRID, amplitude=0.5, n_modes=4,
                                     mode=STRATONOVICH, vertical_fraction=0.0)
        ops = stratonovich_corrections(fam)
        X, Y, _ = GRID.meshgrid()
        v = Field(GRID, np.stack([np.sin(X + Y), np.cos(X)]), bc=NEUMANN_BOTH)
        out = apply_velocity_correction(ops, v)

        from hydroldp.grid import laplacian_h

        nested = laplacian_h(GRID, v.values) + dz_apply(GRID.d2_matrix(v.bc), v.values)
        for n in range(fam.n_modes):
            t1 = transport_term(GRID, fam.vel_modes[n], v)
            t1f = Field(GRID, t1, bc=None)
            # inner field has no bc; use the free stencil for d3 to mirror coefficients
            d3 = dz_apply(GRID.d1_free_matrix, t1)
            t2 = (fam.vel_modes[n, 0] * dx(GRID, t1) + fam.vel_modes[n, 1] * dy(GRID, t1)
                  + fam.vel_modes[n, 2] * d3)
            nested += 0.5 * t2
        assert np.max(np.abs(out - nested)) < 1e-7

    def test_divfree_temp_modes_divergence_form(self):
        fam = build_kraichnan_family(GRID, amplitude=0.5, n_modes=6, mode=STRATONOVICH)
        ops = stratonovich_corrections(fam)
        # low-order drift from div(psi) must vanish for a divergence-free family
        assert np.max(np.abs(ops.drift_temp)) < 1e-10

    def test_spd_bounds(self):
        fam = build_kraichnan_family(GRID, amplitude=0.7, n_modes=6, mode=STRATONOVICH)
        ops = stratonovich_corrections(fam)
        eig = np.linalg.eigvalsh(ops.a_vel)
        assert eig.min() >= 1.0 - 1e-12
        assert eig.max() <= 1.0 + fam.nu / 2 + 1e-12

    def test_d3_commutes_with_horizontal_transport(self):
        fam = build_kraichnan_family(GRID, amplitude=0.5, n_modes=4, vertical_fraction=0.0)
        rng = np.random.default_rng(5)
        v = Field(GRID, rng.standard_normal((2, 16, 16, 8)), bc=NEUMANN_BOTH)
        coeff = fam.vel_modes[0]
        hterm = coeff[0] * dx(GRID, v.values) + coeff[1] * dy(GRID, v.values)
        d3 = GRID.d1_matrix(NEUMANN_BOTH)
        lhs = dz_apply(d3, hterm)
        d3v = dz_apply(d3, v.values)
        rhs = coeff[0] * dx(GRID, d3v) + coeff[1] * dy(GRID, d3v)
        assert np.max(np.abs(lhs - rhs)) < 1e-12


class TestNoiseIO:
    def test_round_trip_bits(self, tmp_path):
        fam = build_kraichnan_family(GRID, amplitude=0.45, n_modes=6,
                                     mode=STRATONOVICH, pressure_coupling_amplitude=0.2)
        p = tmp_path / "fam.noise"
        write_noise_family(p, fam)
        back = read_noise_family(p)
        assert back.vel_modes.tobytes() == fam.vel_modes.tobytes()
        assert back.temp_modes.tobytes() == fam.temp_modes.tobytes()
        assert back.pressure_coupling.tobytes() == fam.pressure_coupling.tobytes()
        assert back.mode == fam.mode
        assert back.nu == fam.nu
        assert back.bound_m == fam.bound_m
