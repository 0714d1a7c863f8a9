"""Energy functionals, Gronwall budgets, tail scans."""

import numpy as np
import pytest

from hydroldp.diagnostics import (
    EnergySample,
    gronwall_budget,
    sample_energies,
    tail_probability_scan,
)
from hydroldp.grid import NEUMANN_BOTH, Field, GridSpec, robin_top, scalar
from hydroldp.noise import build_kraichnan_family
from hydroldp.operators import BuoyancyProfile
from hydroldp.stepping import ForcingSpec, State, StepperConfig, integrate

GRID = GridSpec(16, 16, 8)


def zero_theta(grid, alpha=0.0):
    return Field(grid, np.zeros((1, grid.nx, grid.ny, grid.nz)), bc=robin_top(alpha))


class TestSampleEnergies:
    def test_zero_state(self):
        v = Field(GRID, np.zeros((2, 16, 16, 8)), bc=NEUMANN_BOTH)
        s = sample_energies(v, zero_theta(GRID))
        assert s.l2_v == 0 and s.h2_v == 0 and s.cross == 0

    def test_single_harmonic_closed_form(self):
        _, Y, _ = GRID.meshgrid()
        a = 0.7
        v = Field(GRID, np.stack([a * np.sin(Y), np.zeros_like(Y)]), bc=NEUMANN_BOTH)
        s = sample_energies(v, zero_theta(GRID))
        vol = GRID.lx * GRID.ly * GRID.h
        assert abs(s.l2_v - a**2 * vol / 2) < 1e-12
        # |grad| of sin is cos: same mean square; h1_vbar sees the z-constant mean
        assert abs(s.grad_v - a**2 * vol / 2) < 1e-12
        assert abs(s.h1_vbar - 2 * (a**2 * GRID.lx * GRID.ly / 2)) < 1e-12

    def test_decomposition_consistency(self):
        rng = np.random.default_rng(0)
        v = Field(GRID, rng.standard_normal((2, 16, 16, 8)), bc=NEUMANN_BOTH)
        s = sample_energies(v, zero_theta(GRID))
        vb = v.values.mean(axis=-1)
        bar_sq = float(np.sum(vb**2)) * GRID.cell_area * GRID.h
        tilde_sq = float(np.sum((v.values - vb[..., None]) ** 2)) * GRID.cell_volume
        assert abs(s.l2_v - (bar_sq + tilde_sq)) <= 1e-10 * s.l2_v

    def test_bar_norm_control(self):
        # discrete |vbar|_{L2(T2)} <= h^{-1/2} |v|_{L2(O)}
        rng = np.random.default_rng(1)
        for seed in range(5):
            v = Field(GRID, np.random.default_rng(seed).standard_normal((2, 16, 16, 8)))
            vb = v.values.mean(axis=-1)
            lhs = np.sqrt(np.sum(vb**2) * GRID.cell_area)
            rhs = np.sqrt(np.sum(v.values**2) * GRID.cell_volume) / np.sqrt(GRID.h)
            assert lhs <= rhs * (1 + 1e-8)

    def test_kadlec_identity_scheme_order(self):
        # <lap v, v>_{H1 pairing} + |v|_{H2}^2 - |v|_{L2}^2 -> 0 at scheme order
        from hydroldp.diagnostics import second_derivative_energy
        from hydroldp.grid import dx, dy, dz_apply
        from hydroldp.verify import _h1_pairing

        res = []
        for nz in (16, 32):
            g = GridSpec(8, 8, nz)
            X, Y, Z = g.meshgrid()
            prof = np.cos(np.pi * (Z + g.h) / g.h)
            v = Field(g, np.stack([np.sin(X) * prof, np.cos(Y)]), bc=NEUMANN_BOTH)
            lap = (np.real(np.fft.ifft2(-g.k2h * np.fft.fft2(v.values, axes=(1, 2)),
                                        axes=(1, 2)))
                   + dz_apply(g.d2_matrix(v.bc), v.values))
            pair = _h1_pairing(g, lap, v)
            d3 = dz_apply(g.d1_matrix(v.bc), v.values)
            l2 = np.sum(v.values**2) * g.cell_volume
            grad = (np.sum(dx(g, v.values) ** 2) + np.sum(dy(g, v.values) ** 2)
                    + np.sum(d3**2)) * g.cell_volume
            h2 = l2 + grad + second_derivative_energy(v)
            res.append(abs(pair + h2 - l2))
        assert res[1] < res[0] / 2.5  # second-order residual decay

    def test_energy_identity_heat(self):
        # d/dt |v|^2 + 2 |grad v|^2 = O(dt) per unit time on the linear subproblem
        g = GRID
        _, Y, _ = g.meshgrid()
        v = np.stack([np.sin(Y), np.zeros_like(Y)])
        st = State(Field(g, v, bc=NEUMANN_BOTH), zero_theta(g))
        fam = build_kraichnan_family(g, amplitude=0.0, n_modes=1)
        residues = []
        for dt in (0.02, 0.01, 0.005):
            cfg = StepperConfig(dt=dt)
            tr = integrate("skeleton", st, 10 * dt, cfg, fam,
                           BuoyancyProfile.constant(g), ForcingSpec.none())
            worst = 0.0
            for k in range(1, len(tr.samples)):
                s0, s1 = tr.samples[k - 1], tr.samples[k]
                resid = (s1.l2_v - s0.l2_v) / dt + 2 * s1.grad_v
                worst = max(worst, abs(resid) / max(s0.l2_v, 1e-300))
            residues.append(worst)
        assert residues[-1] < residues[0]
        assert residues[-1] < 0.05


class TestGronwall:
    def _decay_traj(self):
        g = GRID
        rng = np.random.default_rng(3)
        from hydroldp.grid import dealias
        from hydroldp.operators import project_values

        v = project_values(g, dealias(g, 0.2 * rng.standard_normal((2, 16, 16, 8))))
        st = State(Field(g, v, bc=NEUMANN_BOTH), zero_theta(g))
        fam = build_kraichnan_family(g, amplitude=0.0, n_modes=1)
        return integrate("skeleton", st, 0.2, StepperConfig(dt=0.01), fam,
                         BuoyancyProfile.constant(g), ForcingSpec.none())

    def test_pure_decay_zero_constant(self):
        budget = gronwall_budget(self._decay_traj(), level="L2", constant=0.0)
        assert budget.first_violation is None
        assert np.all(budget.margin >= -1e-9)

    def test_fit_bounded_constant_with_control(self):
        g = GRID
        rng = np.random.default_rng(4)
        from hydroldp.grid import dealias
        from hydroldp.operators import project_values

        v = project_values(g, dealias(g, 0.2 * rng.standard_normal((2, 16, 16, 8))))
        st = State(Field(g, v, bc=NEUMANN_BOTH), zero_theta(g, alpha=0.3))
        fam = build_kraichnan_family(g, amplitude=0.4, n_modes=4)
        n = 20
        control = 0.6 * np.ones((n, 4))
        tr = integrate("skeleton", st, 0.2, StepperConfig(dt=0.01), fam,
                       BuoyancyProfile.constant(g), ForcingSpec.none(),
                       control=control)
        for level in ("L2", "Intermediate", "H1"):
            budget = gronwall_budget(tr, level=level, control=control)
            assert budget.constant <= 2.0**10
            assert budget.first_violation is None, level

    def test_injected_jump_flagged(self):
        tr = self._decay_traj()
        tr.samples[10].l2_v += 100.0  # adversarial jump
        budget = gronwall_budget(tr, level="L2", constant=0.0)
        assert budget.first_violation is not None
        assert abs(budget.first_violation - tr.samples[10].t) < 1e-12


class TestTailScan:
    def _traj(self, mr, eps):
        t = object.__new__(type("T", (), {}))
        from hydroldp.stepping import Trajectory

        return Trajectory(times=np.array([0.0]), samples=[], states=None, eps=eps,
                          mr_norm=mr, h_norm_series=np.array([0.0]),
                          v_norm_sq_series=np.array([0.0]))

    def test_requires_eight(self):
        with pytest.raises(ValueError):
            tail_probability_scan([self._traj(1.0, 0.1)] * 7, [0.5])

    def test_step_function_for_identical(self):
        ens = [self._traj(2.0, 0.1) for _ in range(10)]
        rows = tail_probability_scan(ens, [1.0, 2.0, 3.0])
        probs = {r["gamma"]: r["probability"] for r in rows}
        assert probs[1.0] == 1.0
        assert probs[2.0] == 0.0  # strict exceedance
        assert probs[3.0] == 0.0

    def test_low_gamma_probability_one(self):
        ens = [self._traj(1.0 + 0.1 * i, 0.2) for i in range(12)]
        rows = tail_probability_scan(ens, [0.0])
        assert all(r["probability"] == 1.0 for r in rows)

    def test_monotone_in_gamma_and_grouped_by_eps(self):
        rng = np.random.default_rng(5)
        ens = [self._traj(float(rng.lognormal()), eps)
               for eps in (0.05, 0.1) for _ in range(32)]
        gammas = np.linspace(0, 5, 11)
        rows = tail_probability_scan(ens, gammas)
        for eps in (0.05, 0.1):
            ps = [r["probability"] for r in rows if r["eps"] == eps]
            assert all(a >= b for a, b in zip(ps, ps[1:]))
            assert all(r["count"] == 32 for r in rows if r["eps"] == eps)
