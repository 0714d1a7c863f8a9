"""Time integrator tests: operator assembly oracles, degeneracies, convergence,
Ito-Stratonovich consistency, blowup policy."""

import numpy as np
import pytest

from hydroldp.errors import BlowupDetected, ControlBudgetExceeded, InvalidField
from hydroldp.grid import NEUMANN_BOTH, Field, GridSpec, robin_top, scalar
from hydroldp.noise import ITO, STRATONOVICH, build_kraichnan_family
from hydroldp.operators import BuoyancyProfile
from hydroldp.rng import noise_increments
from hydroldp.stepping import (
    ForcingSpec,
    State,
    StepperConfig,
    Trajectory,
    diffusion,
    drift,
    heun_reference_step,
    integrate,
    step_skeleton,
    step_spde,
    step_tilted,
)

GRID = GridSpec(8, 8, 8)


def make_state(grid, amp=0.1, seed=0, alpha=0.5):
    from hydroldp.grid import dealias
    from hydroldp.operators import project_values

    rng = np.random.default_rng(seed)
    v = dealias(grid, amp * rng.standard_normal((2, grid.nx, grid.ny, grid.nz)))
    v = project_values(grid, v)
    th = dealias(grid, amp * rng.standard_normal((1, grid.nx, grid.ny, grid.nz)))
    return State(
        Field(grid, v, bc=NEUMANN_BOTH),
        Field(grid, th, bc=robin_top(alpha)),
    )


def harmonic_state(grid, amp=0.1, alpha=0.0):
    """v = (amp sin(y) , 0), z-constant: nonlinear terms vanish identically."""
    X, Y, _ = grid.meshgrid()
    v = np.stack([amp * np.sin(Y), np.zeros_like(Y)])
    th = np.zeros((1, grid.nx, grid.ny, grid.nz))
    return State(Field(grid, v, bc=NEUMANN_BOTH), Field(grid, th, bc=robin_top(alpha)))


def default_family(grid=GRID, mode=ITO, n=4):
    return build_kraichnan_family(grid, amplitude=0.4, n_modes=n, mode=mode)


KAPPA = BuoyancyProfile.constant(GRID)
NONE_FORCING = ForcingSpec.none()


class TestDrift:
    def test_zero_equilibrium(self):
        st = State.rest(GRID, alpha=0.5)
        dv, dth = drift(st, default_family(), KAPPA, NONE_FORCING)
        assert np.max(np.abs(dv.values)) == 0.0
        assert np.max(np.abs(dth.values)) == 0.0

    def test_linear_terms_analytic(self):
        # v = 0, theta = cos(x) z-constant, alpha = 0, buoyancy 1:
        # dtheta = -theta; dv = projected pressure gradient with analytic form
        g = GRID
        X, _, Z = g.meshgrid()
        st = State(
            Field(g, np.zeros((2, g.nx, g.ny, g.nz)), bc=NEUMANN_BOTH),
            scalar(g, np.cos(X), bc=robin_top(0.0)),
        )
        fam = default_family()
        dv, dth = drift(st, fam, KAPPA, NONE_FORCING)
        assert np.max(np.abs(dth.values[0] + np.cos(X))) < 1e-6
        expect = -np.sin(X) * (Z + g.h - g.h / 2.0)
        assert np.max(np.abs(dv.values[0] - expect)) < 1e-6
        assert np.max(np.abs(dv.values[1])) < 1e-10

    def test_dense_oracle(self):
        """Straightforward dense evaluation (explicit DFT matrices, no np.fft)."""
        g = GRID
        st = make_state(g, amp=0.05, seed=7, alpha=0.4)
        fam = default_family()
        dv, dth = drift(st, fam, KAPPA, NONE_FORCING, use_dealias=False)

        def dft_deriv(n, period):
            j = np.arange(n)
            W = np.exp(-2j * np.pi * np.outer(j, j) / n) / n
            k = np.fft.fftfreq(n, d=1.0 / n) * (2 * np.pi / period)
            k[n // 2] = 0.0
            return np.real(np.exp(2j * np.pi * np.outer(j, j) / n) @ np.diag(1j * k) @ W)

        Dx, Dy = dft_deriv(g.nx, g.lx), dft_deriv(g.ny, g.ly)
        D3n = g.d1_matrix(NEUMANN_BOTH)
        D3r = g.d1_matrix(robin_top(0.4))
        D2n = g.d2_matrix(NEUMANN_BOTH)
        D2r = g.d2_matrix(robin_top(0.4))
        C = g.cumint_matrix

        def ddx(a):
            return np.einsum("ab,byz->ayz", Dx, a)

        def ddy(a):
            return np.einsum("ab,xbz->xaz", Dy, a)

        v, th = st.v.values, st.theta.values[0]
        # projection via dense 2-D Poisson solve
        def project(dvals):
            mean = dvals.mean(axis=-1)
            div = ddx(mean[0][..., None])[..., 0] + ddy(mean[1][..., None])[..., 0]
            L = np.kron(Dx @ Dx, np.eye(g.ny)) + np.kron(np.eye(g.nx), Dy @ Dy)
            psi = (np.linalg.pinv(L) @ div.reshape(-1)).reshape(g.nx, g.ny)
            q = np.stack([ddx(psi[..., None])[..., 0], ddy(psi[..., None])[..., 0]])
            return dvals - q[..., None]

        lap_v = ddx(ddx(v[0])) + ddy(ddy(v[0])), ddx(ddx(v[1])) + ddy(ddy(v[1]))
        lap_v = np.stack(lap_v) + v @ D2n.T
        lap_t = ddx(ddx(th)) + ddy(ddy(th)) + th @ D2r.T
        d3v = v @ D3n.T
        d3t = th @ D3r.T
        divh = ddx(v[0]) + ddy(v[1])
        w = -(divh @ C.T)
        adv = np.stack([v[0] * ddx(v[c]) + v[1] * ddy(v[c]) for c in range(2)])
        press_int = th @ C.T
        press = np.stack([ddx(press_int), ddy(press_int)])
        ev = project(-adv - w * d3v + press)
        expected_dv = lap_v + ev
        expected_dth = lap_t - (v[0] * ddx(th) + v[1] * ddy(th)) - w * d3t

        assert np.max(np.abs(dv.values - expected_dv)) < 1e-8
        assert np.max(np.abs(dth.values[0] - expected_dth)) < 1e-8

    def test_nan_diagnosis(self):
        st = make_state(GRID, seed=1)
        bad = st.v.values.copy()
        bad[0, 0, 0, 0] = np.inf
        stbad = State(Field(GRID, bad, bc=NEUMANN_BOTH), st.theta)
        with pytest.raises(BlowupDetected):
            drift(stbad, default_family(), KAPPA, NONE_FORCING)


class TestDiffusion:
    def test_constant_state_zero(self):
        g = GRID
        st = State(
            Field(g, np.ones((2, g.nx, g.ny, g.nz)), bc=NEUMANN_BOTH),
            Field(g, 2.0 * np.ones((1, g.nx, g.ny, g.nz)), bc=robin_top(0.0)),
        )
        bv, bt = diffusion(st, default_family(), NONE_FORCING)
        assert np.max(np.abs(bv)) < 1e-12
        assert np.max(np.abs(bt)) < 1e-12

    def test_constant_mode_analytic(self):
        # single constant mode (c,0,0): B v = P[c d1 v]
        from hydroldp.operators import project_values
        from test_noise import constant_family

        g = GRID
        c = 0.6
        fam = constant_family(g, (c, 0.0, 0.0))
        X, Y, _ = g.meshgrid()
        vv = np.stack([np.sin(X) * np.cos(Y), np.cos(X)])
        st = State(Field(g, vv, bc=NEUMANN_BOTH),
                   Field(g, np.zeros((1, g.nx, g.ny, g.nz)), bc=robin_top(0.0)))
        bv, _ = diffusion(st, fam, NONE_FORCING)
        expect = project_values(g, c * np.stack([np.cos(X) * np.cos(Y), -np.sin(X)]))
        assert np.max(np.abs(bv[0] - expect)) < 1e-8

    def test_affine_offset(self):
        g = GRID
        fam = default_family()
        offs = np.zeros((fam.n_modes, 2, g.nx, g.ny, g.nz))
        X, Y, _ = g.meshgrid()
        offs[0, 0] = np.sin(Y)  # mean-divergence-free: projection leaves it alone
        forcing = ForcingSpec(g_v_offsets=offs)
        st = State.rest(g, alpha=0.0)
        bv, _ = diffusion(st, fam, forcing)
        assert np.max(np.abs(bv[0, 0] - np.sin(Y))) < 1e-10
        assert np.max(np.abs(bv[1:])) < 1e-12


class TestStepDegeneracies:
    def test_spde_eps0_equals_skeleton_zero_control(self):
        st = make_state(GRID, seed=3)
        cfg = StepperConfig(dt=0.01, eps=0.0)
        fam = default_family()
        a = step_spde(st, cfg, fam, KAPPA, NONE_FORCING, seed=5, path=0, step_index=0)
        b = step_skeleton(st, cfg, fam, KAPPA, NONE_FORCING, np.zeros(fam.n_modes))
        assert a.v.values.tobytes() == b.v.values.tobytes()
        assert a.theta.values.tobytes() == b.theta.values.tobytes()

    def test_tilted_degeneracies(self):
        st = make_state(GRID, seed=4)
        fam = default_family()
        cfg0 = StepperConfig(dt=0.01, eps=0.0)
        a = step_tilted(st, cfg0, fam, KAPPA, NONE_FORCING, np.ones(fam.n_modes) * 0.3,
                        seed=1, step_index=0)
        b = step_skeleton(st, cfg0, fam, KAPPA, NONE_FORCING, np.ones(fam.n_modes) * 0.3)
        assert a.v.values.tobytes() == b.v.values.tobytes()

        cfg1 = StepperConfig(dt=0.01, eps=0.1)
        c = step_tilted(st, cfg1, fam, KAPPA, NONE_FORCING, np.zeros(fam.n_modes),
                        seed=9, path=2, step_index=3)
        d = step_spde(st, cfg1, fam, KAPPA, NONE_FORCING, seed=9, path=2, step_index=3)
        assert c.v.values.tobytes() == d.v.values.tobytes()
        assert c.theta.values.tobytes() == d.theta.values.tobytes()

    def test_seeded_reproducibility(self):
        st = make_state(GRID, seed=5)
        cfg = StepperConfig(dt=0.01, eps=0.1)
        fam = default_family()
        runs = [
            integrate("spde", st, 0.05, cfg, fam, KAPPA, NONE_FORCING, seed=11, path=3)
            for _ in range(2)
        ]
        assert runs[0].final_state.v.values.tobytes() == runs[1].final_state.v.values.tobytes()


class TestHeatDecay:
    def test_exact_scalar_decay(self):
        # single diffusive harmonic: one implicit Euler step vs exp(-lam dt)
        g = GRID
        st = harmonic_state(g, amp=1.0)
        lam = 1.0  # (0,1) mode, z-constant
        fam = build_kraichnan_family(g, amplitude=0.0, n_modes=1)
        for dt in (0.02, 0.01, 0.005):
            cfg = StepperConfig(dt=dt, eps=0.0)
            out = step_spde(st, cfg, fam, KAPPA, NONE_FORCING)
            ratio = np.max(np.abs(out.v.values)) / np.max(np.abs(st.v.values))
            assert abs(ratio - np.exp(-lam * dt)) < 0.51 * lam**2 * dt**2

    def test_energy_decay_mean_free(self):
        g = GRID
        st = make_state(g, amp=0.2, seed=8)
        cfg = StepperConfig(dt=0.01, eps=0.0)
        fam = build_kraichnan_family(g, amplitude=0.0, n_modes=1)
        tr = integrate("skeleton", st, 0.2, cfg, fam, KAPPA, NONE_FORCING)
        assert tr.samples[-1].l2_v <= tr.samples[0].l2_v
        assert np.isfinite(tr.mr_norm)

    def test_t_zero_trajectory(self):
        st = make_state(GRID, seed=9)
        cfg = StepperConfig(dt=0.01)
        fam = default_family()
        tr = integrate("skeleton", st, 0.0, cfg, fam, KAPPA, NONE_FORCING)
        assert len(tr.states) == 1
        assert tr.states[0] is st


class TestConstraintAndBC:
    def test_constraint_preserved(self):
        st = make_state(GRID, amp=0.3, seed=10)
        cfg = StepperConfig(dt=0.01, eps=0.2)
        fam = default_family()
        tr = integrate("spde", st, 0.1, cfg, fam, KAPPA, NONE_FORCING, seed=2)
        scale = max(1.0, np.max(np.abs(st.v.values)))
        assert tr.max_constraint_residual <= 1e-8 * scale

    def test_smoke_no_blowup_16(self):
        g = GridSpec(16, 16, 8)
        st = make_state(g, amp=0.1, seed=11)
        cfg = StepperConfig(dt=0.01, eps=0.1)
        fam = build_kraichnan_family(g, amplitude=0.4, n_modes=4)
        tr = integrate("spde", st, 0.5, cfg, fam,
                       BuoyancyProfile.constant(g), NONE_FORCING, seed=3)
        assert np.isfinite(tr.mr_norm)

    def test_blowup_raises(self):
        g = GRID
        st = make_state(g, amp=0.1, seed=12)
        # wildly unstable forcing: exponential growth hits the threshold
        forcing = ForcingSpec(lin_v=200.0, bound=1e3)
        cfg = StepperConfig(dt=0.05, eps=0.0)
        fam = default_family()
        with pytest.raises(BlowupDetected) as ei:
            integrate("skeleton", st, 20.0, cfg, fam, KAPPA, forcing)
        assert ei.value.step is not None


class TestControl:
    def test_budget_enforced(self):
        st = make_state(GRID, seed=13)
        cfg = StepperConfig(dt=0.01, eps=0.1)
        fam = default_family()
        control = np.ones((10, fam.n_modes))
        with pytest.raises(ControlBudgetExceeded):
            integrate("tilted", st, 0.1, cfg, fam, KAPPA, NONE_FORCING,
                      control=control, budget=0.1)

    def test_nonfinite_control_rejected(self):
        st = make_state(GRID, seed=14)
        cfg = StepperConfig(dt=0.01)
        fam = default_family()
        with pytest.raises(InvalidField):
            step_skeleton(st, cfg, fam, KAPPA, NONE_FORCING,
                          np.array([np.nan, 0, 0, 0]))

    def test_duhamel_response(self):
        # additive single-mode control on a linear mode: Duhamel quadrature oracle
        g = GridSpec(4, 4, 4)
        _, Y, _ = g.meshgrid()
        e = np.stack([np.sin(Y), np.zeros_like(Y)])
        offs = e[None]
        fam_z = build_kraichnan_family(g, amplitude=0.0, n_modes=1)
        forcing = ForcingSpec(g_v_offsets=offs)
        lam = 1.0
        T, dt = 0.5, 2e-4
        n = round(T / dt)
        t = np.arange(n) * dt
        phi = 0.3 * np.cos(2 * np.pi * t / T)
        cfg = StepperConfig(dt=dt)
        st = State.rest(g, alpha=0.0)
        tr = integrate("skeleton", st, T, cfg, fam_z,
                       BuoyancyProfile.constant(g), forcing,
                       control=phi[:, None], store_states=True, sample_every=n)
        # continuum Duhamel: a(T) = int exp(-lam (T-s)) phi(s) ds
        svals = t + dt / 2
        duhamel = np.sum(np.exp(-lam * (T - svals)) * phi) * dt
        got = tr.final_state.v.values[0]
        coeff = np.max(np.abs(got)) * np.sign(got.flat[np.argmax(np.abs(got))])
        # project onto the mode profile
        amp = np.sum(got * np.sin(Y)) / np.sum(np.sin(Y) ** 2)
        assert abs(amp - duhamel) < 1e-4 * max(1.0, abs(duhamel))


class TestSelfConvergence:
    def test_skeleton_first_order_in_dt(self):
        g = GRID
        st = make_state(g, amp=0.25, seed=15)
        fam = default_family()
        T = 0.1
        phi0 = 0.8
        finals = []
        dts = [T / 8, T / 16, T / 32, T / 64]
        for dt in dts:
            n = round(T / dt)
            control = phi0 * np.ones((n, fam.n_modes))
            cfg = StepperConfig(dt=dt)
            tr = integrate("skeleton", st, T, cfg, fam, KAPPA, NONE_FORCING,
                           control=control)
            finals.append(tr.final_state.v.values)
        errs = [np.sqrt(np.sum((finals[i] - finals[i + 1]) ** 2)) for i in range(3)]
        slope = np.polyfit(np.log(dts[:3]), np.log(errs), 1)[0]
        assert 0.85 <= slope <= 1.15

    def test_spatial_second_order_vs_heat(self):
        # pure vertical-profile decay: error in nz is second order
        errs = []
        T, dt = 0.1, 2e-5
        for nz in (6, 12, 24):
            g = GridSpec(4, 4, nz)
            _, Y, Z = g.meshgrid()
            prof = np.cos(np.pi * (Z + g.h) / g.h)
            v = np.stack([0.5 * np.sin(Y) * prof, np.zeros_like(Y)])
            st = State(Field(g, v, bc=NEUMANN_BOTH),
                       Field(g, np.zeros((1, g.nx, g.ny, nz)), bc=robin_top(0.0)))
            fam = build_kraichnan_family(g, amplitude=0.0, n_modes=1)
            cfg = StepperConfig(dt=dt)
            tr = integrate("skeleton", st, T, cfg, fam,
                           BuoyancyProfile.constant(g), NONE_FORCING,
                           store_states=True, sample_every=round(T / dt))
            lam = 1.0 + (np.pi / g.h) ** 2
            exact = np.exp(-lam * T)
            got = np.sqrt(tr.samples[-1].l2_v / tr.samples[0].l2_v)
            errs.append(abs(got - exact))
        slopes = np.diff(np.log(errs)) / np.log(0.5)
        assert np.all(slopes > 1.7), (errs, slopes)
        assert np.all(slopes < 2.4)


class TestSmallNoiseContraction:
    def test_tilted_paths_contract_to_skeleton(self):
        # median C([0,T]; H)-distance between tilted paths and the skeleton
        # trajectory decreases with the noise intensity (O(sqrt(eps)) scale)
        g = GridSpec(8, 8, 6)
        st = make_state(g, amp=0.25, seed=20, alpha=0.3)
        fam = build_kraichnan_family(g, amplitude=0.4, n_modes=4)
        buoy = BuoyancyProfile.constant(g)
        T, dt = 0.1, 0.01
        n = round(T / dt)
        control = 0.5 * np.ones((n, fam.n_modes))
        skel = integrate("skeleton", st, T, StepperConfig(dt=dt), fam, buoy,
                         NONE_FORCING, control=control, store_states=True)
        medians = {}
        for eps in (1e-3, 1e-4):
            cfg = StepperConfig(dt=dt, eps=eps)
            dists = []
            for p in range(32):
                tr = integrate("tilted", st, T, cfg, fam, buoy, NONE_FORCING,
                               control=control, seed=6, path=p,
                               ref_states=skel.states)
                dists.append(np.max(tr.ref_distance))
            medians[eps] = float(np.median(dists))
        assert medians[1e-4] < medians[1e-3]
        # O(sqrt(eps)): a decade in eps shrinks the median by roughly sqrt(10)
        ratio = medians[1e-3] / medians[1e-4]
        assert 1.8 <= ratio <= 6.0, medians


class TestItoStratonovich:
    def test_common_noise_strong_error_order(self):
        g = GRID
        st = make_state(g, amp=0.2, seed=16, alpha=0.3)
        fam = build_kraichnan_family(g, amplitude=0.4, n_modes=4, mode=STRATONOVICH)
        buoy = BuoyancyProfile.constant(g)
        T = 0.125
        eps = 0.05
        errs = []
        dts = [T / 2**k for k in (4, 5, 6)]
        for dt in dts:
            n = round(T / dt)
            cfg = StepperConfig(dt=dt, eps=eps, mode=STRATONOVICH)
            a = st
            b = st
            for k in range(n):
                xi = noise_increments(21, 0, k, fam.n_modes)
                a = step_spde(a, cfg, fam, buoy, NONE_FORCING, seed=21, step_index=k)
                b = heun_reference_step(b, cfg, fam, buoy, NONE_FORCING, xi)
            err = np.sqrt(np.sum((a.v.values - b.v.values) ** 2)
                          + np.sum((a.theta.values - b.theta.values) ** 2))
            errs.append(err)
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert slope >= 0.8, (errs, slope)
