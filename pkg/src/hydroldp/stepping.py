"""Evolution operator assembly and IMEX time stepping.

Three problems share one step kernel: the stochastic system, the deterministic
controlled (skeleton) system, and the tilted system carrying both a control
drift and noise.  The stiff linear part (the full Laplacian) is treated
implicitly by per-horizontal-mode vertical tridiagonal solves; transport,
nonlinear, Stratonovich-correction and noise terms are explicit.  Setting the
noise intensity or the control to zero reproduces the simpler problems bit for
bit because the corresponding terms are skipped, not multiplied by zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np

from .errors import BlowupDetected, ControlBudgetExceeded, InvalidField, SolverError
from .grid import (
    NEUMANN_BOTH,
    BoundaryCondition,
    Field,
    GridSpec,
    _top_ghost_coeff,
    dealias,
    dx,
    dy,
    dz_apply,
    hmul,
    laplacian_h,
)
from .noise import (
    ITO,
    STRATONOVICH,
    CorrectionOperators,
    NoiseFamily,
    apply_correction_excess,
    projected_gradient_correction,
    stratonovich_corrections,
    transport_term,
    turbulent_pressure,
)
from .operators import (
    BuoyancyProfile,
    baroclinic_pressure_gradient,
    barotropic_divergence,
    project_values,
)
from .rng import noise_increments

__all__ = [
    "State",
    "StepperConfig",
    "ForcingSpec",
    "Trajectory",
    "drift",
    "diffusion",
    "step_spde",
    "step_skeleton",
    "step_tilted",
    "heun_reference_step",
    "integrate",
]

BLOWUP_FACTOR = 1e6


# ---------------------------------------------------------------------------
# state and configuration


@dataclass
class State:
    """(v, theta) at time t.  v carries Neumann ghosts, theta Robin-top ghosts."""

    v: Field
    theta: Field
    t: float = 0.0

    def __post_init__(self):
        if self.v.components != 2:
            raise InvalidField("state velocity must have 2 components")
        if self.theta.components != 1:
            raise InvalidField("state temperature must be scalar")
        if self.v.bc is None or self.theta.bc is None:
            raise InvalidField("state fields must carry bc tags")

    @property
    def grid(self) -> GridSpec:
        return self.v.grid

    def constraint_residual(self) -> float:
        """max |div_H of the vertical mean of v| (projection invariant)."""
        return float(np.max(np.abs(barotropic_divergence(self.v))))

    @classmethod
    def rest(cls, grid: GridSpec, alpha: float = 0.0, t: float = 0.0) -> "State":
        from .grid import robin_top

        v = Field(grid, np.zeros((2, grid.nx, grid.ny, grid.nz)), bc=NEUMANN_BOTH)
        th = Field(grid, np.zeros((1, grid.nx, grid.ny, grid.nz)), bc=robin_top(alpha))
        return cls(v, th, t)


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    eps: float = 0.0
    mode: str = ITO
    dealias: bool = True
    scheme: str = "imex_euler_maruyama"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.mode not in (ITO, STRATONOVICH):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.scheme != "imex_euler_maruyama":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.eps > 1.0:
            warnings.warn(
                "eps > 1 leaves the regime where parabolicity of the full system "
                "is guaranteed; proceeding anyway",
                stacklevel=2,
            )


@dataclass(frozen=True, eq=False)
class ForcingSpec:
    """Affine forcing: x-dependent offsets plus linear coefficients.

    F_v     = xi_v + lin_v * v + theta * lin_v_theta + lin_v_dz * d3 v
    F_theta = xi_theta + lin_theta * theta + lin_theta_v . v
    G_v,n   = g_v_offsets[n] + g_v_lin[n] * v
    G_th,n  = g_theta_offsets[n] + g_theta_lin[n] * theta
    """

    xi_v: np.ndarray | None = None
    xi_theta: np.ndarray | None = None
    lin_v: float = 0.0
    lin_v_theta: tuple[float, float] = (0.0, 0.0)
    lin_v_dz: float = 0.0
    lin_theta: float = 0.0
    lin_theta_v: tuple[float, float] = (0.0, 0.0)
    g_v_offsets: np.ndarray | None = None
    g_v_lin: np.ndarray | None = None
    g_theta_offsets: np.ndarray | None = None
    g_theta_lin: np.ndarray | None = None
    bound: float = 10.0

    def __post_init__(self):
        coeffs = [self.lin_v, *self.lin_v_theta, self.lin_v_dz,
                  self.lin_theta, *self.lin_theta_v]
        if self.g_v_lin is not None:
            coeffs += list(np.atleast_1d(self.g_v_lin))
        if self.g_theta_lin is not None:
            coeffs += list(np.atleast_1d(self.g_theta_lin))
        worst = max(abs(float(c)) for c in coeffs)
        if worst > self.bound:
            raise ValueError(
                f"forcing coefficient {worst:g} exceeds declared bound {self.bound:g}"
            )

    @classmethod
    def none(cls) -> "ForcingSpec":
        return cls()

    def is_zero(self) -> bool:
        return all(
            x is None
            for x in (self.xi_v, self.xi_theta, self.g_v_offsets, self.g_theta_offsets)
        ) and all(
            abs(c) == 0.0
            for c in (self.lin_v, *self.lin_v_theta, self.lin_v_dz,
                      self.lin_theta, *self.lin_theta_v)
        ) and self.g_v_lin is None and self.g_theta_lin is None

    def g_v_modes(self, n_modes: int, vvals: np.ndarray) -> np.ndarray | None:
        """Evaluate G_v,n(v) for all modes; None when identically zero."""
        if self.g_v_offsets is None and self.g_v_lin is None:
            return None
        out = np.zeros((n_modes,) + vvals.shape)
        if self.g_v_offsets is not None:
            out += self.g_v_offsets
        if self.g_v_lin is not None:
            out += np.asarray(self.g_v_lin).reshape(-1, 1, 1, 1, 1) * vvals
        return out

    def g_theta_modes(self, n_modes: int, tvals: np.ndarray) -> np.ndarray | None:
        if self.g_theta_offsets is None and self.g_theta_lin is None:
            return None
        out = np.zeros((n_modes,) + tvals.shape[1:])
        if self.g_theta_offsets is not None:
            out += self.g_theta_offsets
        if self.g_theta_lin is not None:
            out += np.asarray(self.g_theta_lin).reshape(-1, 1, 1, 1) * tvals[0]
        return out


# ---------------------------------------------------------------------------
# implicit vertical Helmholtz solves, cached Thomas factorization


@lru_cache(maxsize=64)
def _helmholtz_factors(grid: GridSpec, bc: BoundaryCondition, a: float):
    """Thomas factorization of (I - a (Delta_H + D2)) per horizontal mode."""
    nz, dz = grid.nz, grid.dz
    k2 = grid.k2h[..., 0]  # (nx, ny)
    off = -a / dz**2
    diag = np.empty((grid.nx, grid.ny, nz))
    diag[...] = (1.0 + a * k2 + 2.0 * a / dz**2)[..., None]
    diag[..., 0] = 1.0 + a * k2 + a / dz**2
    c_top = _top_ghost_coeff(bc, dz)
    diag[..., -1] = 1.0 + a * k2 + (2.0 - c_top) * a / dz**2
    cp = np.empty_like(diag)
    inv = np.empty_like(diag)
    denom = diag[..., 0]
    if np.any(np.abs(denom) < 1e-300):
        raise SolverError("singular implicit system (top row)")
    inv[..., 0] = 1.0 / denom
    cp[..., 0] = off * inv[..., 0]
    for i in range(1, nz):
        denom = diag[..., i] - off * cp[..., i - 1]
        if np.any(np.abs(denom) < 1e-300) or not np.all(np.isfinite(denom)):
            raise SolverError(f"singular implicit system at row {i}")
        inv[..., i] = 1.0 / denom
        cp[..., i] = off * inv[..., i]
    return off, cp, inv


def solve_helmholtz(grid: GridSpec, bc: BoundaryCondition, a: float, values: np.ndarray) -> np.ndarray:
    """Solve (I - a*(Delta_H + D2_bc)) x = values, a >= 0."""
    if a == 0.0:
        return values.copy()
    off, cp, inv = _helmholtz_factors(grid, bc, float(a))
    vh = np.fft.fft2(values, axes=(-3, -2))
    nz = grid.nz
    dp = np.empty_like(vh)
    dp[..., 0] = vh[..., 0] * inv[..., 0]
    for i in range(1, nz):
        dp[..., i] = (vh[..., i] - off * dp[..., i - 1]) * inv[..., i]
    x = np.empty_like(vh)
    x[..., -1] = dp[..., -1]
    for i in range(nz - 2, -1, -1):
        x[..., i] = dp[..., i] - cp[..., i] * x[..., i + 1]
    return np.real(np.fft.ifft2(x, axes=(-3, -2)))


# ---------------------------------------------------------------------------
# operator assembly


def laplacian(f: Field) -> np.ndarray:
    """Full Laplacian with the field's vertical bc ghosts."""
    return laplacian_h(f.grid, f.values) + dz_apply(f.grid.d2_matrix(f.bc), f.values)


def _explicit_terms(
    state: State,
    nf: NoiseFamily,
    buoyancy: BuoyancyProfile,
    forcing: ForcingSpec,
    eps: float,
    mode: str,
    use_dealias: bool,
    corrections: CorrectionOperators | None,
) -> tuple[dict, dict]:
    """All explicit drift terms, by name (pre-projection for the v block)."""
    g = state.grid
    v, theta = state.v, state.theta
    vvals, tvals = v.values, theta.values

    dxv, dyv = dx(g, vvals), dy(g, vvals)
    d3v = dz_apply(g.d1_matrix(v.bc), vvals)
    div_h = dxv[0] + dyv[1]
    w = -dz_apply(g.cumint_matrix, div_h)

    terms_v = {
        "advection_v": -(hmul(g, vvals[0], dxv, use_dealias=use_dealias)
                         + hmul(g, vvals[1], dyv, use_dealias=use_dealias)),
        "vertical_transport_v": -hmul(g, w, d3v, use_dealias=use_dealias),
        "pressure": baroclinic_pressure_gradient(buoyancy, theta).values,
    }
    if not forcing.is_zero():
        fv = np.zeros_like(vvals)
        if forcing.xi_v is not None:
            fv = fv + forcing.xi_v
        if forcing.lin_v:
            fv = fv + forcing.lin_v * vvals
        if any(forcing.lin_v_theta):
            fv = fv + np.asarray(forcing.lin_v_theta).reshape(2, 1, 1, 1) * tvals[0]
        if forcing.lin_v_dz:
            fv = fv + forcing.lin_v_dz * d3v
        terms_v["forcing_v"] = fv
    if nf.pressure_coupling is not None:
        gmod = forcing.g_v_modes(nf.n_modes, vvals)
        terms_v["turbulent_pressure"] = turbulent_pressure(nf, v, gmod).values

    dxt, dyt = dx(g, tvals), dy(g, tvals)
    d3t = dz_apply(g.d1_matrix(theta.bc), tvals)
    terms_t = {
        "advection_theta": -(hmul(g, vvals[0], dxt, use_dealias=use_dealias)
                             + hmul(g, vvals[1], dyt, use_dealias=use_dealias)),
        "vertical_transport_theta": -hmul(g, w, d3t, use_dealias=use_dealias),
    }
    if not forcing.is_zero():
        ft = np.zeros_like(tvals)
        if forcing.xi_theta is not None:
            ft = ft + forcing.xi_theta
        if forcing.lin_theta:
            ft = ft + forcing.lin_theta * tvals
        if any(forcing.lin_theta_v):
            ft = ft + (forcing.lin_theta_v[0] * vvals[0]
                       + forcing.lin_theta_v[1] * vvals[1])[None]
        terms_t["forcing_theta"] = ft

    if eps > 0 and mode == STRATONOVICH:
        # Ito drift gained from the Stratonovich product: half the squared
        # projected transport, eps * (1/2) sum_n P T_n (P T_n v).  Expanding the
        # inner projection: the plain nested-transport excess (the second-order
        # coefficients minus the identity, plus the first-order drift) plus
        # HALF the projected-gradient coupling.  The reference midpoint
        # integrator pins this composition; see the consistency checks.
        ops = corrections if corrections is not None else stratonovich_corrections(nf)
        exc_v = apply_correction_excess(ops, v, "vel")
        exc_v = exc_v + 0.5 * projected_gradient_correction(ops, nf, v)
        terms_v["stratonovich_correction_v"] = eps * exc_v
        terms_t["stratonovich_correction_theta"] = eps * apply_correction_excess(
            ops, theta, "temp"
        )
    return terms_v, terms_t


def explicit_rhs(state, nf, buoyancy, forcing, eps, mode, use_dealias=True, corrections=None):
    """Explicit part of the drift: (projected v terms, theta terms)."""
    with np.errstate(invalid="ignore", over="ignore"):
        terms_v, terms_t = _explicit_terms(
            state, nf, buoyancy, forcing, eps, mode, use_dealias, corrections
        )
        ev = project_values(state.grid, sum(terms_v.values()))
        et = sum(terms_t.values())
    return ev, et


def _diagnose_nonfinite(state, nf, buoyancy, forcing, eps, mode, use_dealias, corrections) -> str:
    with np.errstate(invalid="ignore", over="ignore"):
        terms_v, terms_t = _explicit_terms(
            state, nf, buoyancy, forcing, eps, mode, use_dealias, corrections
        )
    for name, arr in {**terms_v, **terms_t}.items():
        if not np.all(np.isfinite(arr)):
            return name
    return "state"


def drift(
    state: State,
    nf: NoiseFamily,
    buoyancy: BuoyancyProfile,
    forcing: ForcingSpec,
    eps: float = 0.0,
    mode: str = ITO,
    use_dealias: bool = True,
) -> tuple[Field, Field]:
    """Full drift (dv, dtheta): stiff Laplacian plus the explicit terms.

    In Stratonovich mode at eps > 0 the Ito reformulation contributes the
    drift gain eps * (projected velocity correction excess, temperature
    correction excess): the identity part of the second-order coefficient
    matrices cancels against the quadratic variation and never enhances the
    viscosity.
    """
    ev, et = explicit_rhs(state, nf, buoyancy, forcing, eps, mode, use_dealias)
    with np.errstate(invalid="ignore", over="ignore"):
        dv = laplacian(state.v) + ev
        dtheta = laplacian(state.theta) + et
    if not (np.all(np.isfinite(dv)) and np.all(np.isfinite(dtheta))):
        raise BlowupDetected(
            _diagnose_nonfinite(state, nf, buoyancy, forcing, eps, mode, use_dealias, None)
        )
    return Field(state.grid, dv, bc=None), Field(state.grid, dtheta, bc=None)


def diffusion(
    state: State, nf: NoiseFamily, forcing: ForcingSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode noise operators: (N,2,nx,ny,nz) for v and (N,nx,ny,nz) for theta."""
    g = state.grid
    v, theta = state.v, state.theta
    n = nf.n_modes
    bv = np.empty((n, 2, g.nx, g.ny, g.nz))
    bt = np.empty((n, g.nx, g.ny, g.nz))
    gv = forcing.g_v_modes(n, v.values)
    gt = forcing.g_theta_modes(n, theta.values)
    for i in range(n):
        tv = transport_term(g, nf.vel_modes[i], v)
        if gv is not None:
            tv = tv + gv[i]
        bv[i] = project_values(g, tv)
        tt = transport_term(g, nf.temp_modes[i], theta)[0]
        if gt is not None:
            tt = tt + gt[i]
        bt[i] = tt
    if not (np.all(np.isfinite(bv)) and np.all(np.isfinite(bt))):
        raise BlowupDetected("diffusion")
    return bv, bt


# ---------------------------------------------------------------------------
# stepping kernel


def _advance(
    state: State,
    cfg: StepperConfig,
    nf: NoiseFamily,
    buoyancy: BuoyancyProfile,
    forcing: ForcingSpec,
    control_row: np.ndarray | None,
    xi: np.ndarray | None,
    corrections: CorrectionOperators | None,
) -> State:
    """One IMEX Euler(-Maruyama) step; control and noise terms are optional."""
    g = state.grid
    dt = cfg.dt
    eps_eff = cfg.eps if xi is not None else 0.0

    ev, et = explicit_rhs(state, nf, buoyancy, forcing, eps_eff, cfg.mode,
                          cfg.dealias, corrections)
    rhs_v = state.v.values + dt * ev
    rhs_t = state.theta.values + dt * et

    need_diff = (control_row is not None and np.any(control_row)) or (
        xi is not None and cfg.eps > 0
    )
    if need_diff:
        bv, bt = diffusion(state, nf, forcing)
        if control_row is not None and np.any(control_row):
            rhs_v = rhs_v + dt * np.einsum("n,n...->...", control_row, bv)
            rhs_t = rhs_t + dt * np.einsum("n,n...->...", control_row, bt)[None]
        if xi is not None and cfg.eps > 0:
            amp = np.sqrt(cfg.eps * dt)
            rhs_v = rhs_v + amp * np.einsum("n,n...->...", xi, bv)
            rhs_t = rhs_t + amp * np.einsum("n,n...->...", xi, bt)[None]

    v_new = solve_helmholtz(g, state.v.bc, dt, rhs_v)
    t_new = solve_helmholtz(g, state.theta.bc, dt, rhs_t)
    v_new = project_values(g, v_new)

    return State(
        Field(g, v_new, bc=state.v.bc),
        Field(g, t_new, bc=state.theta.bc),
        state.t + dt,
    )


def step_spde(state, cfg, nf, buoyancy, forcing, *, seed=0, path=0, step_index=0,
              corrections=None) -> State:
    """IMEX Euler-Maruyama step of the stochastic system."""
    xi = noise_increments(seed, path, step_index, nf.n_modes) if cfg.eps > 0 else None
    return _advance(state, cfg, nf, buoyancy, forcing, None, xi, corrections)


def step_skeleton(state, cfg, nf, buoyancy, forcing, control_row) -> State:
    """Deterministic controlled step; shares the operator assembly with step_spde."""
    row = np.asarray(control_row, dtype=float)
    if not np.all(np.isfinite(row)):
        raise InvalidField("control values must be finite")
    return _advance(state, cfg, nf, buoyancy, forcing, row, None, None)


def step_tilted(state, cfg, nf, buoyancy, forcing, control_row, *, seed=0, path=0,
                step_index=0, corrections=None) -> State:
    """Controlled step with noise: the change-of-measure dynamics."""
    row = np.asarray(control_row, dtype=float)
    xi = noise_increments(seed, path, step_index, nf.n_modes) if cfg.eps > 0 else None
    return _advance(state, cfg, nf, buoyancy, forcing, row, xi, corrections)


def heun_reference_step(state, cfg, nf, buoyancy, forcing, xi) -> State:
    """Explicit midpoint (Heun) step: the Stratonovich reference integrator.

    Product code uses the Ito reformulation with correction operators; this
    explicit scheme exists for consistency verification only and carries the
    usual explicit diffusion step-size restriction.
    """
    g = state.grid
    dt = cfg.dt
    amp = np.sqrt(cfg.eps * dt)

    def full_rhs(s):
        ev, et = explicit_rhs(s, nf, buoyancy, forcing, 0.0, ITO, cfg.dealias)
        return laplacian(s.v) + ev, laplacian(s.theta) + et

    def noise_term(s):
        bv, bt = diffusion(s, nf, forcing)
        return (np.einsum("n,n...->...", xi, bv), np.einsum("n,n...->...", xi, bt))

    fv0, ft0 = full_rhs(state)
    nv0, nt0 = noise_term(state) if cfg.eps > 0 else (0.0, 0.0)
    v_star = project_values(g, state.v.values + dt * fv0 + amp * nv0)
    t_star = state.theta.values + dt * ft0 + (amp * nt0 if cfg.eps > 0 else 0.0)
    mid = State(Field(g, v_star, bc=state.v.bc),
                Field(g, t_star, bc=state.theta.bc), state.t + dt)

    fv1, ft1 = full_rhs(mid)
    v_new = state.v.values + 0.5 * dt * (fv0 + fv1)
    t_new = state.theta.values + 0.5 * dt * (ft0 + ft1)
    if cfg.eps > 0:
        nv1, nt1 = noise_term(mid)
        v_new = v_new + 0.5 * amp * (nv0 + nv1)
        t_new = t_new + 0.5 * amp * (nt0 + nt1)
    v_new = project_values(g, v_new)
    if not np.all(np.isfinite(v_new)):
        raise BlowupDetected("heun_reference")
    return State(Field(g, v_new, bc=state.v.bc),
                 Field(g, t_new.reshape(state.theta.values.shape), bc=state.theta.bc),
                 state.t + dt)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    times: np.ndarray
    samples: list  # EnergySample per step (including t=0)
    states: list[State] | None
    eps: float
    mr_norm: float
    h_norm_series: np.ndarray
    v_norm_sq_series: np.ndarray
    ref_distance: np.ndarray | None = None
    max_constraint_residual: float = 0.0
    meta: dict = dc_field(default_factory=dict)

    @property
    def final_state(self) -> State:
        if self.states is None:
            raise ValueError("trajectory was run without state storage")
        return self.states[-1]


def n_steps_for(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 0 or abs(n * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"T/dt = {T}/{dt} is not an integer within rounding")
    return n


def integrate(
    problem: str,
    initial: State,
    T: float,
    cfg: StepperConfig,
    nf: NoiseFamily,
    buoyancy: BuoyancyProfile,
    forcing: ForcingSpec,
    control: np.ndarray | None = None,
    *,
    seed: int = 0,
    path: int = 0,
    budget: float | None = None,
    store_states: bool = True,
    ref_states: list[State] | None = None,
    sample_every: int = 1,
) -> Trajectory:
    """Run one of {'spde', 'skeleton', 'tilted'} from t=0 to T and collect diagnostics.

    The recorded maximal-regularity norm is sup-in-time of the H-level norm
    plus the square root of the time integral of the V-level norm squared.
    Diagnostics (and stored states) are collected every `sample_every` steps,
    always including t=0 and t=T; Gronwall budgets expect stride 1.
    """
    from .diagnostics import h_distance, sample_energies

    if problem not in ("spde", "skeleton", "tilted"):
        raise ValueError(f"unknown problem {problem!r}")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    n = n_steps_for(T, cfg.dt)
    if problem in ("skeleton", "tilted"):
        if control is None:
            control = np.zeros((n, nf.n_modes))
        control = np.asarray(control, dtype=float)
        if control.shape != (n, nf.n_modes):
            raise ValueError(f"control shape {control.shape} != {(n, nf.n_modes)}")
        if budget is not None:
            norm = np.sqrt(np.sum(control**2) * cfg.dt)
            if norm > budget * (1 + 1e-12):
                raise ControlBudgetExceeded(
                    f"control norm {norm:g} exceeds declared budget {budget:g}"
                )

    corrections = None
    if cfg.mode == STRATONOVICH and cfg.eps > 0 and problem in ("spde", "tilted"):
        corrections = stratonovich_corrections(nf)

    state = initial
    scale0 = max(np.max(np.abs(initial.v.values)), np.max(np.abs(initial.theta.values)), 1.0)
    samples = [sample_energies(state.v, state.theta, state.t)]
    states = [state] if store_states else None
    times = [0.0]
    h_series = [np.sqrt(samples[0].h_norm_sq())]
    v2_series = [samples[0].v_norm_sq()]
    dist = None
    if ref_states is not None:
        dist = [h_distance(state, ref_states[0])]
    max_res = state.constraint_residual()

    for k in range(n):
        try:
            if problem == "spde":
                state = step_spde(state, cfg, nf, buoyancy, forcing,
                                  seed=seed, path=path, step_index=k,
                                  corrections=corrections)
            elif problem == "skeleton":
                state = step_skeleton(state, cfg, nf, buoyancy, forcing, control[k])
            else:
                state = step_tilted(state, cfg, nf, buoyancy, forcing, control[k],
                                    seed=seed, path=path, step_index=k,
                                    corrections=corrections)
        except BlowupDetected as e:
            raise BlowupDetected(e.term, step=k) from None
        top = max(np.max(np.abs(state.v.values)), np.max(np.abs(state.theta.values)))
        if not np.isfinite(top):
            raise BlowupDetected("state", step=k)
        if top > BLOWUP_FACTOR * scale0:
            raise BlowupDetected("state norm exceeded blowup threshold", step=k)
        if (k + 1) % sample_every == 0 or k == n - 1:
            s = sample_energies(state.v, state.theta, state.t)
            samples.append(s)
            times.append(state.t)
            h_series.append(np.sqrt(s.h_norm_sq()))
            v2_series.append(s.v_norm_sq())
            if store_states:
                states.append(state)
            if ref_states is not None:
                # ref trajectory must have been sampled with the same stride
                dist.append(h_distance(state, ref_states[len(times) - 1]))
            max_res = max(max_res, state.constraint_residual())

    times = np.array(times)
    h_series = np.array(h_series)
    v2_series = np.array(v2_series)
    # left-endpoint quadrature of the V-norm integral over the sampled times
    dts = np.diff(times)
    mr = float(h_series.max() + np.sqrt(np.sum(v2_series[:-1] * dts))) if n else float(h_series[0])
    running = [float(h_series[: k + 1].max()
                     + np.sqrt(np.sum(v2_series[:k] * dts[:k])))
               for k in range(len(times))]
    for k, s in enumerate(samples):
        s.mr_running = running[k]
    eps = cfg.eps if problem in ("spde", "tilted") else 0.0
    return Trajectory(
        times=times,
        samples=samples,
        states=states,
        eps=eps,
        mr_norm=mr,
        h_norm_series=h_series,
        v_norm_sq_series=v2_series,
        ref_distance=None if dist is None else np.array(dist),
        max_constraint_residual=max_res,
        meta={"problem": problem, "seed": seed, "path": path, "T": T, "dt": cfg.dt},
    )
