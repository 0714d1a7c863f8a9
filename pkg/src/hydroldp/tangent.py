"""Linearization and exact discrete adjoint of the controlled (skeleton) step.

The optimizer needs gradients of trajectory functionals with respect to the
control; those come from running the step kernel backwards with every linear
primitive replaced by its Euclidean transpose.  Horizontal spectral derivatives
transpose to their negatives (Nyquist rows are zeroed, so this is exact),
dense vertical matrices transpose literally, projection and the implicit
solves are self-adjoint.  Each vector-Jacobian product here mirrors the
corresponding term in `stepping._explicit_terms` line by line; the pairing
test <mu, J d> = <J^T mu, d> in the test suite guards the correspondence.

Only the deterministic skeleton dynamics is linearized: the control problem
has no noise intensity, so the Stratonovich corrections never appear here.
"""

from __future__ import annotations

import numpy as np

from .grid import Field, GridSpec, dealias, dx, dy, dz_apply
from .noise import NoiseFamily
from .operators import BuoyancyProfile, project_values
from .stepping import ForcingSpec, State, StepperConfig, solve_helmholtz

__all__ = [
    "explicit_jvp",
    "explicit_vjp",
    "control_contraction_jvp",
    "control_contraction_vjp",
    "diffusion_dot",
    "adjoint_step",
]


def _maybe_dealias(g: GridSpec, arr: np.ndarray, use: bool) -> np.ndarray:
    return dealias(g, arr) if use else arr


# ---------------------------------------------------------------------------
# explicit drift linearization


def explicit_jvp(
    state: State,
    nf: NoiseFamily,
    buoyancy: BuoyancyProfile,
    forcing: ForcingSpec,
    dv: np.ndarray,
    dth: np.ndarray,
    use_dealias: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Directional derivative of the explicit skeleton drift at `state`."""
    g = state.grid
    v, th = state.v.values, state.theta.values
    d3m_v = g.d1_matrix(state.v.bc)
    d3m_t = g.d1_matrix(state.theta.bc)
    cum = g.cumint_matrix

    dxv, dyv = dx(g, v), dy(g, v)
    d3v = dz_apply(d3m_v, v)
    w = -dz_apply(cum, dxv[0] + dyv[1])

    dxdv, dydv = dx(g, dv), dy(g, dv)
    d3dv = dz_apply(d3m_v, dv)
    dw = -dz_apply(cum, dxdv[0] + dydv[1])

    out_v = -(
        _maybe_dealias(g, dv[0] * dxv + v[0] * dxdv, use_dealias)
        + _maybe_dealias(g, dv[1] * dyv + v[1] * dydv, use_dealias)
    )
    out_v = out_v - _maybe_dealias(g, dw * d3v + w * d3dv, use_dealias)

    press = dz_apply(cum, buoyancy.coeff.values[0] * dth[0])
    out_v = out_v + np.stack([dx(g, press), dy(g, press)])

    if forcing.lin_v:
        out_v = out_v + forcing.lin_v * dv
    if any(forcing.lin_v_theta):
        out_v = out_v + np.asarray(forcing.lin_v_theta).reshape(2, 1, 1, 1) * dth[0]
    if forcing.lin_v_dz:
        out_v = out_v + forcing.lin_v_dz * d3dv

    if nf.pressure_coupling is not None:
        out_v = out_v + _pressure_coupling_linear(nf, forcing, dv, d3m_v)

    out_v = project_values(g, out_v)

    dxt, dyt = dx(g, th), dy(g, th)
    d3t = dz_apply(d3m_t, th)
    dxdt, dydt = dx(g, dth), dy(g, dth)
    d3dt = dz_apply(d3m_t, dth)
    out_t = -(
        _maybe_dealias(g, dv[0] * dxt + v[0] * dxdt, use_dealias)
        + _maybe_dealias(g, dv[1] * dyt + v[1] * dydt, use_dealias)
    )
    out_t = out_t - _maybe_dealias(g, dw * d3t + w * d3dt, use_dealias)
    if forcing.lin_theta:
        out_t = out_t + forcing.lin_theta * dth
    if any(forcing.lin_theta_v):
        out_t = out_t + (forcing.lin_theta_v[0] * dv[0]
                         + forcing.lin_theta_v[1] * dv[1])[None]
    return out_v, out_t


def _pressure_coupling_linear(nf, forcing, dv, d3m_v):
    """Turbulent-pressure operator applied to a velocity perturbation."""
    g = nf.grid
    from .operators import BarotropicField, curl_free_part

    out = np.zeros((2, g.nx, g.ny))
    glin = forcing.g_v_lin
    for n in range(nf.n_modes):
        c = nf.vel_modes[n]
        tn = c[0] * dx(g, dv) + c[1] * dy(g, dv) + c[2] * dz_apply(d3m_v, dv)
        if glin is not None:
            tn = tn + glin[n] * dv
        q = curl_free_part(BarotropicField(g, tn.mean(axis=-1))).values
        out += np.einsum("lmxy,mxy->lxy", nf.pressure_coupling[n], q)
    return np.repeat(out[..., None], g.nz, axis=-1)


def explicit_vjp(
    state: State,
    nf: NoiseFamily,
    buoyancy: BuoyancyProfile,
    forcing: ForcingSpec,
    mu_v: np.ndarray,
    mu_t: np.ndarray,
    use_dealias: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Transpose of explicit_jvp: cotangent (mu_v, mu_t) -> (lam_v, lam_th)."""
    g = state.grid
    v, th = state.v.values, state.theta.values
    d3m_v = g.d1_matrix(state.v.bc)
    d3m_t = g.d1_matrix(state.theta.bc)
    cum = g.cumint_matrix

    dxv, dyv = dx(g, v), dy(g, v)
    d3v = dz_apply(d3m_v, v)
    w = -dz_apply(cum, dxv[0] + dyv[1])
    dxt, dyt = dx(g, th), dy(g, th)
    d3t = dz_apply(d3m_t, th)

    mu_v = project_values(g, mu_v)  # projection is self-adjoint

    lam_v = np.zeros_like(mu_v)
    lam_t = np.zeros_like(mu_t)

    # advection of v: out_c = -(M(dv0 dxv_c) + M(v0 dx dv_c) + ... )
    m = _maybe_dealias(g, mu_v, use_dealias)
    lam_v[0] += -np.sum(dxv * m, axis=0)
    lam_v[1] += -np.sum(dyv * m, axis=0)
    lam_v += dx(g, v[0] * m) + dy(g, v[1] * m)

    # vertical transport of v: out_c = -M(dw d3v_c) - M(w d3 dv_c)
    s = np.sum(d3v * m, axis=0)
    cts = dz_apply(cum.T, s)
    lam_v[0] += -dx(g, cts)
    lam_v[1] += -dy(g, cts)
    lam_v += -dz_apply(d3m_v.T, w * m)

    # pressure term: theta cotangent
    q = -(dx(g, mu_v[0]) + dy(g, mu_v[1]))
    lam_t[0] += buoyancy.coeff.values[0] * dz_apply(cum.T, q)

    if forcing.lin_v:
        lam_v += forcing.lin_v * mu_v
    if any(forcing.lin_v_theta):
        lam_t[0] += (forcing.lin_v_theta[0] * mu_v[0]
                     + forcing.lin_v_theta[1] * mu_v[1])
    if forcing.lin_v_dz:
        lam_v += forcing.lin_v_dz * dz_apply(d3m_v.T, mu_v)

    if nf.pressure_coupling is not None:
        lam_v += _pressure_coupling_linear_t(nf, forcing, mu_v, d3m_v)

    # advection of theta: out = -(M(dv0 dxt) + M(v0 dx dth) + ...)
    mt = _maybe_dealias(g, mu_t, use_dealias)
    lam_v[0] += -(dxt[0] * mt[0])
    lam_v[1] += -(dyt[0] * mt[0])
    lam_t += dx(g, v[0] * mt) + dy(g, v[1] * mt)

    # vertical transport of theta: -M(dw d3t) - M(w d3 dth)
    st = d3t[0] * mt[0]
    ctst = dz_apply(cum.T, st)
    lam_v[0] += -dx(g, ctst)
    lam_v[1] += -dy(g, ctst)
    lam_t += -dz_apply(d3m_t.T, w * mt)

    if forcing.lin_theta:
        lam_t += forcing.lin_theta * mu_t
    if any(forcing.lin_theta_v):
        lam_v[0] += forcing.lin_theta_v[0] * mu_t[0]
        lam_v[1] += forcing.lin_theta_v[1] * mu_t[0]

    return lam_v, lam_t


def _pressure_coupling_linear_t(nf, forcing, mu_v, d3m_v):
    g = nf.grid
    from .operators import BarotropicField, curl_free_part

    mu_bar = mu_v.sum(axis=-1)  # transpose of the z-constant lift
    lam = np.zeros_like(mu_v)
    glin = forcing.g_v_lin
    for n in range(nf.n_modes):
        r = np.einsum("lmxy,lxy->mxy", nf.pressure_coupling[n], mu_bar)
        q = curl_free_part(BarotropicField(g, r)).values
        a = np.repeat(q[..., None], g.nz, axis=-1) / g.nz  # transpose of the mean
        c = nf.vel_modes[n]
        lam += -dx(g, c[0] * a) - dy(g, c[1] * a) + dz_apply(d3m_v.T, c[2] * a)
        if glin is not None:
            lam += glin[n] * a
    return lam


# ---------------------------------------------------------------------------
# control/noise channel linearization


def control_contraction_jvp(state, nf, forcing, weights, dv, dth):
    """Derivative of sum_n w_n B_n(Y) with respect to Y, in direction (dv, dth)."""
    g = state.grid
    d3m_v = g.d1_matrix(state.v.bc)
    d3m_t = g.d1_matrix(state.theta.bc)
    out_v = np.zeros_like(dv)
    out_t = np.zeros_like(dth)
    for n in range(nf.n_modes):
        wn = weights[n]
        if wn == 0.0:
            continue
        c = nf.vel_modes[n]
        tv = c[0] * dx(g, dv) + c[1] * dy(g, dv) + c[2] * dz_apply(d3m_v, dv)
        if forcing.g_v_lin is not None:
            tv = tv + forcing.g_v_lin[n] * dv
        out_v += wn * tv
        p = nf.temp_modes[n]
        tt = p[0] * dx(g, dth) + p[1] * dy(g, dth) + p[2] * dz_apply(d3m_t, dth)
        if forcing.g_theta_lin is not None:
            tt = tt + forcing.g_theta_lin[n] * dth
        out_t += wn * tt
    return project_values(g, out_v), out_t


def control_contraction_vjp(state, nf, forcing, weights, mu_v, mu_t):
    """Transpose of control_contraction_jvp."""
    g = state.grid
    d3m_v = g.d1_matrix(state.v.bc)
    d3m_t = g.d1_matrix(state.theta.bc)
    m = project_values(g, mu_v)
    lam_v = np.zeros_like(mu_v)
    lam_t = np.zeros_like(mu_t)
    for n in range(nf.n_modes):
        wn = weights[n]
        if wn == 0.0:
            continue
        c = nf.vel_modes[n]
        a = wn * m
        lam_v += -dx(g, c[0] * a) - dy(g, c[1] * a) + dz_apply(d3m_v.T, c[2] * a)
        if forcing.g_v_lin is not None:
            lam_v += wn * forcing.g_v_lin[n] * m
        p = nf.temp_modes[n]
        b = wn * mu_t
        lam_t += -dx(g, p[0] * b) - dy(g, p[1] * b) + dz_apply(d3m_t.T, p[2] * b)
        if forcing.g_theta_lin is not None:
            lam_t += wn * forcing.g_theta_lin[n] * mu_t
    return lam_v, lam_t


def diffusion_dot(state, nf, forcing, mu_v, mu_t):
    """<mu, B_n(Y)> for every mode n: the control gradient inner products."""
    from .stepping import diffusion

    bv, bt = diffusion(state, nf, forcing)
    return (np.einsum("ncxyz,cxyz->n", bv, mu_v)
            + np.einsum("nxyz,xyz->n", bt, mu_t[0]))


# ---------------------------------------------------------------------------
# one adjoint step


def adjoint_step(
    state_k: State,
    cfg: StepperConfig,
    nf: NoiseFamily,
    buoyancy: BuoyancyProfile,
    forcing: ForcingSpec,
    control_row: np.ndarray,
    lam_v: np.ndarray,
    lam_t: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pull the cotangent of Y_{k+1} back to Y_k; also return dJ/d(control row).

    Mirrors: Y_{k+1} = (P H_v[v + dt(E_v + sum c B_v)], H_t[...]).
    """
    g = state_k.grid
    dt = cfg.dt
    a = dt  # skeleton: implicit coefficient is dt * 1
    mu_v = solve_helmholtz(g, state_k.v.bc, a, project_values(g, lam_v))
    mu_t = solve_helmholtz(g, state_k.theta.bc, a, lam_t)

    grad_row = dt * diffusion_dot(state_k, nf, forcing, mu_v, mu_t)

    ev, et = explicit_vjp(state_k, nf, buoyancy, forcing, mu_v, mu_t, cfg.dealias)
    new_v = mu_v + dt * ev
    new_t = mu_t + dt * et
    if np.any(control_row):
        cv, ct = control_contraction_vjp(state_k, nf, forcing, control_row, mu_v, mu_t)
        new_v = new_v + dt * cv
        new_t = new_t + dt * ct
    return new_v, new_t, grad_row
