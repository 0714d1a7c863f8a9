"""Vectorized Monte Carlo: advance a whole ensemble of noise paths as one batch.

The per-path step kernel in `stepping` is overhead-bound at desk-scale grids,
so the ensemble runner stacks paths along a leading axis and relies on the
horizontal transforms and vertical matrix applications broadcasting over it.
Noise increments keep the exact (seed, path, step) counter addressing of the
single-path kernel, and an equivalence test pins the two code paths together.

Pressure-coupling terms and Stratonovich corrections are not vectorized here;
runs needing them fall back to the per-path loop.
"""

from __future__ import annotations

import numpy as np

from .errors import BlowupDetected
from .grid import GridSpec, dealias, dx, dy, dz_apply
from .noise import ITO
from .rng import noise_increments
from .stepping import State, StepperConfig, solve_helmholtz

__all__ = ["supports_batch", "run_event_batch"]


def supports_batch(problem, cfg: StepperConfig) -> bool:
    return problem.nf.pressure_coupling is None and (
        cfg.mode == ITO or cfg.eps == 0.0
    )


def _project_batch(grid: GridSpec, vals: np.ndarray) -> np.ndarray:
    """Hydrostatic projection of (..., 2, nx, ny, nz) batches."""
    mean = vals.mean(axis=-1)  # (..., 2, nx, ny)
    kx, ky = grid.kx[..., 0], grid.ky[..., 0]
    k2 = kx**2 + ky**2
    fh = np.fft.fft2(mean, axes=(-2, -1))
    div = kx * fh[..., 0, :, :] + ky * fh[..., 1, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        pot = div / k2
    pot = np.where(k2 > 0, pot, 0.0)
    q = np.stack([kx * pot, ky * pot], axis=-3)
    q = np.real(np.fft.ifft2(q, axes=(-2, -1)))
    return vals - q[..., None]


def _hm(grid, a, b, use_dealias):
    p = a * b
    return dealias(grid, p) if use_dealias else p


def _batched_explicit(g, v, th, nf, buoyancy, forcing, bc_v, bc_t, use_dealias):
    """Explicit drift for batches v (P,2,...), th (P,1,...); mirrors _explicit_terms."""
    d3m_v = g.d1_matrix(bc_v)
    d3m_t = g.d1_matrix(bc_t)
    cum = g.cumint_matrix

    dxv, dyv = dx(g, v), dy(g, v)
    d3v = dz_apply(d3m_v, v)
    div_h = dxv[:, 0] + dyv[:, 1]
    w = -dz_apply(cum, div_h)[:, None]

    ev = -(_hm(g, v[:, 0:1], dxv, use_dealias) + _hm(g, v[:, 1:2], dyv, use_dealias))
    ev = ev - _hm(g, w, d3v, use_dealias)
    press = dz_apply(cum, buoyancy.coeff.values[0] * th[:, 0])
    ev = ev + np.stack([dx(g, press), dy(g, press)], axis=1)
    if not forcing.is_zero():
        if forcing.xi_v is not None:
            ev = ev + forcing.xi_v
        if forcing.lin_v:
            ev = ev + forcing.lin_v * v
        if any(forcing.lin_v_theta):
            ev = ev + np.asarray(forcing.lin_v_theta).reshape(1, 2, 1, 1, 1) * th
        if forcing.lin_v_dz:
            ev = ev + forcing.lin_v_dz * d3v
    ev = _project_batch(g, ev)

    dxt, dyt = dx(g, th), dy(g, th)
    d3t = dz_apply(d3m_t, th)
    et = -(_hm(g, v[:, 0:1], dxt, use_dealias) + _hm(g, v[:, 1:2], dyt, use_dealias))
    et = et - _hm(g, w, d3t, use_dealias)
    if not forcing.is_zero():
        if forcing.xi_theta is not None:
            et = et + forcing.xi_theta
        if forcing.lin_theta:
            et = et + forcing.lin_theta * th
        if any(forcing.lin_theta_v):
            et = et + (forcing.lin_theta_v[0] * v[:, 0]
                       + forcing.lin_theta_v[1] * v[:, 1])[:, None]
    return ev, et


def _batched_diffusion_sum(g, v, th, nf, forcing, coeffs, bc_v, bc_t):
    """sum_n coeffs[:, n] * B_n(Y_p): coeffs shape (P, N)."""
    d3m_v = g.d1_matrix(bc_v)
    d3m_t = g.d1_matrix(bc_t)
    dxv, dyv, d3v = dx(g, v), dy(g, v), dz_apply(d3m_v, v)
    dxt, dyt, d3t = dx(g, th), dy(g, th), dz_apply(d3m_t, th)
    out_v = np.zeros_like(v)
    out_t = np.zeros_like(th)
    for n in range(nf.n_modes):
        cw = coeffs[:, n]
        if not np.any(cw):
            continue
        c = nf.vel_modes[n]
        tv = c[0] * dxv + c[1] * dyv + c[2] * d3v
        if forcing.g_v_offsets is not None:
            tv = tv + forcing.g_v_offsets[n]
        if forcing.g_v_lin is not None:
            tv = tv + forcing.g_v_lin[n] * v
        out_v += cw[:, None, None, None, None] * _project_batch(g, tv)
        p = nf.temp_modes[n]
        tt = p[0] * dxt + p[1] * dyt + p[2] * d3t
        if forcing.g_theta_offsets is not None:
            tt = tt + forcing.g_theta_offsets[n][None]
        if forcing.g_theta_lin is not None:
            tt = tt + forcing.g_theta_lin[n] * th
        out_t += cw[:, None, None, None, None] * tt
    return out_v, out_t


def _batched_h_dist_sq(g, dv, dth, bc_v):
    d3 = dz_apply(g.d1_matrix(bc_v), dv)
    space = tuple(range(1, dv.ndim))
    e = ((dv**2).sum(axis=space) + (dx(g, dv) ** 2).sum(axis=space)
         + (dy(g, dv) ** 2).sum(axis=space) + (d3**2).sum(axis=space)
         + (dth**2).sum(axis=tuple(range(1, dth.ndim))))
    return e * g.cell_volume


def _batched_v_dist_sq(g, dv, dth, bc_v, bc_t):
    sp = tuple(range(1, dv.ndim))
    spt = tuple(range(1, dth.ndim))
    d3m_v, d3m_t = g.d1_matrix(bc_v), g.d1_matrix(bc_t)
    d3 = dz_apply(d3m_v, dv)
    e = _batched_h_dist_sq(g, dv, np.zeros_like(dth), bc_v)
    e = e + ((dx(g, dx(g, dv)) ** 2).sum(sp) + 2 * (dy(g, dx(g, dv)) ** 2).sum(sp)
             + (dy(g, dy(g, dv)) ** 2).sum(sp) + 2 * (dx(g, d3) ** 2).sum(sp)
             + 2 * (dy(g, d3) ** 2).sum(sp)
             + (dz_apply(g.d2_matrix(bc_v), dv) ** 2).sum(sp)) * g.cell_volume
    d3t = dz_apply(d3m_t, dth)
    e = e + ((dth**2).sum(spt) + (dx(g, dth) ** 2).sum(spt)
             + (dy(g, dth) ** 2).sum(spt) + (d3t**2).sum(spt)) * g.cell_volume
    return e


def run_event_batch(
    problem,
    event,
    cfg: StepperConfig,
    n_paths: int,
    *,
    control: np.ndarray | None = None,
    seed: int = 0,
    path_offset: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Run n_paths noise paths at once.

    Returns (event indicators, mixed stochastic integral sum_k <control_k, dW_k>)
    per path; the second entry feeds the change-of-measure weight and is zero
    without a control.  Increments match the single-path kernel exactly:
    path p uses noise_increments(seed, path_offset + p, step).
    """
    g = problem.grid
    st0: State = problem.initial
    bc_v, bc_t = st0.v.bc, st0.theta.bc
    n = problem.n_steps
    dt = cfg.dt
    ref = problem.reference_states()

    v = np.broadcast_to(st0.v.values, (n_paths,) + st0.v.values.shape).copy()
    th = np.broadcast_to(st0.theta.values, (n_paths,) + st0.theta.values.shape).copy()
    scale0 = max(np.max(np.abs(st0.v.values)), np.max(np.abs(st0.theta.values)), 1.0)

    terminal = event.kind == "terminal_ball"
    run_max = np.zeros(n_paths)
    mr_quad = np.zeros(n_paths) if event.norm == "MR" else None
    if not terminal:
        d0 = _batched_h_dist_sq(g, v - ref[0].v.values, th - ref[0].theta.values, bc_v)
        run_max = np.sqrt(d0)
        if mr_quad is not None:
            mr_quad += dt * _batched_v_dist_sq(
                g, v - ref[0].v.values, th - ref[0].theta.values, bc_v, bc_t)

    mixed = np.zeros(n_paths)
    a_imp = dt  # Ito mode only in the batched path
    for k in range(n):
        ev, et = _batched_explicit(g, v, th, problem.nf, problem.buoyancy,
                                   problem.forcing, bc_v, bc_t, cfg.dealias)
        rhs_v = v + dt * ev
        rhs_t = th + dt * et
        coeffs = np.zeros((n_paths, problem.nf.n_modes))
        if control is not None and np.any(control[k]):
            coeffs += control[k][None, :] * dt
        if cfg.eps > 0:
            amp = np.sqrt(cfg.eps * dt)
            xi = np.stack([
                noise_increments(seed, path_offset + p, k, problem.nf.n_modes)
                for p in range(n_paths)
            ])
            coeffs += amp * xi
            if control is not None:
                mixed += (xi @ control[k]) * np.sqrt(dt)
        if np.any(coeffs):
            bv, bt = _batched_diffusion_sum(g, v, th, problem.nf, problem.forcing,
                                            coeffs, bc_v, bc_t)
            rhs_v = rhs_v + bv
            rhs_t = rhs_t + bt
        v = solve_helmholtz(g, bc_v, a_imp, rhs_v)
        th = solve_helmholtz(g, bc_t, a_imp, rhs_t)
        v = _project_batch(g, v)
        top = max(np.max(np.abs(v)), np.max(np.abs(th)))
        if not np.isfinite(top):
            raise BlowupDetected("ensemble state", step=k)
        if top > 1e6 * scale0:
            raise BlowupDetected("ensemble norm exceeded blowup threshold", step=k)
        if not terminal:
            dv = v - ref[k + 1].v.values
            dth = th - ref[k + 1].theta.values
            run_max = np.maximum(run_max, np.sqrt(_batched_h_dist_sq(g, dv, dth, bc_v)))
            if mr_quad is not None and k < n - 1:
                mr_quad += dt * _batched_v_dist_sq(g, dv, dth, bc_v, bc_t)

    if terminal:
        dv = v - event.target.v.values
        dth = th - event.target.theta.values
        dist = np.sqrt(_batched_h_dist_sq(g, dv, dth, bc_v))
        return dist <= event.delta, mixed
    stat = run_max if mr_quad is None else run_max + np.sqrt(mr_quad)
    return stat > event.delta, mixed
