"""Rate-function evaluation and minimization, and small-noise Monte Carlo.

The rate of a rare event is half the smallest control energy whose skeleton
trajectory realizes the event; the minimizer doubles as the importance-
sampling tilt.  Minimization runs penalty continuation over a smooth hinge
objective, with gradients from the exact discrete adjoint of the step kernel
(L-BFGS inner solves: a plain backtracking descent crawls once the penalty
grows, while L-BFGS needs only the same adjoint gradients).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import minimize as scipy_minimize
from scipy.stats import beta as beta_dist

from .errors import BlowupDetected, Diverged, InvalidField
from .grid import Field, GridSpec, dx, dy, dz_apply
from .noise import NoiseFamily
from .operators import BuoyancyProfile
from .rng import noise_increments
from .stepping import (
    ForcingSpec,
    State,
    StepperConfig,
    Trajectory,
    integrate,
    n_steps_for,
)
from .tangent import adjoint_step

__all__ = [
    "ControlPath",
    "RareEvent",
    "LdpProblem",
    "LdpReport",
    "forward_map",
    "skeleton_apriori_check",
    "minimize_rate",
    "adjoint_gradient",
    "mc_small_noise",
    "isotonic_fit",
    "write_control",
    "read_control",
]


# ---------------------------------------------------------------------------
# control paths


@dataclass
class ControlPath:
    """Piecewise-constant control on the integrator grid: values[k, n]."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if not np.all(np.isfinite(self.values)):
            raise InvalidField("control path contains non-finite values")
        if self.dt <= 0:
            raise ValueError("control dt must be positive")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_modes(self) -> int:
        return self.values.shape[1]

    @property
    def cost(self) -> float:
        """Half the squared L2(0,T; l2) norm."""
        return 0.5 * float(np.sum(self.values**2)) * self.dt

    @property
    def l2_norm(self) -> float:
        return math.sqrt(2.0 * self.cost)

    @classmethod
    def zeros(cls, n_steps: int, n_modes: int, dt: float) -> "ControlPath":
        return cls(np.zeros((n_steps, n_modes)), dt)


def write_control(path, cp: ControlPath, config_hash: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(f"# hydroldp-control v1 config={config_hash}\n")
        fh.write(f"# n_steps={cp.n_steps} n_modes={cp.n_modes} dt={cp.dt:.17g}\n")
        for row in cp.values:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def read_control(path) -> ControlPath:
    rows = []
    dt = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("dt="):
                        dt = float(tok[3:])
                continue
            rows.append([float(x) for x in line.split()])
    if dt is None or not rows:
        raise InvalidField(f"{path}: not a control file")
    return ControlPath(np.array(rows), dt)


# ---------------------------------------------------------------------------
# rare events


@dataclass(frozen=True)
class RareEvent:
    """Metric-ball event relative to the deterministic trajectory.

    kind 'exceed_distance': the trajectory leaves the delta-ball around the
        deterministic path (statistic > delta), measured in the 'H' norm
        (sup over steps of the state-level distance) or the 'MR' norm.
    kind 'terminal_ball': the final state lands within delta of a target
        state, measured in the state-level H norm.
    """

    kind: str
    delta: float
    norm: str = "H"
    target: State | None = None

    def __post_init__(self):
        if self.kind not in ("exceed_distance", "terminal_ball"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.delta <= 0:
            raise ValueError("event delta must be positive")
        if self.norm not in ("H", "MR"):
            raise ValueError("event norm must be 'H' or 'MR'")
        if self.kind == "terminal_ball" and self.target is None:
            raise ValueError("terminal_ball event needs a target state")


# -- distances and their Euclidean gradients


def _h_dist_sq_parts(g: GridSpec, dv: np.ndarray, dth: np.ndarray, bc_v, bc_t):
    d3v = dz_apply(g.d1_matrix(bc_v), dv)
    e = (np.sum(dv**2) + np.sum(dx(g, dv) ** 2) + np.sum(dy(g, dv) ** 2)
         + np.sum(d3v**2) + np.sum(dth**2))
    return e * g.cell_volume


def _h_dist_sq_grad(g: GridSpec, dv: np.ndarray, dth: np.ndarray, bc_v, bc_t):
    d3m = g.d1_matrix(bc_v)
    gv = dv - dx(g, dx(g, dv)) - dy(g, dy(g, dv)) + dz_apply(d3m.T, dz_apply(d3m, dv))
    return 2.0 * g.cell_volume * gv, 2.0 * g.cell_volume * dth


def _v_dist_sq(g: GridSpec, dv: np.ndarray, dth: np.ndarray, bc_v, bc_t) -> float:
    from .diagnostics import second_derivative_energy

    h1v = _h_dist_sq_parts(g, dv, np.zeros_like(dth), bc_v, bc_t)
    h2v = second_derivative_energy(Field(g, dv, bc=bc_v))
    d3t = dz_apply(g.d1_matrix(bc_t), dth)
    h1t = (np.sum(dth**2) + np.sum(dx(g, dth) ** 2) + np.sum(dy(g, dth) ** 2)
           + np.sum(d3t**2)) * g.cell_volume
    return h1v + h2v + h1t


def _v_dist_sq_grad(g: GridSpec, dv: np.ndarray, dth: np.ndarray, bc_v, bc_t):
    d3m_v = g.d1_matrix(bc_v)
    d3m_t = g.d1_matrix(bc_t)
    d2m_v = g.d2_matrix(bc_v)
    gv = dv - dx(g, dx(g, dv)) - dy(g, dy(g, dv)) + dz_apply(d3m_v.T, dz_apply(d3m_v, dv))
    # second-derivative blocks, mirroring diagnostics.second_derivative_energy
    d3 = dz_apply(d3m_v, dv)
    blocks = [
        (1.0, lambda u: dx(g, dx(g, u)), lambda u: dx(g, dx(g, u))),
        (2.0, lambda u: dy(g, dx(g, u)), lambda u: dx(g, dy(g, u))),
        (1.0, lambda u: dy(g, dy(g, u)), lambda u: dy(g, dy(g, u))),
    ]
    for mult, fwd, bwd in blocks:
        gv = gv + mult * bwd(fwd(dv))
    # (0,2) and (1,2): forward dx(D3 .), transpose D3^T(-dx .)
    gv = gv + 2.0 * dz_apply(d3m_v.T, -dx(g, dx(g, d3)))
    gv = gv + 2.0 * dz_apply(d3m_v.T, -dy(g, dy(g, d3)))
    # (2,2): symmetric dense matrix
    gv = gv + dz_apply(d2m_v.T, dz_apply(d2m_v, dv))
    gt = dth - dx(g, dx(g, dth)) - dy(g, dy(g, dth)) + dz_apply(
        d3m_t.T, dz_apply(d3m_t, dth)
    )
    return 2.0 * g.cell_volume * gv, 2.0 * g.cell_volume * gt


# ---------------------------------------------------------------------------
# the bundled problem


@dataclass
class LdpProblem:
    """Everything a rate computation needs: dynamics, initial state, horizon."""

    initial: State
    T: float
    cfg: StepperConfig
    nf: NoiseFamily
    buoyancy: BuoyancyProfile
    forcing: ForcingSpec
    _ref: list[State] | None = dc_field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return n_steps_for(self.T, self.cfg.dt)

    @property
    def grid(self) -> GridSpec:
        return self.initial.grid

    def reference_states(self) -> list[State]:
        """Deterministic (zero-control) trajectory, computed once."""
        if self._ref is None:
            tr = integrate("skeleton", self.initial, self.T, self.cfg, self.nf,
                           self.buoyancy, self.forcing, store_states=True)
            self._ref = tr.states
        return self._ref

    def skeleton_config(self) -> StepperConfig:
        return StepperConfig(dt=self.cfg.dt, eps=0.0, mode=self.cfg.mode,
                             dealias=self.cfg.dealias)


def forward_map(problem: LdpProblem, control: ControlPath) -> Trajectory:
    """Skeleton trajectory driven by the given control."""
    if abs(control.dt - problem.cfg.dt) > 1e-12 * problem.cfg.dt:
        raise ValueError("control dt does not match the problem dt")
    return integrate(
        "skeleton", problem.initial, problem.T, problem.skeleton_config(),
        problem.nf, problem.buoyancy, problem.forcing,
        control=control.values, store_states=True,
        ref_states=problem.reference_states(),
    )


# -- event statistics


def _traj_event_stat(problem: LdpProblem, event: RareEvent, states: list[State]) -> float:
    """Event statistic of a state sequence (stride-1 sampled)."""
    g = problem.grid
    ref = problem.reference_states()
    if event.kind == "terminal_ball":
        s, t = states[-1], event.target
        return math.sqrt(_h_dist_sq_parts(
            g, s.v.values - t.v.values, s.theta.values - t.theta.values,
            s.v.bc, s.theta.bc))
    dists = [
        math.sqrt(_h_dist_sq_parts(g, s.v.values - r.v.values,
                                   s.theta.values - r.theta.values, s.v.bc, s.theta.bc))
        for s, r in zip(states, ref)
    ]
    stat = max(dists)
    if event.norm == "MR":
        q = sum(
            _v_dist_sq(g, s.v.values - r.v.values, s.theta.values - r.theta.values,
                       s.v.bc, s.theta.bc)
            for s, r in zip(states[:-1], ref[:-1])
        ) * problem.cfg.dt
        stat = stat + math.sqrt(q)
    return stat


def event_occurs(problem: LdpProblem, event: RareEvent, states: list[State]) -> bool:
    stat = _traj_event_stat(problem, event, states)
    if event.kind == "terminal_ball":
        return stat <= event.delta
    return stat > event.delta


def _event_residual(event: RareEvent, stat: float) -> float:
    """Nonnegative; zero exactly when the event holds."""
    if event.kind == "terminal_ball":
        return max(0.0, stat - event.delta)
    return max(0.0, event.delta - stat)


# ---------------------------------------------------------------------------
# objective and adjoint gradient


def _objective_and_gradient(problem, event, control_vals, penalty):
    """J = cost + penalty * residual^2 and dJ/dcontrol via the discrete adjoint."""
    g = problem.grid
    cfg = problem.skeleton_config()
    dt = cfg.dt
    n = problem.n_steps
    cp = ControlPath(control_vals, dt)
    traj = forward_map(problem, cp)
    states = traj.states
    ref = problem.reference_states()

    # statistic, residual, and per-step seed data
    if event.kind == "terminal_ball":
        tv = event.target.v.values
        tt = event.target.theta.values
        diff_v = states[-1].v.values - tv
        diff_t = states[-1].theta.values - tt
        stat = math.sqrt(_h_dist_sq_parts(g, diff_v, diff_t,
                                          states[-1].v.bc, states[-1].theta.bc))
        residual = max(0.0, stat - event.delta)
        sign = 1.0
        kstar = n
    else:
        dists = [
            math.sqrt(_h_dist_sq_parts(g, s.v.values - r.v.values,
                                       s.theta.values - r.theta.values,
                                       s.v.bc, s.theta.bc))
            for s, r in zip(states, ref)
        ]
        kstar = int(np.argmax(dists))
        stat = dists[kstar]
        mr_q = 0.0
        if event.norm == "MR":
            vsq = [
                _v_dist_sq(g, s.v.values - r.v.values,
                           s.theta.values - r.theta.values, s.v.bc, s.theta.bc)
                for s, r in zip(states[:-1], ref[:-1])
            ]
            mr_q = math.sqrt(max(sum(vsq) * dt, 1e-300))
            stat = stat + mr_q
        residual = max(0.0, event.delta - stat)
        sign = -1.0

    cost = 0.5 * float(np.sum(control_vals**2)) * dt
    J = cost + penalty * residual**2
    grad = dt * control_vals.copy()
    if residual == 0.0 or penalty == 0.0:
        return J, grad, residual, traj

    # chain factor: dJ/dstat = 2 * penalty * residual * sign of d(residual)/d(stat)
    fac = 2.0 * penalty * residual * sign

    def stat_grad_at(k):
        """d(stat)/d(state_k) as a (gv, gt) pair; zero arrays when untouched."""
        s = states[k]
        gv = np.zeros_like(s.v.values)
        gt = np.zeros_like(s.theta.values)
        if event.kind == "terminal_ball":
            if k == n:
                dvv = s.v.values - event.target.v.values
                dtt = s.theta.values - event.target.theta.values
                e_gv, e_gt = _h_dist_sq_grad(g, dvv, dtt, s.v.bc, s.theta.bc)
                denom = 2.0 * max(stat, 1e-300)
                gv, gt = e_gv / denom, e_gt / denom
            return gv, gt
        r = ref[k]
        if k == kstar and dists[kstar] > 1e-12:
            dvv = s.v.values - r.v.values
            dtt = s.theta.values - r.theta.values
            e_gv, e_gt = _h_dist_sq_grad(g, dvv, dtt, s.v.bc, s.theta.bc)
            denom = 2.0 * dists[kstar]
            gv, gt = e_gv / denom, e_gt / denom
        if event.norm == "MR" and k < n and mr_q > 0:
            dvv = s.v.values - r.v.values
            dtt = s.theta.values - r.theta.values
            v_gv, v_gt = _v_dist_sq_grad(g, dvv, dtt, s.v.bc, s.theta.bc)
            gv = gv + dt * v_gv / (2.0 * mr_q)
            gt = gt + dt * v_gt / (2.0 * mr_q)
        return gv, gt

    lam_v, lam_t = stat_grad_at(n)
    lam_v, lam_t = fac * lam_v, fac * lam_t
    for k in range(n - 1, -1, -1):
        lam_v, lam_t, grow = adjoint_step(
            states[k], cfg, problem.nf, problem.buoyancy, problem.forcing,
            control_vals[k], lam_v, lam_t,
        )
        grad[k] += grow
        if event.kind != "terminal_ball" or k == n:
            gv, gt = stat_grad_at(k)
            lam_v = lam_v + fac * gv
            lam_t = lam_t + fac * gt
    return J, grad, residual, traj


def adjoint_gradient(
    problem: LdpProblem,
    control: ControlPath,
    event: RareEvent | None = None,
    penalty: float = 0.0,
) -> np.ndarray:
    """Gradient of cost + penalty * residual(event)^2 with respect to the control."""
    if event is None or penalty == 0.0:
        return problem.cfg.dt * control.values.copy()
    _, grad, _, _ = _objective_and_gradient(problem, event, control.values, penalty)
    return grad


@dataclass
class RateResult:
    control: ControlPath
    rate: float
    residual: float
    penalty: float
    iterations: int
    trace: list[dict]


def minimize_rate(
    problem: LdpProblem,
    event: RareEvent,
    *,
    residual_tol: float = 1e-3,
    penalty0: float = 10.0,
    max_outer: int = 8,
    max_inner: int = 200,
    x0: ControlPath | None = None,
) -> RateResult:
    """Penalty continuation over the smooth hinge objective.

    Returns the achieved control, its half-energy (an upper bound for the rate;
    distinct controls may realize the same path), the final event residual and
    the convergence trace.  Raises Diverged when continuation exhausts
    max_outer without meeting residual_tol.
    """
    n, m = problem.n_steps, problem.nf.n_modes
    x = np.zeros((n, m)) if x0 is None else x0.values.copy()
    trace: list[dict] = []

    # the zero control may already realize the event
    stat0 = _traj_event_stat(problem, event,
                             forward_map(problem, ControlPath(x, problem.cfg.dt)).states)
    if _event_residual(event, stat0) <= residual_tol:
        cp = ControlPath(x, problem.cfg.dt)
        return RateResult(cp, cp.cost, _event_residual(event, stat0), 0.0, 0, trace)
    if x0 is None and event.kind == "exceed_distance" and stat0 <= 1e-12:
        # escape events start exactly on the reference path, where the distance
        # gradient is degenerate; a small kick breaks the tie
        x = np.full((n, m), 1e-2)

    pen = penalty0
    total_iters = 0
    dt = problem.cfg.dt
    for outer in range(max_outer):
        def fun(flat):
            xv = flat.reshape(n, m)
            try:
                J, grad, _, _ = _objective_and_gradient(problem, event, xv, pen)
            except BlowupDetected:
                # a blown-up forward run acts as an infinite barrier
                return 1e30 * (1.0 + 0.5 * np.sum(xv**2) * dt), 1e30 * dt * flat
            return J, grad.ravel()

        res = scipy_minimize(fun, x.ravel(), jac=True, method="L-BFGS-B",
                             options={"maxiter": max_inner, "ftol": 1e-14,
                                      "gtol": 1e-12})
        x = res.x.reshape(n, m)
        total_iters += int(res.nit)
        try:
            J, _, residual, _ = _objective_and_gradient(problem, event, x, pen)
        except BlowupDetected:
            J, residual = float("inf"), float("inf")
        cp = ControlPath(x, problem.cfg.dt)
        trace.append({"outer": outer, "penalty": pen, "objective": J,
                      "residual": residual, "cost": cp.cost, "nit": int(res.nit)})
        if residual <= residual_tol:
            return RateResult(cp, cp.cost, residual, pen, total_iters, trace)
        pen *= 10.0
    raise Diverged(
        f"penalty continuation did not reach residual {residual_tol:g} "
        f"(last residual {residual:g})",
        last_iterate=ControlPath(x, problem.cfg.dt),
        trace=trace,
    )


# ---------------------------------------------------------------------------
# a-priori structure of the skeleton


def isotonic_fit(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Nondecreasing least-squares fit (pool adjacent violators)."""
    order = np.argsort(xs)
    y = np.asarray(ys, dtype=float)[order]
    # classic PAVA over contiguous blocks
    levels = list(y)
    weights = [1.0] * len(y)
    members = [[i] for i in range(len(y))]
    i = 0
    while i < len(levels) - 1:
        if levels[i] > levels[i + 1] + 1e-15:
            tot = weights[i] + weights[i + 1]
            lev = (levels[i] * weights[i] + levels[i + 1] * weights[i + 1]) / tot
            levels[i: i + 2] = [lev]
            weights[i: i + 2] = [tot]
            members[i: i + 2] = [members[i] + members[i + 1]]
            i = max(i - 1, 0)
        else:
            i += 1
    out = np.empty_like(y)
    for lev, mem in zip(levels, members):
        for j in mem:
            out[j] = lev
    inv = np.empty_like(out)
    inv[order] = out
    return inv


def skeleton_apriori_check(problem: LdpProblem, base: ControlPath, scales) -> dict:
    """Run scaled controls c * base and report the cost -> MR-norm envelope.

    Reports finiteness, the isotonic (nondecreasing) envelope fit and its
    residual; no specific envelope value is asserted.
    """
    rows = []
    for c in sorted(scales):
        cp = ControlPath(c * base.values, base.dt)
        traj = forward_map(problem, cp)
        rows.append({"scale": float(c), "control_norm": cp.l2_norm,
                     "mr_norm": traj.mr_norm})
    norms = np.array([r["control_norm"] for r in rows])
    mrs = np.array([r["mr_norm"] for r in rows])
    fit = isotonic_fit(norms, mrs)
    resid = float(np.sqrt(np.mean((fit - mrs) ** 2)))
    degenerate = len(rows) < 2 or np.ptp(norms) < 1e-12
    slope = 0.0 if degenerate else float(np.polyfit(norms, fit, 1)[0])
    return {
        "rows": rows,
        "all_finite": bool(np.all(np.isfinite(mrs))),
        "isotonic_envelope": fit.tolist(),
        "isotonic_rms_residual": resid,
        "envelope_slope": slope,
    }


# ---------------------------------------------------------------------------
# small-noise Monte Carlo


@dataclass
class LdpReport:
    rows: list[dict]
    rate_value: float | None
    intercept: float | None
    intercept_se: float | None
    is_consistent: bool | None
    meta: dict = dc_field(default_factory=dict)

    def to_ndjson(self) -> str:
        from .textio import dumps17

        lines = []
        head = {"record": "header", **self.meta}
        if self.rate_value is not None:
            head["rate_value"] = float(self.rate_value)
        if self.intercept is not None:
            head["eps_log_p_intercept"] = float(self.intercept)
            head["intercept_se"] = float(self.intercept_se)
            head["is_consistent"] = bool(self.is_consistent)
        lines.append(dumps17(head))
        for r in self.rows:
            lines.append(dumps17({"record": "eps", **r}))
        return "\n".join(lines) + "\n"


BATCH_CHUNK = 128  # fixed vectorization width: results independent of threading


def _clopper_pearson(hits: int, n: int, alpha: float = 0.05):
    lo = 0.0 if hits == 0 else float(beta_dist.ppf(alpha / 2, hits, n - hits + 1))
    hi = 1.0 if hits == n else float(beta_dist.ppf(1 - alpha / 2, hits + 1, n - hits))
    return lo, hi

def _girsanov_log_weight(control_vals, eps, dt, seed, path, n_modes):
    """log of the change-of-measure weight along one tilted path."""
    n = control_vals.shape[0]
    s_mixed = 0.0
    for k in range(n):
        xi = noise_increments(seed, path, k, n_modes)
        s_mixed += float(np.dot(control_vals[k], xi)) * math.sqrt(dt)
    s_quad = float(np.sum(control_vals**2)) * dt
    return -s_mixed / math.sqrt(eps) - s_quad / (2.0 * eps)


def mc_small_noise(
    problem: LdpProblem,
    event: RareEvent,
    eps_list,
    n_samples: int,
    tilt: ControlPath | None = None,
    *,
    seed: int = 0,
    rate_value: float | None = None,
    map_fn=map,
) -> LdpReport:
    """Estimate P(event) per noise level, optionally under a Girsanov tilt.

    The tilted estimator averages weight * indicator with
    log weight = -eps^{-1/2} int <phi, dW> - (2 eps)^{-1} int |phi|^2 dt,
    which is unbiased for the untilted probability (unit-tested on the scalar
    reduction).  The trend check fits eps*log(p) linearly in eps by weighted
    least squares and compares the intercept against -rate_value.
    """
    from .ensemble import run_event_batch, supports_batch

    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list):
        raise ValueError("eps values must be positive")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    n = problem.n_steps
    rows = []

    for ei, eps in enumerate(sorted(eps_list, reverse=True)):
        cfg = StepperConfig(dt=problem.cfg.dt, eps=eps, mode=problem.cfg.mode,
                            dealias=problem.cfg.dealias)

        if supports_batch(problem, cfg):
            ctrl = None if tilt is None else tilt.values
            quad = 0.0 if tilt is None else float(np.sum(ctrl**2)) * cfg.dt

            def one_chunk(start, eps=eps, cfg=cfg, ei=ei, ctrl=ctrl, quad=quad):
                m = min(BATCH_CHUNK, n_samples - start)
                inds, mixed = run_event_batch(
                    problem, event, cfg, m, control=ctrl,
                    seed=seed, path_offset=(ei << 32) | start,
                )
                if tilt is None:
                    return inds.astype(float)
                lw = -mixed / math.sqrt(eps) - quad / (2.0 * eps)
                return np.where(inds, np.exp(lw), 0.0)

            starts = range(0, n_samples, BATCH_CHUNK)
            vals = np.concatenate(list(map_fn(one_chunk, starts)))
        else:
            def one_sample(i, eps=eps, cfg=cfg, ei=ei):
                pid = (ei << 32) | i
                if tilt is None:
                    tr = integrate("spde", problem.initial, problem.T, cfg,
                                   problem.nf, problem.buoyancy, problem.forcing,
                                   seed=seed, path=pid, store_states=True)
                    return 1.0 if event_occurs(problem, event, tr.states) else 0.0
                tr = integrate("tilted", problem.initial, problem.T, cfg, problem.nf,
                               problem.buoyancy, problem.forcing,
                               control=tilt.values, seed=seed, path=pid,
                               store_states=True)
                if not event_occurs(problem, event, tr.states):
                    return 0.0
                lw = _girsanov_log_weight(tilt.values, eps, cfg.dt, seed, pid,
                                          problem.nf.n_modes)
                return math.exp(lw)

            vals = np.fromiter(map_fn(one_sample, range(n_samples)), dtype=float,
                               count=n_samples)
        p_hat = float(vals.mean())
        hits = int(np.count_nonzero(vals))
        if tilt is None:
            lo, hi = _clopper_pearson(hits, n_samples)
            se_p = math.sqrt(max(p_hat * (1 - p_hat), 1e-300) / n_samples)
        else:
            se_p = float(vals.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
            lo, hi = max(0.0, p_hat - 1.96 * se_p), p_hat + 1.96 * se_p
        row = {
            "eps": eps,
            "samples": n_samples,
            "hits": hits,
            "p_hat": p_hat,
            "ci_low": lo,
            "ci_high": hi,
            "tilted": tilt is not None,
            "estimator_variance": float(vals.var(ddof=1)) if n_samples > 1 else 0.0,
        }
        if p_hat > 0:
            row["eps_log_p"] = eps * math.log(p_hat)
            row["se_eps_log_p"] = eps * se_p / p_hat
        else:
            row["eps_log_p"] = None
            row["se_eps_log_p"] = None
            row["flag"] = "zero hits: use a tilt"
        rows.append(row)

    intercept = se = None
    consistent = None
    good = [r for r in rows if r["eps_log_p"] is not None and r["se_eps_log_p"]]
    if len(good) >= 2:
        xs = np.array([r["eps"] for r in good])
        ys = np.array([r["eps_log_p"] for r in good])
        ws = np.array([1.0 / max(r["se_eps_log_p"], 1e-12) ** 2 for r in good])
        intercept, se = _wls_intercept(xs, ys, ws)
        if rate_value is not None:
            consistent = abs(intercept - (-rate_value)) <= 3.0 * se
    return LdpReport(rows=rows, rate_value=rate_value, intercept=intercept,
                     intercept_se=se, is_consistent=consistent,
                     meta={"n_samples": n_samples, "tilted": tilt is not None,
                           "seed": seed})


def _wls_intercept(xs, ys, ws):
    """Weighted least-squares extrapolation of eps*log(p) to eps = 0.

    Laplace-type asymptotics carry an eps*log(eps) prefactor correction, so the
    model includes it whenever enough noise levels are available; the intercept
    standard error is inflated by the reduced chi-square of the fit.
    """
    if len(xs) >= 4:
        X = np.column_stack([np.ones_like(xs), xs, xs * np.log(xs)])
    else:
        X = np.column_stack([np.ones_like(xs), xs])
    sw = np.sqrt(ws)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], ys * sw, rcond=None)
    resid = ys - X @ coef
    dof = max(len(xs) - X.shape[1], 1)
    chi2_red = float(np.sum(ws * resid**2) / dof)
    cov = np.linalg.pinv(X.T @ (X * ws[:, None])) * max(1.0, chi2_red)
    return float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))
