"""Energy functionals, Gronwall budgets and tail statistics over trajectories.

Norms use collocation/midpoint quadrature (exact for resolved harmonics).
The second-order norm sums all nine second-derivative blocks, matching the
identity that relates the Laplacian pairing to the full Hessian energy on
fields with zero vertical flux.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .grid import Field, dx, dy, dz_apply

if TYPE_CHECKING:  # pragma: no cover
    from .stepping import State, Trajectory

__all__ = [
    "EnergySample",
    "sample_energies",
    "h_distance",
    "GronwallBudget",
    "gronwall_budget",
    "tail_probability_scan",
    "energy_csv_rows",
    "ENERGY_CSV_COLUMNS",
]


@dataclass
class EnergySample:
    """Squared norms of one state snapshot (all entries >= 0 and finite)."""

    t: float
    l2_v: float
    l2_theta: float
    grad_v: float
    grad_theta: float
    h1_vbar: float
    l2_dz_v: float
    l4_vtilde: float
    cross: float
    h2_v: float
    mr_running: float = 0.0

    def h_norm_sq(self, c0: float = 1.0) -> float:
        """H-level energy: ||v||_{H1}^2 + c0 ||theta||_{L2}^2."""
        return self.l2_v + self.grad_v + c0 * self.l2_theta

    def v_norm_sq(self, c0: float = 1.0) -> float:
        """V-level energy: ||v||_{H2}^2 + c0 ||theta||_{H1}^2."""
        return self.h2_v + c0 * (self.l2_theta + self.grad_theta)

    def validate(self) -> None:
        vals = [self.l2_v, self.l2_theta, self.grad_v, self.grad_theta, self.h1_vbar,
                self.l2_dz_v, self.l4_vtilde, self.cross, self.h2_v]
        if not all(np.isfinite(x) and x >= 0 for x in vals):
            raise ValueError("energy sample has negative or non-finite entries")


ENERGY_CSV_COLUMNS = [
    "t", "l2_v", "l2_theta", "grad_v", "grad_theta", "h1_vbar",
    "l2_dz_v", "l4_vtilde", "cross", "h2_v", "mr_running",
]


def _gradient_arrays(f: Field) -> np.ndarray:
    """(3, c, nx, ny, nz) gradient; vertical part uses bc ghosts when tagged."""
    g = f.grid
    d3m = g.d1_matrix(f.bc)
    return np.stack([dx(g, f.values), dy(g, f.values), dz_apply(d3m, f.values)])


def second_derivative_energy(f: Field) -> float:
    """sum over all (i,j) of the squared L2 norm of d_i d_j f."""
    g = f.grid
    v = f.values
    d3 = dz_apply(g.d1_matrix(f.bc), v)
    blocks = {
        (0, 0): dx(g, dx(g, v)),
        (0, 1): dy(g, dx(g, v)),
        (1, 1): dy(g, dy(g, v)),
        (0, 2): dx(g, d3),
        (1, 2): dy(g, d3),
        (2, 2): dz_apply(g.d2_matrix(f.bc), v),
    }
    total = 0.0
    for (i, j), arr in blocks.items():
        mult = 1.0 if i == j else 2.0
        total += mult * float(np.sum(arr**2))
    return total * g.cell_volume


def sample_energies(v: Field, theta: Field, t: float = 0.0) -> EnergySample:
    g = v.grid
    dvol, darea = g.cell_volume, g.cell_area

    gv = _gradient_arrays(v)
    gt = _gradient_arrays(theta)

    vbar = v.values.mean(axis=-1)
    vtilde = v.values - vbar[..., None]
    gvb = np.stack([
        np.real(np.fft.ifft2(1j * g.kx[..., 0] * np.fft.fft2(vbar, axes=(-2, -1)), axes=(-2, -1))),
        np.real(np.fft.ifft2(1j * g.ky[..., 0] * np.fft.fft2(vbar, axes=(-2, -1)), axes=(-2, -1))),
    ])
    # gradient of the fluctuation: subtract the mean's horizontal derivatives;
    # the vertical derivative of the (z-constant) mean vanishes
    gvt = np.empty_like(gv)
    gvt[0] = gv[0] - gvb[0][..., None]
    gvt[1] = gv[1] - gvb[1][..., None]
    gvt[2] = gv[2]

    sample = EnergySample(
        t=t,
        l2_v=float(np.sum(v.values**2)) * dvol,
        l2_theta=float(np.sum(theta.values**2)) * dvol,
        grad_v=float(np.sum(gv**2)) * dvol,
        grad_theta=float(np.sum(gt**2)) * dvol,
        h1_vbar=float(np.sum(vbar**2) + np.sum(gvb**2)) * darea,
        l2_dz_v=float(np.sum(gv[2] ** 2)) * dvol,
        l4_vtilde=float(np.sum(np.sum(vtilde**2, axis=0) ** 2)) * dvol,
        cross=float(np.sum(np.sum(vtilde**2, axis=0) * np.sum(gvt**2, axis=(0, 1)))) * dvol,
        h2_v=float(np.sum(v.values**2)) * dvol + float(np.sum(gv**2)) * dvol
        + second_derivative_energy(v),
    )
    sample.validate()
    return sample


def h_distance(a: "State", b: "State", c0: float = 1.0) -> float:
    """H-level distance between two states (H1 on v, L2 on theta)."""
    g = a.grid
    dv = Field(g, a.v.values - b.v.values, bc=a.v.bc)
    dth = a.theta.values - b.theta.values
    gv = _gradient_arrays(dv)
    val = (np.sum(dv.values**2) + np.sum(gv**2) + c0 * np.sum(dth**2)) * g.cell_volume
    return float(np.sqrt(val))


# ---------------------------------------------------------------------------
# Gronwall budgets


@dataclass
class GronwallBudget:
    level: str
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    constant: float           # fitted or supplied growth constant
    dissipation_coeff: float
    first_violation: float | None  # time of first margin < -tol, None if none

    @property
    def margin(self) -> np.ndarray:
        return self.rhs - self.lhs


_LEVELS = {
    # level -> (monitored energy, dissipation integrand), both from EnergySample
    "L2": (lambda s: s.l2_v + s.l2_theta, lambda s: s.grad_v + s.grad_theta),
    "Intermediate": (lambda s: s.h1_vbar + s.l2_dz_v + s.l4_vtilde, lambda s: s.cross),
    "H1": (lambda s: s.l2_v + s.grad_v, lambda s: s.h2_v),
}


def _budget_series(samples, control_sq, constant, diss_coeff, source_sq, level):
    monitored, dissipation = _LEVELS[level]
    lhs = np.array([monitored(s) for s in samples])
    dts = np.diff([s.t for s in samples])
    rhs = np.empty_like(lhs)
    rhs[0] = lhs[0]
    acc = lhs[0]
    for k, dt in enumerate(dts):
        grow = constant * (1.0 + control_sq[k]) * lhs[k] + source_sq[k]
        acc = acc + dt * (grow - diss_coeff * dissipation(samples[k + 1]))
        rhs[k + 1] = acc
    return lhs, rhs


def gronwall_budget(
    traj: "Trajectory",
    level: str = "L2",
    constant: float | None = None,
    control: np.ndarray | None = None,
    source_sq: np.ndarray | None = None,
    dissipation_coeff: float = 1.0,
    tol: float = 1e-9,
    max_constant: float = 2.0**10,
) -> GronwallBudget:
    """Check (or fit by bisection) the integral budget for a trajectory.

    The right-hand side accumulates constant * (1 + |control|_l2^2) * lhs plus
    the forcing source, minus dissipation; margin must stay nonnegative.  When
    `constant` is None the smallest feasible value <= max_constant is found by
    bisection (reported in the result); infeasibility is flagged through
    `first_violation`.
    """
    if level not in _LEVELS:
        raise ValueError(f"unknown level {level!r}; options {sorted(_LEVELS)}")
    samples = traj.samples
    n = len(samples) - 1
    csq = np.zeros(n) if control is None else np.sum(np.asarray(control) ** 2, axis=1)
    ssq = np.zeros(n) if source_sq is None else np.asarray(source_sq, dtype=float)
    if len(csq) != n or len(ssq) != n:
        raise ValueError("control/source series must have one entry per step")

    def violation_time(c):
        lhs, rhs = _budget_series(samples, csq, c, dissipation_coeff, ssq, level)
        bad = np.nonzero(rhs - lhs < -tol * max(1.0, lhs[0]))[0]
        return (lhs, rhs, None if len(bad) == 0 else float(samples[bad[0]].t))

    if constant is not None:
        lhs, rhs, first = violation_time(constant)
        return GronwallBudget(level, np.array([s.t for s in samples]), lhs, rhs,
                              constant, dissipation_coeff, first)

    lo, hi = 0.0, 1.0
    lhs, rhs, first = violation_time(0.0)
    if first is None:
        hi = 0.0
    else:
        while hi <= max_constant:
            _, _, f = violation_time(hi)
            if f is None:
                break
            hi *= 2.0
        if hi > max_constant:
            lhs, rhs, first = violation_time(max_constant)
            return GronwallBudget(level, np.array([s.t for s in samples]), lhs, rhs,
                                  max_constant, dissipation_coeff, first)
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            _, _, f = violation_time(mid)
            if f is None:
                hi = mid
            else:
                lo = mid
    lhs, rhs, first = violation_time(hi)
    return GronwallBudget(level, np.array([s.t for s in samples]), lhs, rhs,
                          hi, dissipation_coeff, first)


# ---------------------------------------------------------------------------
# tail probabilities


def tail_probability_scan(ensemble: list["Trajectory"], gammas) -> list[dict]:
    """Empirical survival P(MR-norm > gamma) per noise level across an ensemble.

    Returns rows {gamma, eps, probability, count}; monotone nonincreasing in
    gamma by construction.  Requires at least 8 trajectories.
    """
    if len(ensemble) < 8:
        raise ValueError("need at least 8 trajectories for a tail scan")
    gammas = np.asarray(list(gammas), dtype=float)
    rows = []
    by_eps: dict[float, list[float]] = {}
    for tr in ensemble:
        by_eps.setdefault(tr.eps, []).append(tr.mr_norm)
    for eps in sorted(by_eps):
        norms = np.array(by_eps[eps])
        for gamma in gammas:
            rows.append({
                "gamma": float(gamma),
                "eps": float(eps),
                "probability": float(np.mean(norms > gamma)),
                "count": int(norms.size),
            })
    return rows


def energy_csv_rows(traj: "Trajectory"):
    for s in traj.samples:
        yield [getattr(s, c) for c in ENERGY_CSV_COLUMNS]
