"""Command-line entry point: simulate | skeleton | rate | mc-ldp | verify.

The only module with side effects.  All text output renders floats with 17
significant digits so files round-trip losslessly, and every text output file
embeds the configuration hash in its header line.  Exit codes: 0 ok,
2 config/IO error, 3 blowup, 4 optimizer divergence, 5 verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .diagnostics import ENERGY_CSV_COLUMNS, gronwall_budget
from .errors import (
    BlowupDetected,
    ConfigError,
    Diverged,
    HydroLdpError,
    InvalidField,
)
from .grid import write_field
from .ldp import (
    ControlPath,
    LdpProblem,
    RareEvent,
    forward_map,
    mc_small_noise,
    minimize_rate,
    read_control,
    write_control,
)
from .noise import STRATONOVICH, check_noise_assumptions, build_kraichnan_family
from .stepping import StepperConfig, integrate
from .textio import dumps17, fmt

__all__ = ["main"]


def _write_trajectory_ndjson(path, traj, cfg_hash, snapshots=None):
    with open(path, "w") as fh:
        fh.write(dumps17({"record": "header", "config": cfg_hash,
                          "mr_norm": traj.mr_norm, "eps": traj.eps,
                          **traj.meta}) + "\n")
        for i, s in enumerate(traj.samples):
            rec = {"t": s.t}
            for c in ENERGY_CSV_COLUMNS[1:]:
                rec[c] = getattr(s, c)
            rec["snapshot"] = snapshots.get(i) if snapshots else None
            fh.write(dumps17(rec) + "\n")


def _write_energy_csv(path, traj, cfg_hash):
    with open(path, "w") as fh:
        fh.write(f"# config={cfg_hash}\n")
        fh.write(",".join(ENERGY_CSV_COLUMNS) + "\n")
        for s in traj.samples:
            fh.write(",".join(fmt(float(getattr(s, c))) for c in ENERGY_CSV_COLUMNS) + "\n")


def _write_gronwall_csv(path, budget, cfg_hash):
    with open(path, "w") as fh:
        fh.write(f"# config={cfg_hash} level={budget.level} "
                 f"constant={fmt(float(budget.constant))} "
                 f"dissipation={fmt(float(budget.dissipation_coeff))}\n")
        fh.write("t,lhs,rhs,margin\n")
        for t, lo, hi in zip(budget.times, budget.lhs, budget.rhs):
            fh.write(f"{fmt(float(t))},{fmt(float(lo))},{fmt(float(hi))},"
                     f"{fmt(float(hi - lo))}\n")


def _outdir(cfg: RunConfig, override=None) -> Path:
    out = Path(override or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _problem(cfg: RunConfig) -> LdpProblem:
    return LdpProblem(initial=cfg.initial, T=cfg.T, cfg=cfg.stepper, nf=cfg.noise,
                      buoyancy=cfg.buoyancy, forcing=cfg.forcing)


def _event(cfg: RunConfig) -> RareEvent:
    return RareEvent(cfg.event_kind, cfg.event_delta, cfg.event_norm,
                     target=cfg.event_target)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    traj = integrate("spde", cfg.initial, cfg.T, cfg.stepper, cfg.noise,
                     cfg.buoyancy, cfg.forcing, seed=cfg.seed, store_states=True)
    final = traj.final_state
    write_field(out / "final_v.snap", final.v)
    write_field(out / "final_theta.snap", final.theta)
    snaps = {len(traj.samples) - 1: "final_v.snap"}
    _write_trajectory_ndjson(out / "trajectory.ndjson", traj, cfg.hash, snaps)
    _write_energy_csv(out / "energy.csv", traj, cfg.hash)
    print(f"simulate: {len(traj.times) - 1} steps, "
          f"mr_norm={fmt(traj.mr_norm)}, "
          f"max_constraint_residual={fmt(traj.max_constraint_residual)}")
    return 0


def cmd_skeleton(cfg: RunConfig, out: Path, control_file: str | None) -> int:
    n = round(cfg.T / cfg.stepper.dt)
    if control_file:
        cp = read_control(control_file)
        if cp.n_steps != n or cp.n_modes != cfg.noise.n_modes:
            raise ConfigError("control", f"control shape {cp.values.shape} does not "
                              f"match (steps, modes) = ({n}, {cfg.noise.n_modes})")
        if abs(cp.dt - cfg.stepper.dt) > 1e-12 * cfg.stepper.dt:
            raise ConfigError("control", "control dt does not match run.dt")
    else:
        cp = ControlPath.zeros(n, cfg.noise.n_modes, cfg.stepper.dt)
    skel_cfg = StepperConfig(dt=cfg.stepper.dt, eps=0.0, mode=cfg.stepper.mode,
                             dealias=cfg.stepper.dealias)
    traj = integrate("skeleton", cfg.initial, cfg.T, skel_cfg, cfg.noise,
                     cfg.buoyancy, cfg.forcing, control=cp.values,
                     budget=cfg.opt["budget"], store_states=True)
    _write_trajectory_ndjson(out / "trajectory.ndjson", traj, cfg.hash)
    _write_energy_csv(out / "energy.csv", traj, cfg.hash)
    for level in ("L2", "Intermediate", "H1"):
        budget = gronwall_budget(traj, level=level, control=cp.values)
        _write_gronwall_csv(out / f"gronwall_{level.lower()}.csv", budget, cfg.hash)
    write_field(out / "final_v.snap", traj.final_state.v)
    write_field(out / "final_theta.snap", traj.final_state.theta)
    print(f"skeleton: {n} steps, control_cost={fmt(cp.cost)}, "
          f"mr_norm={fmt(traj.mr_norm)}")
    return 0


def cmd_rate(cfg: RunConfig, out: Path) -> int:
    problem = _problem(cfg)
    event = _event(cfg)
    try:
        res = minimize_rate(
            problem, event,
            residual_tol=cfg.opt["residual_tol"], penalty0=cfg.opt["penalty0"],
            max_outer=cfg.opt["max_outer"], max_inner=cfg.opt["max_inner"],
        )
    except Diverged as e:
        with open(out / "rate.ndjson", "w") as fh:
            fh.write(dumps17({"record": "header", "config": cfg.hash,
                              "status": "diverged", "message": str(e)}) + "\n")
            for row in e.trace or []:
                fh.write(dumps17({"record": "trace", **row}) + "\n")
        if e.last_iterate is not None:
            write_control(out / "last_iterate.control", e.last_iterate, cfg.hash)
        print(f"rate: diverged: {e}", file=sys.stderr)
        return 4
    write_control(out / "optimal.control", res.control, cfg.hash)
    with open(out / "rate.ndjson", "w") as fh:
        fh.write(dumps17({"record": "header", "config": cfg.hash, "status": "ok",
                          "rate": res.rate, "residual": res.residual,
                          "penalty": res.penalty, "iterations": res.iterations}) + "\n")
        for row in res.trace:
            fh.write(dumps17({"record": "trace", **row}) + "\n")
    print(f"rate: I={fmt(res.rate)} residual={fmt(res.residual)} "
          f"iterations={res.iterations}")
    return 0


def cmd_mc_ldp(cfg: RunConfig, out: Path) -> int:
    problem = _problem(cfg)
    event = _event(cfg)
    eps_list = cfg.eps_list or [cfg.stepper.eps]
    tilt = read_control(cfg.tilt_file) if cfg.tilt_file else None
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            report = mc_small_noise(problem, event, eps_list, cfg.samples,
                                    tilt=tilt, seed=cfg.seed,
                                    rate_value=cfg.tilt_rate, map_fn=pool.map)
    else:
        report = mc_small_noise(problem, event, eps_list, cfg.samples,
                                tilt=tilt, seed=cfg.seed, rate_value=cfg.tilt_rate)
    report.meta["config"] = cfg.hash
    with open(out / "ldp_report.ndjson", "w") as fh:
        fh.write(report.to_ndjson())
    zeros = [r for r in report.rows if r["p_hat"] == 0.0]
    msg = f"mc-ldp: {len(report.rows)} noise levels, {cfg.samples} samples each"
    if report.intercept is not None:
        msg += f", eps*log(p) intercept={fmt(report.intercept)}"
    if zeros:
        msg += f" [{len(zeros)} level(s) with zero hits: use a tilt]"
    print(msg)
    return 0


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    from .verify import (
        draw_coercivity_samples,
        fit_coercivity,
        ito_stratonovich_consistency,
        projection_algebra_suite,
        structural_identity_suite,
        turbulent_pressure_check,
    )

    rows = []
    try:
        fam = cfg.noise
        rep = check_noise_assumptions(fam)
        for c in rep.checks:
            if c.bound is not None:
                rows.append((f"noise: {c.name}", c.value, c.bound, c.passed))
    except HydroLdpError as e:
        rows.append((f"noise: construction ({e})", float("nan"), 0.0, False))
        fam = None

    g = cfg.grid
    for r in projection_algebra_suite(g, n_fields=50, seed=cfg.seed):
        rows.append((r.name, r.value, r.tol, r.passed))
    for r in structural_identity_suite(g, n_fields=25, seed=cfg.seed + 1):
        rows.append((r.name, r.value, r.tol, r.passed))

    if fam is not None:
        samples = draw_coercivity_samples(g, fam, cfg.buoyancy, cfg.alpha,
                                          n_samples=240, seed=cfg.seed + 2)
        fit = fit_coercivity(samples)
        rows.append(("coercivity fit nu_hat > 0", -fit.nu_hat, 0.0, fit.ok))

        strat = fam if fam.mode == STRATONOVICH else build_kraichnan_family(
            g, amplitude=0.4, n_modes=min(fam.n_modes, 6), mode=STRATONOVICH)
        cons = ito_stratonovich_consistency(g, strat, cfg.buoyancy,
                                            dt_levels=(1 / 8, 1 / 16), seed=cfg.seed)
        ratio = cons["errors"][0] / max(cons["errors"][1], 1e-300)
        rows.append(("ito-stratonovich halving error ratio >= 1.4", -ratio, -1.4,
                     ratio >= 1.4))

        if fam.pressure_coupling is not None:
            err = turbulent_pressure_check(g, fam, seed=cfg.seed)
            rows.append(("turbulent pressure vs dense oracle", err, 1e-8, err <= 1e-8))

    ok = all(r[3] for r in rows)
    lines = [f"{'check':58s} {'value':>13s} {'bound':>13s}  status"]
    for name, value, bound, passed in rows:
        lines.append(f"{name:58s} {value:13.5g} {bound:13.5g}  "
                     f"{'pass' if passed else 'FAIL'}")
    table = "\n".join(lines)
    print(table)
    with open(out / "verify.txt", "w") as fh:
        fh.write(f"# config={cfg.hash}\n{table}\n")
    return 0 if ok else 5


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hydroldp",
        description="Pseudo-spectral solver and rare-event analysis for the "
                    "stochastic hydrostatic system",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "skeleton", "rate", "mc-ldp", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="configuration file path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (fallback: HYDROLDP_THREADS)")
        if name == "skeleton":
            p.add_argument("--control", default=None, help="control path file")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = int(args.seed)
            cfg.table["seed"] = str(cfg.seed)
        threads = args.threads
        if threads is None:
            threads = int(os.environ.get("HYDROLDP_THREADS", cfg.threads))
        cfg.threads = max(1, threads)
        cfg.table["threads"] = "1"  # thread count must not change outputs or hash
        out = _outdir(cfg, args.out)

        if args.command != "verify" and cfg.noise.nu >= 2.0:
            raise ConfigError(
                "noise.amplitude",
                f"ellipticity constant {cfg.noise.nu:.4g} >= 2; run `verify` to inspect",
            )
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "skeleton":
            return cmd_skeleton(cfg, out, args.control)
        if args.command == "rate":
            return cmd_rate(cfg, out)
        if args.command == "mc-ldp":
            return cmd_mc_ldp(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, out)
        raise ConfigError("command", f"unknown command {args.command!r}")
    except (ConfigError, InvalidField, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except BlowupDetected as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except Diverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
