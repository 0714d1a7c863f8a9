"""Run configuration: flat key-path text files, validated before any compute.

Format: one `section.key = value` per line, `#` comments, booleans true/false,
lists comma-separated.  Unknown keys are rejected with their full path so
typos surface immediately; every failure message names the offending key.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import Field, GridSpec, NEUMANN_BOTH, read_field, robin_top
from .noise import ITO, STRATONOVICH, NoiseFamily, build_kraichnan_family, read_noise_family
from .operators import BuoyancyProfile, project_values
from .stepping import ForcingSpec, State, StepperConfig

__all__ = ["RunConfig", "parse_config_text", "load_config", "config_hash"]


_DEFAULTS = {
    "grid.nx": "16",
    "grid.ny": "16",
    "grid.nz": "8",
    "grid.h": "1.0",
    "grid.lx": "6.283185307179586",
    "grid.ly": "6.283185307179586",
    "run.t": "0.5",
    "run.dt": "0.01",
    "run.eps": "0.1",
    "run.eps_list": "",
    "run.mode": "ito",
    "run.dealias": "true",
    "run.samples": "256",
    "noise.n_modes": "6",
    "noise.spectrum_exponent": "1.0",
    "noise.amplitude": "0.4",
    "noise.vertical_fraction": "0.5",
    "noise.coupling_amplitude": "0.0",
    "noise.file": "",
    "kappa.value": "1.0",
    "robin.alpha": "0.0",
    "init.kind": "rest",
    "init.k1": "0",
    "init.k2": "1",
    "init.amplitude": "0.1",
    "init.theta_amplitude": "0.0",
    "init.v_file": "",
    "init.theta_file": "",
    "event.kind": "exceed_distance",
    "event.delta": "0.05",
    "event.norm": "H",
    "event.target_v_file": "",
    "event.target_theta_file": "",
    "opt.residual_tol": "1e-3",
    "opt.penalty0": "10.0",
    "opt.max_outer": "8",
    "opt.max_inner": "200",
    "opt.budget": "",
    "tilt.control_file": "",
    "tilt.rate": "",
    "seed": "0",
    "threads": "1",
    "out": "runs/out",
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse key = value lines over the default table; unknown keys rejected."""
    table = dict(_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key not in table:
            raise ConfigError(key, "unknown configuration key")
        table[key] = val
    return table


def config_hash(table: dict[str, str]) -> str:
    canon = "\n".join(f"{k} = {table[k]}" for k in sorted(table))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _f(table, key, positive=False, nonneg=False):
    try:
        v = float(table[key])
    except ValueError:
        raise ConfigError(key, f"not a number: {table[key]!r}") from None
    if positive and v <= 0:
        raise ConfigError(key, f"must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(key, f"must be nonnegative, got {v}")
    return v


def _i(table, key, minimum=None):
    try:
        v = int(table[key])
    except ValueError:
        raise ConfigError(key, f"not an integer: {table[key]!r}") from None
    if minimum is not None and v < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {v}")
    return v


def _b(table, key):
    v = table[key].lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ConfigError(key, f"expected true/false, got {table[key]!r}")


@dataclass
class RunConfig:
    """Validated run setup, ready to execute."""

    table: dict[str, str]
    grid: GridSpec
    T: float
    stepper: StepperConfig
    eps_list: list[float]
    samples: int
    noise: NoiseFamily
    buoyancy: BuoyancyProfile
    alpha: float
    forcing: ForcingSpec
    initial: State
    event_kind: str
    event_delta: float
    event_norm: str
    event_target: State | None
    opt: dict
    tilt_file: str
    tilt_rate: float | None
    seed: int
    threads: int
    out: str

    @property
    def hash(self) -> str:
        return config_hash(self.table)


def load_config(path_or_text, *, is_text: bool = False) -> RunConfig:
    if is_text:
        text = path_or_text
    else:
        try:
            with open(path_or_text) as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(str(path_or_text), f"cannot read config: {e}") from None
    table = parse_config_text(text)

    nx, ny, nz = (_i(table, f"grid.{k}", minimum=1) for k in ("nx", "ny", "nz"))
    try:
        grid = GridSpec(nx, ny, nz, _f(table, "grid.h", positive=True),
                        _f(table, "grid.lx", positive=True),
                        _f(table, "grid.ly", positive=True))
    except ValueError as e:
        raise ConfigError("grid", str(e)) from None

    T = _f(table, "run.t", positive=True)
    dt = _f(table, "run.dt", positive=True)
    eps = _f(table, "run.eps", nonneg=True)
    mode = table["run.mode"].lower()
    if mode not in (ITO, STRATONOVICH):
        raise ConfigError("run.mode", f"must be ito or stratonovich, got {mode!r}")
    stepper = StepperConfig(dt=dt, eps=eps, mode=mode, dealias=_b(table, "run.dealias"))
    if round(T / dt) < 1 or abs(round(T / dt) * dt - T) > 1e-9 * max(1.0, T):
        raise ConfigError("run.dt", f"T/dt = {T}/{dt} is not a positive integer")

    eps_list = []
    if table["run.eps_list"].strip():
        try:
            eps_list = [float(s) for s in table["run.eps_list"].split(",") if s.strip()]
        except ValueError:
            raise ConfigError("run.eps_list", "expected comma-separated numbers") from None
        if any(e <= 0 for e in eps_list):
            raise ConfigError("run.eps_list", "entries must be positive")

    alpha = _f(table, "robin.alpha")
    if table["noise.file"].strip():
        try:
            noise = read_noise_family(table["noise.file"].strip())
        except OSError as e:
            raise ConfigError("noise.file", str(e)) from None
        if noise.grid != grid:
            raise ConfigError("noise.file", "noise family grid does not match grid.*")
        if noise.mode != mode:
            raise ConfigError("noise.file", "noise family mode does not match run.mode")
    else:
        # parabolicity is not enforced at load time: `verify` must be able to
        # inspect and flag unstable families, other commands refuse them
        noise = build_kraichnan_family(
            grid,
            spectrum_exponent=_f(table, "noise.spectrum_exponent"),
            amplitude=_f(table, "noise.amplitude", nonneg=True),
            n_modes=_i(table, "noise.n_modes", minimum=1),
            mode=mode,
            vertical_fraction=_f(table, "noise.vertical_fraction", nonneg=True),
            pressure_coupling_amplitude=_f(table, "noise.coupling_amplitude", nonneg=True),
            enforce_parabolicity=False,
        )

    buoyancy = BuoyancyProfile.constant(grid, _f(table, "kappa.value"))
    forcing = ForcingSpec.none()
    initial = _build_initial(table, grid, alpha)

    event_kind = table["event.kind"].lower()
    if event_kind not in ("exceed_distance", "terminal_ball"):
        raise ConfigError("event.kind", f"unknown event kind {event_kind!r}")
    event_norm = table["event.norm"].upper()
    if event_norm not in ("H", "MR"):
        raise ConfigError("event.norm", "must be H or MR")
    target = None
    if event_kind == "terminal_ball":
        vf, tf = table["event.target_v_file"].strip(), table["event.target_theta_file"].strip()
        if not vf or not tf:
            raise ConfigError("event.target_v_file",
                              "terminal_ball event needs target_v_file and target_theta_file")
        target = State(read_field(vf), read_field(tf))

    opt = {
        "residual_tol": _f(table, "opt.residual_tol", positive=True),
        "penalty0": _f(table, "opt.penalty0", positive=True),
        "max_outer": _i(table, "opt.max_outer", minimum=1),
        "max_inner": _i(table, "opt.max_inner", minimum=1),
        "budget": _f(table, "opt.budget", positive=True) if table["opt.budget"].strip() else None,
    }
    tilt_rate = float(table["tilt.rate"]) if table["tilt.rate"].strip() else None

    return RunConfig(
        table=table, grid=grid, T=T, stepper=stepper, eps_list=eps_list,
        samples=_i(table, "run.samples", minimum=1), noise=noise,
        buoyancy=buoyancy, alpha=alpha, forcing=forcing, initial=initial,
        event_kind=event_kind, event_delta=_f(table, "event.delta", positive=True),
        event_norm=event_norm, event_target=target, opt=opt,
        tilt_file=table["tilt.control_file"].strip(), tilt_rate=tilt_rate,
        seed=_i(table, "seed", minimum=0), threads=_i(table, "threads", minimum=1),
        out=table["out"],
    )


def _build_initial(table, grid: GridSpec, alpha: float) -> State:
    kind = table["init.kind"].lower()
    if kind == "rest":
        return State.rest(grid, alpha=alpha)
    if kind == "harmonic":
        k1, k2 = _i(table, "init.k1"), _i(table, "init.k2")
        if (k1, k2) == (0, 0):
            raise ConfigError("init.k1", "harmonic initial state needs a nonzero wavevector")
        amp = _f(table, "init.amplitude")
        tamp = _f(table, "init.theta_amplitude")
        X, Y, _ = grid.meshgrid()
        wave = np.sin(2 * np.pi * (k1 * X / grid.lx + k2 * Y / grid.ly))
        kn = np.hypot(k1, k2)
        d = np.array([-k2, k1]) / kn
        v = project_values(grid, amp * np.stack([d[0] * wave, d[1] * wave]))
        th = tamp * np.cos(2 * np.pi * (k1 * X / grid.lx + k2 * Y / grid.ly))[None]
        return State(Field(grid, v, bc=NEUMANN_BOTH), Field(grid, th, bc=robin_top(alpha)))
    if kind == "file":
        vf, tf = table["init.v_file"].strip(), table["init.theta_file"].strip()
        if not vf or not tf:
            raise ConfigError("init.v_file", "file initial state needs v_file and theta_file")
        try:
            v = read_field(vf)
            th = read_field(tf)
        except OSError as e:
            raise ConfigError("init.v_file", str(e)) from None
        if v.bc is None:
            v = Field(v.grid, v.values, bc=NEUMANN_BOTH)
        if th.bc is None:
            th = Field(th.grid, th.values, bc=robin_top(alpha))
        return State(v, th)
    raise ConfigError("init.kind", f"unknown initial-state kind {kind!r}")
