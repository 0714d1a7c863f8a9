"""Transport-noise coefficient families and their structural checks.

A NoiseFamily holds finitely many coefficient fields: 3-vector velocity
transport modes, 3-vector temperature transport modes, and optional 2x2
pressure-coupling matrices on the torus.  The default construction is a
deterministic trigonometric family with power-law shell amplitudes in the
spirit of Kraichnan's model: each horizontal shell contributes a quadruple of
divergence-free waves whose one-point covariance is exactly isotropic, which
makes the ellipticity constant a closed-form quantity and keeps the coercivity
diagnostics sharp.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidField, ModeMismatch, ParabolicityViolation
from .grid import Field, GridSpec, dx, dy, dz_apply

__all__ = [
    "ITO",
    "STRATONOVICH",
    "NoiseFamily",
    "CorrectionOperators",
    "build_kraichnan_family",
    "check_noise_assumptions",
    "turbulent_pressure",
    "stratonovich_corrections",
    "parabolicity_nu",
    "write_noise_family",
    "read_noise_family",
]

ITO = "ito"
STRATONOVICH = "stratonovich"


@dataclass
class NoiseFamily:
    """Coefficient fields for the transport noise, plus declared bounds.

    vel_modes  : (N, 3, nx, ny, nz) velocity transport coefficients
    temp_modes : (N, 3, nx, ny, nz) temperature transport coefficients
    pressure_coupling : (N, 2, 2, nx, ny) or None (turbulent-pressure matrices)
    mode       : 'ito' or 'stratonovich'
    bound_m / bound_delta / nu : declared norm bound, Lebesgue-exponent offset,
                                 and ellipticity constant (sup of the one-point
                                 covariance quadratic form; must stay < 2)
    """

    grid: GridSpec
    vel_modes: np.ndarray
    temp_modes: np.ndarray
    pressure_coupling: np.ndarray | None
    mode: str
    bound_m: float
    bound_delta: float
    nu: float
    divergence_free: bool = True

    def __post_init__(self):
        g = self.grid
        shp = (3, g.nx, g.ny, g.nz)
        self.vel_modes = np.asarray(self.vel_modes, dtype=float)
        self.temp_modes = np.asarray(self.temp_modes, dtype=float)
        if self.vel_modes.ndim != 5 or self.vel_modes.shape[1:] != shp:
            raise InvalidField(f"vel_modes shape {self.vel_modes.shape} != (N,)+{shp}")
        if self.temp_modes.shape != self.vel_modes.shape:
            raise InvalidField("temp_modes shape must match vel_modes")
        if self.pressure_coupling is not None:
            pc = np.asarray(self.pressure_coupling, dtype=float)
            if pc.shape != (self.n_modes, 2, 2, g.nx, g.ny):
                raise InvalidField(f"pressure_coupling shape {pc.shape}")
            self.pressure_coupling = pc
        if self.mode not in (ITO, STRATONOVICH):
            raise ValueError(f"mode must be '{ITO}' or '{STRATONOVICH}'")

    @property
    def n_modes(self) -> int:
        return self.vel_modes.shape[0]

    def covariance_matrix(self, which: str = "vel") -> np.ndarray:
        """One-point covariance sum_n m_n m_n^T, shape (nx, ny, nz, 3, 3)."""
        m = self.vel_modes if which == "vel" else self.temp_modes
        return np.einsum("nixyz,njxyz->xyzij", m, m)

    def scaled(self, factor: float) -> "NoiseFamily":
        """Family with all coefficient fields multiplied by `factor`."""
        pc = None if self.pressure_coupling is None else self.pressure_coupling.copy()
        return replace(
            self,
            vel_modes=self.vel_modes * factor,
            temp_modes=self.temp_modes * factor,
            pressure_coupling=pc,
            nu=self.nu * factor**2,
        )


# ---------------------------------------------------------------------------
# construction


def _shell_waves(grid: GridSpec, m: int):
    """The four divergence-free horizontal waves of shell m (z-independent).

    Per shell the one-point covariance of the quadruple is exactly isotropic:
    cos^2 + sin^2 collapses pointwise, so sum phi phi^T = amp^2 * I_2.
    """
    x, y, _ = grid.meshgrid()
    ky = 2 * np.pi * m / grid.ly
    kx = 2 * np.pi * m / grid.lx
    waves = [
        (0, np.cos(ky * y)),
        (0, np.sin(ky * y)),
        (1, np.cos(kx * x)),
        (1, np.sin(kx * x)),
    ]
    return waves


def build_kraichnan_family(
    grid: GridSpec,
    spectrum_exponent: float = 1.0,
    amplitude: float = 0.5,
    n_modes: int = 4,
    mode: str = ITO,
    vertical_fraction: float = 0.5,
    pressure_coupling_amplitude: float = 0.0,
    bound_delta: float = 1.0,
    enforce_parabolicity: bool = True,
) -> NoiseFamily:
    """Deterministic trigonometric family with shell amplitudes amp * m^(-s).

    Modes are laid out in blocks of six per shell: four z-independent
    divergence-free horizontal waves (covariance exactly isotropic in the
    horizontal plane) and two vertical-component waves with a parabolic
    z-profile that vanishes at both faces.  Temperature modes reuse the
    horizontal quadruples (rescaled), hence are exactly divergence-free with
    zero third component.  Raises ParabolicityViolation if the resulting
    ellipticity constant reaches 2.
    """
    if n_modes < 1:
        raise ValueError("n_modes >= 1 required")
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    g = grid
    x, y, z = g.meshgrid()
    vel = np.zeros((n_modes, 3, g.nx, g.ny, g.nz))
    temp = np.zeros_like(vel)
    # parabolic profile vanishing at both faces; being a quadratic, its
    # extrapolated boundary trace is exactly zero on the discrete grid
    zprof = 4.0 * (z + g.h) * (-z) / g.h**2

    n = 0
    shell = 1
    while n < n_modes:
        amp = amplitude * shell ** (-spectrum_exponent)
        for comp, wave in _shell_waves(g, shell):
            if n >= n_modes:
                break
            vel[n, comp] = amp * wave
            temp[n, comp] = amp * wave
            n += 1
        for wave in (np.cos(2 * np.pi * shell * x / g.lx), np.sin(2 * np.pi * shell * x / g.lx)):
            if n >= n_modes:
                break
            vel[n, 2] = vertical_fraction * amp * zprof * wave
            # temperature modes stay horizontal: exactly divergence-free
            tw = _shell_waves(g, shell)[n % 2]
            temp[n, tw[0]] = vertical_fraction * amp * tw[1]
            n += 1
        shell += 1

    pc = None
    if pressure_coupling_amplitude > 0:
        pc = np.zeros((n_modes, 2, 2, g.nx, g.ny))
        x2, y2 = np.meshgrid(g.x, g.y, indexing="ij")
        for i in range(n_modes):
            a = pressure_coupling_amplitude * (1 + i) ** (-spectrum_exponent)
            pc[i, 0, 0] = a * np.cos(2 * np.pi * x2 / g.lx)
            pc[i, 1, 1] = a * np.sin(2 * np.pi * y2 / g.ly)
            pc[i, 0, 1] = 0.5 * a * np.cos(2 * np.pi * y2 / g.ly)

    fam = NoiseFamily(
        grid=g,
        vel_modes=vel,
        temp_modes=temp,
        pressure_coupling=pc,
        mode=mode,
        bound_m=0.0,
        bound_delta=bound_delta,
        nu=0.0,
        divergence_free=True,
    )
    nu = max(parabolicity_nu(fam, which="vel", method="eig"),
             parabolicity_nu(fam, which="temp", method="eig"))
    if nu >= 2.0 and enforce_parabolicity:
        raise ParabolicityViolation(
            f"ellipticity constant {nu:.4g} >= 2; lower the amplitude"
        )
    fam.nu = nu
    fam.bound_m = _default_bound_m(fam)
    return fam


def _default_bound_m(fam: NoiseFamily) -> float:
    """Declared bound: measured worst norm with 5% slack."""
    rep = check_noise_assumptions(replace(fam, bound_m=np.inf))
    worst = max((c.value for c in rep.checks if c.kind == "norm"), default=0.0)
    return worst * 1.05 + 1e-12


# ---------------------------------------------------------------------------
# ellipticity constant

_DIRECTIONS_26 = np.array(
    [
        (i, j, k)
        for i in (-1, 0, 1)
        for j in (-1, 0, 1)
        for k in (-1, 0, 1)
        if (i, j, k) != (0, 0, 0)
    ],
    dtype=float,
)
_DIRECTIONS_26 /= np.linalg.norm(_DIRECTIONS_26, axis=1, keepdims=True)


def parabolicity_nu(fam: NoiseFamily, which: str = "vel", method: str = "directions") -> float:
    """sup over grid points of the covariance quadratic form on unit vectors.

    'directions' sweeps the fixed 26-direction stencil (cheap, certified from
    below); 'eig' takes exact pointwise eigenvalues.
    """
    cov = fam.covariance_matrix(which)
    if method == "eig":
        return float(np.linalg.eigvalsh(cov)[..., -1].max())
    vals = np.einsum("di,xyzij,dj->xyzd", _DIRECTIONS_26, cov, _DIRECTIONS_26)
    return float(vals.max())


# ---------------------------------------------------------------------------
# assumption report


@dataclass
class AssumptionCheck:
    name: str
    value: float
    bound: float | None
    passed: bool
    kind: str = "norm"  # norm | structure | report


@dataclass
class AssumptionReport:
    checks: list[AssumptionCheck]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def table(self) -> str:
        lines = [f"{'check':46s} {'value':>12s} {'bound':>12s}  status"]
        for c in self.checks:
            b = f"{c.bound:12.5g}" if c.bound is not None else "           -"
            mark = "pass" if c.passed else "FAIL"
            lines.append(f"{c.name:46s} {c.value:12.5g} {b}  {mark}")
        return "\n".join(lines)


def _lp_norm(grid: GridSpec, values: np.ndarray, p: float) -> float:
    return float((np.sum(np.abs(values) ** p) * grid.cell_volume) ** (1.0 / p))


def check_noise_assumptions(fam: NoiseFamily) -> AssumptionReport:
    """Structural checks on a noise family; failures are reported, not raised."""
    g = fam.grid
    p = 3.0 + fam.bound_delta
    M = fam.bound_m
    checks: list[AssumptionCheck] = []

    # component-wise L^(3+delta) of the mode-l2 envelope and its gradients
    for j in range(3):
        env = np.sqrt(np.sum(fam.vel_modes[:, j] ** 2, axis=0))
        v = _lp_norm(g, env, p)
        checks.append(AssumptionCheck(f"lp_envelope_vel[{j}]", v, M, v <= M))
    for j in range(3):
        grads = np.stack(
            [
                dx(g, fam.vel_modes[:, j]),
                dy(g, fam.vel_modes[:, j]),
                dz_apply(g.d1_free_matrix, fam.vel_modes[:, j]),
            ]
        )
        env = np.sqrt(np.sum(grads**2, axis=(0, 1)))
        v = _lp_norm(g, env, p)
        checks.append(AssumptionCheck(f"lp_envelope_grad_vel[{j}]", v, M, v <= M))

    # pointwise l2 envelope of temperature modes
    env_t = np.sqrt(np.sum(fam.temp_modes**2, axis=(0, 1)))
    v = float(env_t.max())
    checks.append(AssumptionCheck("sup_envelope_temp", v, M, v <= M))

    # pressure coupling bound
    if fam.pressure_coupling is not None:
        env_g = np.sqrt(np.sum(fam.pressure_coupling**2, axis=(0, 1, 2)))
        v = float((np.sum(env_g**p) * g.cell_area) ** (1 / p))
        checks.append(AssumptionCheck("lp_envelope_pressure_coupling", v, M, v <= M))

    # ellipticity (sampled-direction sup, certified from below)
    for which in ("vel", "temp"):
        nu_hat = parabolicity_nu(fam, which, method="directions")
        checks.append(
            AssumptionCheck(f"ellipticity_nu[{which}]", nu_hat, 2.0, nu_hat < 2.0, "structure")
        )

    # z-independence of horizontal velocity components (and coupling matrices)
    zvar = float(np.var(fam.vel_modes[:, :2], axis=-1).max()) if fam.n_modes else 0.0
    checks.append(AssumptionCheck("z_independence_vel_H", zvar, 1e-12, zvar <= 1e-12, "structure"))

    # boundary traces of the vertical components (no-penetration)
    for nm, arr in (("vel", fam.vel_modes), ("temp", fam.temp_modes)):
        top = np.abs(arr[:, 2] @ g.trace_top_weights).max() if fam.n_modes else 0.0
        bot = np.abs(arr[:, 2] @ g.trace_bottom_weights).max() if fam.n_modes else 0.0
        v = float(max(top, bot))
        needed = fam.mode == STRATONOVICH or nm == "temp"
        checks.append(
            AssumptionCheck(
                f"boundary_trace_{nm}3", v, 1e-8 if needed else None,
                (v <= 1e-8) if needed else True, "structure",
            )
        )

    # discrete divergence of temperature modes
    if fam.divergence_free:
        div = (
            dx(g, fam.temp_modes[:, 0])
            + dy(g, fam.temp_modes[:, 1])
            + dz_apply(g.d1_free_matrix, fam.temp_modes[:, 2])
        )
        v = float(np.abs(div).max())
        checks.append(AssumptionCheck("divergence_temp_modes", v, 1e-8, v <= 1e-8, "structure"))

    # cross-term boundary trace (report only; vanishes identically for the
    # default family since vel[2] is zero on both faces)
    cross_top = np.einsum("njxy,nxy->jxy", _face_vals(fam.vel_modes[:, :2], g, "top"),
                          _face_vals(fam.vel_modes[:, 2:3], g, "top")[:, 0])
    v = float(np.abs(cross_top).max()) if fam.n_modes else 0.0
    checks.append(AssumptionCheck("cross_term_top_trace", v, None, True, "report"))

    return AssumptionReport(checks)


def _face_vals(modes: np.ndarray, g: GridSpec, face: str) -> np.ndarray:
    w = g.trace_top_weights if face == "top" else g.trace_bottom_weights
    return modes @ w


# ---------------------------------------------------------------------------
# turbulent pressure


def transport_term(grid: GridSpec, coeff: np.ndarray, f: Field) -> np.ndarray:
    """(coeff . grad) applied to each component of f; coeff is a (3,...) vector field.

    Uses the field's own bc ghosts for the vertical derivative.
    """
    d3 = dz_apply(grid.d1_matrix(f.bc), f.values)
    return coeff[0] * dx(grid, f.values) + coeff[1] * dy(grid, f.values) + coeff[2] * d3


def _qh_of_mean(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    """Curl-free part of the vertical mean of a (2, nx, ny, nz) array -> (2, nx, ny)."""
    from .operators import BarotropicField, curl_free_part

    return curl_free_part(BarotropicField(grid, values.mean(axis=-1))).values


def turbulent_pressure(
    fam: NoiseFamily,
    v: Field,
    g_modes: np.ndarray | None = None,
) -> Field:
    """Pressure correction induced by projecting the transport noise.

    For each mode, the curl-free part of the vertical mean of the transported
    velocity (plus the optional per-mode forcing g_modes) is contracted with
    the 2x2 coupling matrices.  Returns a z-constant 2-vector field; zero when
    no coupling matrices are present.
    """
    g = fam.grid
    if fam.pressure_coupling is None:
        return Field(g, np.zeros((2, g.nx, g.ny, g.nz)), bc=None)
    out = np.zeros((2, g.nx, g.ny))
    for n in range(fam.n_modes):
        tn = transport_term(g, fam.vel_modes[n], v)
        if g_modes is not None:
            tn = tn + g_modes[n]
        qn = _qh_of_mean(g, tn)  # (2, nx, ny)
        out += np.einsum("lmxy,mxy->lxy", fam.pressure_coupling[n], qn)
    return Field(g, np.repeat(out[..., None], g.nz, axis=-1), bc=None)


# ---------------------------------------------------------------------------
# Stratonovich-to-Ito correction operators


@dataclass
class CorrectionOperators:
    """Precomputed coefficient fields for the Ito reformulation of Stratonovich noise.

    a_vel / a_temp : (nx,ny,nz,3,3) symmetric second-order coefficient matrices
                     (identity plus half the one-point covariance)
    drift_vel      : (3,nx,ny,nz,?) first-order coefficients b^j = 1/2 sum_n (d_i m^j_n) m^i_n
    drift_temp     : first-order coefficients for the temperature operator
    grad_vel_modes : (N,3,2,nx,ny,nz) horizontal-component gradients d_j m^i_n used
                     by the projected first-order pressure correction
    """

    grid: GridSpec
    a_vel: np.ndarray
    a_temp: np.ndarray
    drift_vel: np.ndarray
    drift_temp: np.ndarray
    grad_vel_modes: np.ndarray

    def excess_vel(self) -> np.ndarray:
        """a_vel minus identity (the part beyond the plain Laplacian)."""
        return self.a_vel - np.eye(3)

    def excess_temp(self) -> np.ndarray:
        return self.a_temp - np.eye(3)


def _mode_gradients(grid: GridSpec, modes: np.ndarray) -> np.ndarray:
    """d_j m^i_n for all modes: shape (N, 3 comps i, 3 derivs j, nx, ny, nz)."""
    out = np.empty(modes.shape[:2] + (3,) + modes.shape[2:])
    out[:, :, 0] = dx(grid, modes)
    out[:, :, 1] = dy(grid, modes)
    out[:, :, 2] = dz_apply(grid.d1_free_matrix, modes)
    return out


def stratonovich_corrections(fam: NoiseFamily) -> CorrectionOperators:
    """Assemble the second- and first-order correction coefficient fields."""
    if fam.mode != STRATONOVICH:
        raise ModeMismatch("correction operators are defined for Stratonovich families")
    g = fam.grid
    a_vel = 0.5 * fam.covariance_matrix("vel") + np.eye(3)
    a_temp = 0.5 * fam.covariance_matrix("temp") + np.eye(3)

    gv = _mode_gradients(g, fam.vel_modes)
    gt = _mode_gradients(g, fam.temp_modes)
    # b^j = 1/2 sum_n sum_i (d_i m^j_n) m^i_n      (first-order drift coefficient)
    drift_vel = 0.5 * np.einsum("njixyz,nixyz->jxyz", gv, fam.vel_modes)
    # temperature operator keeps divergence form; its extra first-order piece is
    # -1/2 sum_n (div m_n) m_n
    div_t = np.einsum("niixyz->nxyz", gt)
    drift_temp = -0.5 * np.einsum("nxyz,nixyz->ixyz", div_t, fam.temp_modes)
    return CorrectionOperators(
        grid=g,
        a_vel=a_vel,
        a_temp=a_temp,
        drift_vel=drift_vel,
        drift_temp=drift_temp,
        grad_vel_modes=gv[:, :2, :2],
    )


def _second_derivatives(grid: GridSpec, values: np.ndarray, bc) -> dict:
    """All distinct second derivatives of each component of `values`."""
    d3 = dz_apply(grid.d1_matrix(bc), values)
    return {
        (0, 0): dx(grid, dx(grid, values)),
        (0, 1): dy(grid, dx(grid, values)),
        (1, 1): dy(grid, dy(grid, values)),
        (0, 2): dx(grid, d3),
        (1, 2): dy(grid, d3),
        (2, 2): dz_apply(grid.d2_matrix(bc), values),
    }


def apply_correction_excess(
    ops: CorrectionOperators, f: Field, which: str
) -> np.ndarray:
    """(a - I) : D^2 f plus the first-order drift part, component-wise.

    This is the full correction operator minus the plain Laplacian, assembled
    with the module's derivative stencils; vanishes identically when the modes
    are zero.
    """
    g = ops.grid
    exc = ops.excess_vel() if which == "vel" else ops.excess_temp()
    bcoef = ops.drift_vel if which == "vel" else None
    d2 = _second_derivatives(g, f.values, f.bc)
    out = np.zeros_like(f.values)
    for (i, j), dij in d2.items():
        w = exc[..., i, j] * (1.0 if i == j else 2.0)
        out += w * dij
    d3 = dz_apply(g.d1_matrix(f.bc), f.values)
    grads = (dx(g, f.values), dy(g, f.values), d3)
    if which == "vel":
        for j in range(3):
            out += bcoef[j] * grads[j]
    else:
        # divergence form: div((a-I) grad f) = (a-I):D^2 f + (div(a-I)) . grad f
        gx = dx(g, exc[..., 0, :].transpose(3, 0, 1, 2))
        gy = dy(g, exc[..., 1, :].transpose(3, 0, 1, 2))
        gz = dz_apply(g.d1_free_matrix, exc[..., 2, :].transpose(3, 0, 1, 2))
        diva = gx + gy + gz  # (3, nx, ny, nz): component j = sum_i d_i (a-I)^{ij}
        for j in range(3):
            out += diva[j] * grads[j]
        for j in range(3):
            out += ops.drift_temp[j] * grads[j]
    return out


def apply_velocity_correction(ops: CorrectionOperators, v: Field) -> np.ndarray:
    """Full second-order velocity correction: Laplacian plus excess (pre-projection)."""
    g = ops.grid
    lap = (
        np.real(np.fft.ifft2(-g.k2h * np.fft.fft2(v.values, axes=(1, 2)), axes=(1, 2)))
        + dz_apply(g.d2_matrix(v.bc), v.values)
    )
    return lap + apply_correction_excess(ops, v, "vel")


def apply_temperature_correction(ops: CorrectionOperators, theta: Field) -> np.ndarray:
    g = ops.grid
    lap = (
        np.real(np.fft.ifft2(-g.k2h * np.fft.fft2(theta.values, axes=(1, 2)), axes=(1, 2)))
        + dz_apply(g.d2_matrix(theta.bc), theta.values)
    )
    return lap + apply_correction_excess(ops, theta, "temp")


def projected_gradient_correction(ops: CorrectionOperators, fam: NoiseFamily, v: Field) -> np.ndarray:
    """First-order correction from differentiating the projected transport term.

    Component j (horizontal) collects d_j m^i_n against the curl-free part of
    the mean transported field; z-independent by construction.
    """
    g = ops.grid
    out = np.zeros((2, g.nx, g.ny))
    for n in range(fam.n_modes):
        tn = transport_term(g, fam.vel_modes[n], v)
        qn = _qh_of_mean(g, tn)  # (2, nx, ny)
        # grad_vel_modes[n, i, j] = d_j of horizontal component i (z-independent)
        gnm = ops.grad_vel_modes[n][..., 0]  # (i, j, nx, ny) at any z level
        out += np.einsum("ijxy,ixy->jxy", gnm, qn)
    return np.repeat(out[..., None], g.nz, axis=-1)


# ---------------------------------------------------------------------------
# noise family file format: header + raw little-endian payloads, bit-exact

import struct as _struct

_NF_HEADER = _struct.Struct("<5siiiidddiiiddd")
_NF_MAGIC = b"HLDN1"


def write_noise_family(path, fam: NoiseFamily) -> None:
    g = fam.grid
    has_pc = int(fam.pressure_coupling is not None)
    with open(path, "wb") as fh:
        fh.write(
            _NF_HEADER.pack(
                _NF_MAGIC, fam.n_modes, g.nx, g.ny, g.nz, g.h, g.lx, g.ly,
                0 if fam.mode == ITO else 1, int(fam.divergence_free), has_pc,
                fam.bound_m, fam.bound_delta, fam.nu,
            )
        )
        fh.write(np.ascontiguousarray(fam.vel_modes, "<f8").tobytes())
        fh.write(np.ascontiguousarray(fam.temp_modes, "<f8").tobytes())
        if has_pc:
            fh.write(np.ascontiguousarray(fam.pressure_coupling, "<f8").tobytes())


def read_noise_family(path) -> NoiseFamily:
    with open(path, "rb") as fh:
        head = fh.read(_NF_HEADER.size)
        magic, n, nx, ny, nz, h, lx, ly, mode_i, divfree, has_pc, m, d, nu = _NF_HEADER.unpack(head)
        if magic != _NF_MAGIC:
            raise InvalidField(f"{path}: bad noise-family magic {magic!r}")
        g = GridSpec(nx, ny, nz, h, lx, ly)
        cnt = n * 3 * nx * ny * nz
        vel = np.frombuffer(fh.read(8 * cnt), "<f8", cnt).reshape(n, 3, nx, ny, nz).copy()
        temp = np.frombuffer(fh.read(8 * cnt), "<f8", cnt).reshape(n, 3, nx, ny, nz).copy()
        pc = None
        if has_pc:
            cpc = n * 4 * nx * ny
            pc = np.frombuffer(fh.read(8 * cpc), "<f8", cpc).reshape(n, 2, 2, nx, ny).copy()
    return NoiseFamily(
        grid=g, vel_modes=vel, temp_modes=temp, pressure_coupling=pc,
        mode=ITO if mode_i == 0 else STRATONOVICH,
        bound_m=m, bound_delta=d, nu=nu, divergence_free=bool(divfree),
    )
