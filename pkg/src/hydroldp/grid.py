"""Discrete fields on the slab: Fourier collocation in (x, y), cell-centered
finite differences in z.

The horizontal directions are periodic and handled spectrally (exact for
resolved harmonics, 2/3-rule dealiasing for products).  The vertical direction
carries the physical boundary conditions (Neumann for velocity, Robin at the
top for temperature), discretized with one ghost cell per face so a single
stencil family serves both condition types.  All vertical linear operators are
materialized as small dense (nz x nz) matrices: nz stays modest at desk scale
and exact matrix transposes are needed by the discrete adjoint.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np

from .errors import InvalidField, MissingBoundaryCondition

__all__ = [
    "GridSpec",
    "BoundaryCondition",
    "NEUMANN_BOTH",
    "robin_top",
    "Field",
    "SpectrumView",
    "forward_transform",
    "inverse_transform",
    "horizontal_gradient",
    "vertical_derivative",
    "enforce_bc",
    "ghost_planes",
    "write_field",
    "read_field",
]


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid on T^2 x (-h, 0).

    nx, ny : horizontal mode counts (even, positive)
    nz     : vertical cell count (>= 3, so quadratic boundary extrapolation works)
    h      : domain depth
    lx, ly : horizontal periods (default 2*pi, the unscaled torus)
    """

    nx: int
    ny: int
    nz: int
    h: float = 1.0
    lx: float = 2.0 * np.pi
    ly: float = 2.0 * np.pi

    def __post_init__(self):
        if self.nx <= 0 or self.nx % 2 or self.ny <= 0 or self.ny % 2:
            raise ValueError("nx, ny must be even positive integers")
        if self.nz < 3:
            raise ValueError("nz must be >= 3")
        if self.h <= 0 or self.lx <= 0 or self.ly <= 0:
            raise ValueError("h, lx, ly must be positive")

    # -- coordinates

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * (self.lx / self.nx)

    @cached_property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * (self.ly / self.ny)

    @cached_property
    def z(self) -> np.ndarray:
        # cell centers; no node sits on a boundary face
        return -self.h + (np.arange(self.nz) + 0.5) * self.dz

    @property
    def dz(self) -> float:
        return self.h / self.nz

    @property
    def cell_volume(self) -> float:
        return (self.lx / self.nx) * (self.ly / self.ny) * self.dz

    @property
    def cell_area(self) -> float:
        return (self.lx / self.nx) * (self.ly / self.ny)

    def meshgrid(self):
        """(X, Y, Z) broadcastable to field shape (nx, ny, nz)."""
        return np.meshgrid(self.x, self.y, self.z, indexing="ij")

    # -- wavenumbers (Nyquist rows zeroed so d/dx is exactly skew-symmetric)

    @cached_property
    def kx(self) -> np.ndarray:
        k = np.fft.fftfreq(self.nx, d=1.0 / self.nx) * (2.0 * np.pi / self.lx)
        k[self.nx // 2] = 0.0
        return k.reshape(self.nx, 1, 1)

    @cached_property
    def ky(self) -> np.ndarray:
        k = np.fft.fftfreq(self.ny, d=1.0 / self.ny) * (2.0 * np.pi / self.ly)
        k[self.ny // 2] = 0.0
        return k.reshape(1, self.ny, 1)

    @cached_property
    def k2h(self) -> np.ndarray:
        return self.kx**2 + self.ky**2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        ix = np.abs(np.fft.fftfreq(self.nx, d=1.0 / self.nx))
        iy = np.abs(np.fft.fftfreq(self.ny, d=1.0 / self.ny))
        mx = (ix <= self.nx / 3.0).reshape(self.nx, 1, 1)
        my = (iy <= self.ny / 3.0).reshape(1, self.ny, 1)
        return mx & my

    # -- vertical operator matrices (dense, bc baked into the boundary rows)

    def d1_matrix(self, bc: "BoundaryCondition | None") -> np.ndarray:
        """Second-order first derivative in z; ghost cells eliminated via bc."""
        if bc is None:
            return self.d1_free_matrix
        n, dz = self.nz, self.dz
        m = np.zeros((n, n))
        for k in range(1, n - 1):
            m[k, k - 1] = -1.0 / (2 * dz)
            m[k, k + 1] = 1.0 / (2 * dz)
        # bottom face is Neumann for every supported tag: ghost = first cell
        m[0, 0] = -1.0 / (2 * dz)
        m[0, 1] = 1.0 / (2 * dz)
        c = _top_ghost_coeff(bc, dz)
        m[n - 1, n - 2] = -1.0 / (2 * dz)
        m[n - 1, n - 1] = c / (2 * dz)
        return m

    def d2_matrix(self, bc: "BoundaryCondition") -> np.ndarray:
        """Second-order second derivative in z with bc ghosts (symmetric)."""
        n, dz = self.nz, self.dz
        m = np.zeros((n, n))
        for k in range(1, n - 1):
            m[k, k - 1] = 1.0
            m[k, k] = -2.0
            m[k, k + 1] = 1.0
        m[0, 0] = -1.0
        m[0, 1] = 1.0
        c = _top_ghost_coeff(bc, dz)
        m[n - 1, n - 2] = 1.0
        m[n - 1, n - 1] = c - 2.0
        return m / dz**2

    @cached_property
    def d1_free_matrix(self) -> np.ndarray:
        """First derivative with no bc assumption: centered interior, one-sided ends."""
        n, dz = self.nz, self.dz
        m = np.zeros((n, n))
        for k in range(1, n - 1):
            m[k, k - 1] = -1.0 / (2 * dz)
            m[k, k + 1] = 1.0 / (2 * dz)
        m[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * dz)
        m[n - 1, n - 3:] = np.array([1.0, -4.0, 3.0]) / (2 * dz)
        return m

    @cached_property
    def cumint_matrix(self) -> np.ndarray:
        """Cumulative integral from the bottom face to each cell center.

        Midpoint rule per full cell plus half the current cell, so the top-face
        integral dz * sum(...) is exact for column means (w(.,0)=0 holds exactly
        for mean-free columns).
        """
        n, dz = self.nz, self.dz
        m = np.tril(np.full((n, n), dz), -1)
        np.fill_diagonal(m, dz / 2.0)
        return m

    @cached_property
    def trace_top_weights(self) -> np.ndarray:
        """Quadratic extrapolation from the top three cell centers to z = 0."""
        w = np.zeros(self.nz)
        w[-1], w[-2], w[-3] = 15.0 / 8.0, -10.0 / 8.0, 3.0 / 8.0
        return w

    @cached_property
    def trace_bottom_weights(self) -> np.ndarray:
        w = np.zeros(self.nz)
        w[0], w[1], w[2] = 15.0 / 8.0, -10.0 / 8.0, 3.0 / 8.0
        return w


# ---------------------------------------------------------------------------
# boundary conditions


@dataclass(frozen=True)
class BoundaryCondition:
    """Vertical boundary tag.  kind 'neumann': zero flux at both faces.
    kind 'robin': zero flux at the bottom, d3 f + alpha f = 0 at the top."""

    kind: str
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("neumann", "robin"):
            raise ValueError(f"unknown bc kind {self.kind!r}")


NEUMANN_BOTH = BoundaryCondition("neumann")


def robin_top(alpha: float) -> BoundaryCondition:
    return BoundaryCondition("robin", float(alpha))


def _top_ghost_coeff(bc: BoundaryCondition, dz: float) -> float:
    """Ghost value above the top face equals coeff * top cell value."""
    if bc.kind == "neumann":
        return 1.0
    a = bc.alpha * dz / 2.0
    if abs(1.0 + a) < 1e-14:
        raise ValueError("Robin coefficient alpha*dz/2 == -1 makes the ghost singular")
    return (1.0 - a) / (1.0 + a)


# ---------------------------------------------------------------------------
# fields


@dataclass
class Field:
    """A scalar or vector function sampled on the grid.

    values has shape (components, nx, ny, nz); components is 1, 2 or 3
    (3 only for noise coefficient fields).  Fields are treated as immutable
    values: operations allocate fresh arrays, never mutate in place.
    """

    grid: GridSpec
    values: np.ndarray
    bc: BoundaryCondition | None = None
    ghosts: tuple[np.ndarray, np.ndarray] | None = dc_field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 3:
            v = v[None]
        g = self.grid
        if v.ndim != 4 or v.shape[1:] != (g.nx, g.ny, g.nz) or v.shape[0] not in (1, 2, 3):
            raise InvalidField(f"bad field shape {v.shape} for grid {(g.nx, g.ny, g.nz)}")
        self.values = v

    @property
    def components(self) -> int:
        return self.values.shape[0]

    def require_finite(self, what: str = "field") -> "Field":
        if not np.all(np.isfinite(self.values)):
            raise InvalidField(f"{what} contains non-finite values")
        return self

    def with_values(self, values: np.ndarray, bc="keep") -> "Field":
        return Field(self.grid, values, self.bc if bc == "keep" else bc)


@dataclass
class SpectrumView:
    """Horizontal Fourier coefficients of a Field, per vertical level."""

    grid: GridSpec
    coeffs: np.ndarray  # complex, (components, nx, ny, nz)

    @property
    def kx(self) -> np.ndarray:
        return self.grid.kx

    @property
    def ky(self) -> np.ndarray:
        return self.grid.ky

    def hermitian_defect(self) -> float:
        """Max deviation from conj-symmetry c(-k) = conj(c(k))."""
        c = self.coeffs
        flipped = np.conj(np.roll(np.flip(c, axis=(1, 2)), shift=(1, 1), axis=(1, 2)))
        return float(np.max(np.abs(c - flipped)))


def forward_transform(f: Field) -> SpectrumView:
    """Horizontal DFT per vertical level."""
    f.require_finite("forward_transform input")
    return SpectrumView(f.grid, np.fft.fft2(f.values, axes=(1, 2)))


def inverse_transform(spec: SpectrumView) -> Field:
    vals = np.real(np.fft.ifft2(spec.coeffs, axes=(1, 2)))
    return Field(spec.grid, vals, bc=None)


# -- array-level horizontal spectral helpers (hot path; fields wrap these)


def dx(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    return np.real(np.fft.ifft2(1j * grid.kx * np.fft.fft2(values, axes=(-3, -2)), axes=(-3, -2)))


def dy(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    return np.real(np.fft.ifft2(1j * grid.ky * np.fft.fft2(values, axes=(-3, -2)), axes=(-3, -2)))


def dx_t(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    """Euclidean transpose of dx (= -dx; spelled out for adjoints)."""
    return -dx(grid, values)


def dy_t(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    return -dy(grid, values)


def laplacian_h(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    return np.real(np.fft.ifft2(-grid.k2h * np.fft.fft2(values, axes=(-3, -2)), axes=(-3, -2)))


def dealias(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    return np.real(np.fft.ifft2(grid.dealias_mask * np.fft.fft2(values, axes=(-3, -2)), axes=(-3, -2)))


def dz_apply(matrix: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Apply a dense vertical operator along the last axis."""
    return values @ matrix.T


def hmul(grid: GridSpec, a: np.ndarray, b: np.ndarray, *, use_dealias: bool = True) -> np.ndarray:
    """Pointwise product with optional 2/3-rule truncation of the result."""
    p = a * b
    return dealias(grid, p) if use_dealias else p


# -- field-level operations


def horizontal_gradient(f: Field) -> Field:
    """Spectral (d1, d2) of a scalar field."""
    if f.components != 1:
        raise InvalidField("horizontal_gradient expects a scalar field")
    f.require_finite()
    g = f.grid
    out = np.concatenate([dx(g, f.values), dy(g, f.values)], axis=0)
    return Field(g, out, bc=None)


def vertical_derivative(f: Field) -> Field:
    """Second-order centered d3 using the field's bc ghosts; output carries bc None."""
    if f.bc is None:
        raise MissingBoundaryCondition("vertical_derivative needs a bc tag")
    m = f.grid.d1_matrix(f.bc)
    return Field(f.grid, dz_apply(m, f.values), bc=None)


def ghost_planes(f: Field) -> tuple[np.ndarray, np.ndarray]:
    """(bottom, top) ghost-cell values implied by the field's bc."""
    if f.bc is None:
        raise MissingBoundaryCondition("ghost_planes needs a bc tag")
    bottom = f.values[..., 0].copy()
    top = _top_ghost_coeff(f.bc, f.grid.dz) * f.values[..., -1]
    return bottom, top


def enforce_bc(f: Field) -> Field:
    """Populate ghost layers so the discrete bc residual vanishes; interior untouched."""
    bottom, top = ghost_planes(f)
    return Field(f.grid, f.values, f.bc, ghosts=(bottom, top))


def trace_top(f: Field) -> np.ndarray:
    """Boundary value at z = 0 by quadratic extrapolation, shape (c, nx, ny)."""
    return f.values @ f.grid.trace_top_weights


def trace_bottom(f: Field) -> np.ndarray:
    return f.values @ f.grid.trace_bottom_weights


# ---------------------------------------------------------------------------
# snapshot file format
#
# magic "HLDP1" | nx ny nz int32 | h lx ly float64 | components int32 |
# bc tag int32 (0 none, 1 neumann, 2 robin) | alpha float64 |
# little-endian float64 payload, C order, (components, x, y, z)

_HEADER = struct.Struct("<5siiidddiid")
_MAGIC = b"HLDP1"


def write_field(path, f: Field) -> None:
    tag, alpha = 0, 0.0
    if f.bc is not None:
        tag = 1 if f.bc.kind == "neumann" else 2
        alpha = f.bc.alpha
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, g.nx, g.ny, g.nz, g.h, g.lx, g.ly,
                              f.components, tag, alpha))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path) -> Field:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise InvalidField(f"{path}: truncated header")
        magic, nx, ny, nz, h, lx, ly, comps, tag, alpha = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise InvalidField(f"{path}: bad magic {magic!r}")
        grid = GridSpec(nx, ny, nz, h, lx, ly)
        n = comps * nx * ny * nz
        data = np.frombuffer(fh.read(8 * n), dtype="<f8", count=n)
    bc = None if tag == 0 else (NEUMANN_BOTH if tag == 1 else robin_top(alpha))
    return Field(grid, data.reshape(comps, nx, ny, nz).copy(), bc)


def scalar(grid: GridSpec, values: np.ndarray, bc=None) -> Field:
    """Convenience constructor for a 1-component field from an (nx,ny,nz) array."""
    return Field(grid, np.asarray(values, dtype=float)[None], bc)
