"""Structural operators of the hydrostatic setting.

Vertical average / fluctuation split, the projection of horizontal vector
fields onto those whose vertical mean is divergence-free, the diagnostic
vertical velocity, the buoyancy pressure-gradient term, and the weak Robin
Laplacian quadratic form.  Everything here is a pure function of immutable
fields; the horizontal solves are exact spectral multiplier algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidField
from .grid import (
    Field,
    GridSpec,
    dx,
    dy,
    dz_apply,
    trace_top,
    vertical_derivative,
)

__all__ = [
    "BarotropicField",
    "BuoyancyProfile",
    "vertical_average",
    "fluctuation",
    "curl_free_part",
    "divfree_part",
    "hydrostatic_project",
    "diagnostic_vertical_velocity",
    "vertical_velocity_top",
    "baroclinic_pressure_gradient",
    "robin_form",
]


@dataclass
class BarotropicField:
    """Vertical mean of a field: values shape (components, nx, ny), no z extent."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[None]
        g = self.grid
        if v.ndim != 3 or v.shape[1:] != (g.nx, g.ny):
            raise InvalidField(f"bad barotropic shape {v.shape}")
        self.values = v


@dataclass
class BuoyancyProfile:
    """Coefficient multiplying temperature in the hydrostatic pressure relation.

    Carries the declared per-column L2(-h,0) bound so runs can be checked
    against their stated coefficient budget.
    """

    coeff: Field
    bound: float

    def __post_init__(self):
        if self.coeff.components != 1:
            raise InvalidField("buoyancy coefficient must be scalar")
        g = self.coeff.grid
        col = np.sqrt(np.sum(self.coeff.values[0] ** 2, axis=-1) * g.dz)
        worst = float(col.max())
        if worst > self.bound * (1 + 1e-12):
            raise InvalidField(
                f"buoyancy column norm {worst:.3g} exceeds declared bound {self.bound:.3g}"
            )

    @classmethod
    def constant(cls, grid: GridSpec, value: float = 1.0, slack: float = 1.05):
        vals = np.full((1, grid.nx, grid.ny, grid.nz), float(value))
        bound = abs(value) * np.sqrt(grid.h) * slack + 1e-300
        return cls(Field(grid, vals), bound)


# ---------------------------------------------------------------------------
# bar / tilde split


def vertical_average(g: Field) -> BarotropicField:
    """Columnwise mean (midpoint quadrature, exact as a projector)."""
    return BarotropicField(g.grid, g.values.mean(axis=-1))


def fluctuation(g: Field) -> Field:
    """g minus its vertical average, lifted back to the slab."""
    return Field(g.grid, g.values - g.values.mean(axis=-1, keepdims=True), bc=None)


def lift(b: BarotropicField) -> Field:
    """Extend a barotropic field constant-in-z."""
    g = b.grid
    return Field(g, np.repeat(b.values[..., None], g.nz, axis=-1), bc=None)


# ---------------------------------------------------------------------------
# horizontal Helmholtz pieces

def _hfft(vals):
    return np.fft.fft2(vals, axes=(-2, -1))


def _hifft(coef):
    return np.real(np.fft.ifft2(coef, axes=(-2, -1)))


def curl_free_part(f: BarotropicField) -> BarotropicField:
    """Gradient (curl-free) part of a 2-vector field on the torus.

    Solves the Poisson problem for the potential spectrally with zero mean and
    returns its gradient; the zero mode and divergence-free content map to 0.
    """
    if f.values.shape[0] != 2:
        raise InvalidField("curl_free_part expects a 2-vector field")
    g = f.grid
    kx = g.kx[..., 0]  # (nx, 1)
    ky = g.ky[..., 0]  # (1, ny)
    fh = _hfft(f.values)
    k2 = kx**2 + ky**2
    with np.errstate(invalid="ignore", divide="ignore"):
        div_over_k2 = (kx * fh[0] + ky * fh[1]) / k2
    div_over_k2 = np.where(k2 > 0, div_over_k2, 0.0)
    out = np.stack([kx * div_over_k2, ky * div_over_k2])
    return BarotropicField(g, _hifft(out))


def divfree_part(f: BarotropicField) -> BarotropicField:
    """Complement of curl_free_part (2-D Leray projection)."""
    q = curl_free_part(f)
    return BarotropicField(f.grid, f.values - q.values)


def hydrostatic_project(g: Field) -> Field:
    """Remove the curl-free part of the vertical mean; fluctuations untouched.

    The result has discretely divergence-free vertical mean, and the operator
    is an exact orthogonal projection in the flat L2 inner product.
    """
    if g.components != 2:
        raise InvalidField("hydrostatic_project expects a 2-vector field")
    q = curl_free_part(vertical_average(g))
    return Field(g.grid, g.values - q.values[..., None], bc=g.bc)


def project_values(grid: GridSpec, vals: np.ndarray) -> np.ndarray:
    """Array-level hydrostatic projection of a (2, nx, ny, nz) block (hot path)."""
    q = curl_free_part(BarotropicField(grid, vals.mean(axis=-1))).values
    return vals - q[..., None]


def barotropic_divergence(v: Field) -> np.ndarray:
    """div_H of the vertical mean; the projection constraint residual."""
    vb = vertical_average(v).values
    g = v.grid
    kx, ky = g.kx[..., 0], g.ky[..., 0]
    fh = _hfft(vb)
    return _hifft(1j * (kx * fh[0] + ky * fh[1]))


# ---------------------------------------------------------------------------
# diagnostic vertical velocity and pressure term


def horizontal_divergence(v: Field) -> np.ndarray:
    """Pointwise div_H of a 2-vector field, shape (nx, ny, nz)."""
    g = v.grid
    return dx(g, v.values[0]) + dy(g, v.values[1])


def diagnostic_vertical_velocity(v: Field) -> Field:
    """w(x_H, z) = -(cumulative integral from -h to z) of div_H v.

    Cumulative midpoint quadrature matched to the cell-centered grid, so the
    top-face value vanishes exactly for columns with mean-free divergence.
    """
    g = v.grid
    div = horizontal_divergence(v)
    w = -dz_apply(g.cumint_matrix, div)
    return Field(g, w[None], bc=None)


def vertical_velocity_top(v: Field) -> np.ndarray:
    """Top-face value of the diagnostic vertical velocity (exact quadrature)."""
    div = horizontal_divergence(v)
    return -div.sum(axis=-1) * v.grid.dz


def baroclinic_pressure_gradient(buoyancy: BuoyancyProfile, theta: Field) -> Field:
    """grad_H of the cumulative vertical integral of (coeff * theta)."""
    if theta.components != 1:
        raise InvalidField("pressure term expects scalar temperature")
    g = theta.grid
    integrand = buoyancy.coeff.values[0] * theta.values[0]
    press = dz_apply(g.cumint_matrix, integrand)
    return Field(g, np.stack([dx(g, press), dy(g, press)]), bc=None)


# ---------------------------------------------------------------------------
# weak Robin Laplacian quadratic form


def robin_form(theta: Field, psi: Field, alpha: float) -> float:
    """-(grad psi, grad theta) - alpha * surface integral of the top traces.

    The vertical gradient uses each argument's own bc ghosts when tagged, a
    bc-free stencil otherwise; the top trace is quadratic extrapolation.  The
    form is symmetric in (theta, psi) by construction.
    """
    if theta.components != 1 or psi.components != 1:
        raise InvalidField("robin_form expects scalar fields")
    g = theta.grid
    gt = _full_gradient(theta)
    gp = _full_gradient(psi)
    grads = float(np.sum(gt * gp)) * g.cell_volume
    surf = float(np.sum(trace_top(theta)[0] * trace_top(psi)[0])) * g.cell_area
    return -grads - alpha * surf


def _full_gradient(f: Field) -> np.ndarray:
    """(d1, d2, d3) of a scalar field as an (3, nx, ny, nz) array."""
    g = f.grid
    v = f.values[0]
    if f.bc is not None:
        d3 = vertical_derivative(f).values[0]
    else:
        d3 = dz_apply(g.d1_free_matrix, v)
    return np.stack([dx(g, v), dy(g, v), d3])
