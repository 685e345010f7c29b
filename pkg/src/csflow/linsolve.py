"""Linearized flow operator L(u)v = dv/dk - sigma * d^2v/dphi^2 and its inverse.

The inverse marches implicitly in k: each step solves a tridiagonal system
with homogeneous Dirichlet ends.  Implicit Euler is chosen over second-order
schemes because it satisfies a discrete maximum principle exactly, which the
certificate below relies on; its first-order k-accuracy is absorbed by the
outer iteration that uses it as an approximate inverse.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .graded import FlowGrid, GridField, d2_phi, dk_backward, project_f0, seminorm


class PositivityError(RuntimeError):
    """Conductivity dropped below the configured floor; parabolicity lost."""


@dataclass(frozen=True)
class ConductivityField:
    """Conductivity values on the grid, guaranteed >= floor everywhere."""

    grid: FlowGrid
    values: np.ndarray
    floor: float

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError("conductivity shape does not match grid")
        vmin = float(np.min(self.values))
        if vmin < self.floor:
            raise PositivityError(
                f"sigma minimum {vmin:.6g} below floor {self.floor:.6g}"
            )


def build_conductivity(table, u_tilde, floor):
    """Evaluate the sigma interpolant at the field curvature d^2(u~)/dphi^2."""
    curvature = d2_phi(u_tilde.values, u_tilde.grid)
    values = table.sigma_at(curvature, locate=True)
    return ConductivityField(grid=u_tilde.grid, values=values, floor=floor)


def apply_linearized(sigma_field, v):
    """Forward operator: backward-in-k, centered-in-phi differences.

    Defined on interior phi rows for k columns j >= 1 (including the final
    row); other entries of the returned field are zero.
    """
    grid = v.grid
    vals = v.values
    out = np.zeros_like(vals)
    dk = dk_backward(vals, grid)
    d2 = np.zeros_like(vals)
    d2[1:-1, :] = (vals[2:, :] - 2.0 * vals[1:-1, :] + vals[:-2, :]) / grid.dphi**2
    out[1:-1, 1:] = dk[1:-1, 1:] - sigma_field.values[1:-1, 1:] * d2[1:-1, 1:]
    return GridField(grid=grid, values=out, role="residual")


def solve_linearized(sigma_field, g):
    """Unique inverse with v(phi, a) = 0 and v = 0 on the phi boundary.

    Marches k-steps of the implicit system
    (1 - dk * sigma * d^2phi) v_new = v_old + dk * g; each step is one
    tridiagonal solve, unconditionally well-posed for sigma >= 0.
    """
    grid = sigma_field.grid
    gv = g.values if isinstance(g, GridField) else np.asarray(g, dtype=float)
    if gv.shape != grid.shape:
        raise ValueError("source shape does not match grid")
    dk = grid.dk
    lam = dk / grid.dphi**2
    n_int = grid.n_phi - 2

    v = np.zeros(grid.shape)
    band = np.zeros((3, n_int))
    for j in range(1, grid.n_k):
        sig = sigma_field.values[1:-1, j]
        band[0, 1:] = -lam * sig[:-1]  # superdiagonal
        band[1, :] = 1.0 + 2.0 * lam * sig
        band[2, :-1] = -lam * sig[1:]  # subdiagonal
        rhs = v[1:-1, j - 1] + dk * gv[1:-1, j]
        v[1:-1, j] = solve_banded((1, 1), band, rhs)
    v = project_f0(v)
    return GridField(grid=grid, values=v, role="solution")


@dataclass(frozen=True)
class MaxPrincipleReport:
    ratio: float
    bound: float

    @property
    def passed(self):
        return self.ratio <= self.bound


def max_principle_certificate(sigma_field, g, v, slack=0.05):
    """Certify ||v||_0 <= ((b - a) + slack) * ||g||_0.

    The implicit march satisfies the discrete maximum principle exactly, so a
    failure here indicates a discretization bug rather than a hard instance.
    """
    grid = sigma_field.grid
    gv = g.values if isinstance(g, GridField) else np.asarray(g, dtype=float)
    g_norm = float(np.max(np.abs(gv)))
    v_norm = float(np.max(np.abs(v.values)))
    length = grid.k_max - grid.k_min
    if g_norm == 0.0:
        ratio = 0.0 if v_norm == 0.0 else np.inf
    else:
        ratio = v_norm / g_norm
    return MaxPrincipleReport(ratio=ratio, bound=length * (1.0 + slack))


@dataclass(frozen=True)
class InverseGradedReport:
    """Fit of ||E(g)||_n <= C (||g||_n + ||g||_0 ||sigma||_{n+1}) on a sample split."""

    n: int
    constant: float
    slack: float
    train_count: int
    holdout_count: int
    violations: int

    @property
    def passed(self):
        return self.violations == 0


def inverse_graded_check(cases, n, slack=0.1):
    """Fit the graded-inverse constant over (sigma_field, g) cases, validate held out.

    ``cases`` is a sequence of (ConductivityField, GridField) pairs.
    """
    ratios = []
    for sigma_field, g in cases:
        v = solve_linearized(sigma_field, g)
        sig_field = GridField(grid=sigma_field.grid, values=sigma_field.values)
        denom = seminorm(g, n) + seminorm(g, 0) * seminorm(sig_field, n + 1)
        ratios.append(seminorm(v, n) / denom)
    ratios = np.asarray(ratios)
    train = ratios[::2]
    holdout = ratios[1::2]
    constant = float(np.max(train)) if train.size else 0.0
    violations = int(np.sum(holdout > constant * (1.0 + slack)))
    return InverseGradedReport(
        n=n,
        constant=constant,
        slack=slack,
        train_count=int(train.size),
        holdout_count=int(holdout.size),
        violations=violations,
    )
