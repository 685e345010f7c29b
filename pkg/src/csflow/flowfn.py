"""Tabulation of the scalar flow function, its first derivative, and its second.

Because the regulator derivative is constant in the scale, the right-hand side
of the flow depends on (phi, k) only through the scalar m2 = d^2u/dphi^2, so a
one-dimensional table with smooth interpolants is exact up to interpolation
error.  The derivative quantities sigma = G' and a2 = G'' are assembled from
the same exact discrete identities dG/dm2 = -G X G (X the weighted cutoff
diagonal) that the kernel recursion satisfies, so the centered-difference
cross-checks converge at clean second order in the table spacing.

The state kernel is rank 2 per mode (cos/sin split), which reduces every
integral to a handful of O(N^2) triangular solves per (mode, m2) pair.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .propagators import VolterraFactor, moeller_cos_sin


class TableRangeError(ValueError):
    """Query outside the tabulated m2 range (no extrapolation)."""

    def __init__(self, m2, m2_max, where=None):
        self.m2 = m2
        self.m2_max = m2_max
        self.where = where
        loc = f" at node {where}" if where is not None else ""
        super().__init__(
            f"m2 = {m2:.6g} outside tabulated range [-{m2_max:.6g}, {m2_max:.6g}]{loc}"
        )


def _mode_terms(bg, n, m2):
    """(diagonal sum, sigma term, a2 term) of one distinct mode, multiplicity folded in.

    With a = M cos(wt), b = M sin(wt), X = diag(chi * w_t) and G the perturbed
    retarded kernel, the transported kernel is K = c_n (a a' + b b') and

        flow integrand  = c_n X.(a^2 + b^2)
        sigma term      = c_n [ (Xa).G(Xa) + (Xb).G(Xb) ]
        a2 term         = c_n [ 2 (Xa).G(X G(Xa)) + (G(Xa)).X.(G(Xa)) + (b terms) ]
    """
    factor = VolterraFactor(bg, n, m2)
    a, b = moeller_cos_sin(bg, n, m2, factor=factor)
    x = bg.chi * bg.time_weights
    xa = x * a
    xb = x * b
    pq = factor.apply(np.column_stack([xa, xb]))
    p, q = pq[:, 0], pq[:, 1]
    gp = factor.apply(np.column_stack([x * p, x * q]))

    cn = bg.state.weights[n] * bg.modes.multiplicity[n]
    diag_sum = cn * float(np.dot(x, a * a + b * b))
    sigma_term = cn * (float(np.dot(xa, p)) + float(np.dot(xb, q)))
    a2_term = cn * (
        2.0 * (float(np.dot(xa, gp[:, 0])) + float(np.dot(xb, gp[:, 1])))
        + float(np.dot(p, x * p))
        + float(np.dot(q, x * q))
    )
    return diag_sum, sigma_term, a2_term


def _point_values(bg, m2):
    """(flow, sigma, a2) at a single m2, all modes summed."""
    s_cut = float(np.dot(bg.chi, bg.time_weights))  # integral of chi
    diag = sigma = a2 = 0.0
    for n in range(bg.n_modes + 1):
        d, s, a = _mode_terms(bg, n, m2)
        diag += d
        sigma += s
        a2 += a
    eps = bg.epsilon
    return (
        -0.5 * eps * diag / s_cut,
        eps * sigma / s_cut,
        -eps * a2 / s_cut,
    )


def flow_value(bg, m2, m2_max=None):
    """Scalar flow function at one mass-squared shift.

    Equals -(eps/2) * (weighted cutoff average of the mode-summed coincidence
    diagonal); at m2 = 0 it reduces to -(eps/2) * sum of the state weights.
    """
    _check_range(m2, m2_max)
    return _point_values(bg, m2)[0]


def sigma_value(bg, m2, m2_max=None):
    """First m2-derivative of the flow function (the parabolic conductivity)."""
    _check_range(m2, m2_max)
    return _point_values(bg, m2)[1]


def a2_value(bg, m2, m2_max=None):
    """Second m2-derivative of the flow function (second insertion coefficient)."""
    _check_range(m2, m2_max)
    return _point_values(bg, m2)[2]


def _check_range(m2, m2_max):
    if m2_max is not None and abs(m2) > m2_max:
        raise TableRangeError(m2, m2_max)


@dataclass(frozen=True)
class FlowTable:
    """Flow function and its two derivatives on a uniform m2 grid, with splines."""

    m2_grid: np.ndarray
    flow: np.ndarray
    sigma: np.ndarray
    a2: np.ndarray
    background_hash: str = ""
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.m2_grid.size < 4:
            raise ValueError("need >= 4 points for cubic spline")
        self._splines["flow"] = CubicSpline(self.m2_grid, self.flow, bc_type="natural")
        self._splines["sigma"] = CubicSpline(self.m2_grid, self.sigma, bc_type="natural")
        self._splines["a2"] = CubicSpline(self.m2_grid, self.a2, bc_type="natural")

    @property
    def m2_max(self):
        return float(self.m2_grid[-1])

    @property
    def m2_min(self):
        return float(self.m2_grid[0])

    def _eval(self, name, m2, locate=False):
        m2 = np.asarray(m2, dtype=float)
        if np.any(m2 < self.m2_min) or np.any(m2 > self.m2_max):
            bad = float(np.max(np.abs(m2)))
            idx = None
            if locate and m2.ndim:
                flat = np.argmax((m2 < self.m2_min) | (m2 > self.m2_max))
                idx = np.unravel_index(flat, m2.shape)
            raise TableRangeError(bad, self.m2_max, where=idx)
        out = self._splines[name](m2)
        return float(out) if out.ndim == 0 else out

    def flow_at(self, m2, locate=False):
        return self._eval("flow", m2, locate)

    def sigma_at(self, m2, locate=False):
        return self._eval("sigma", m2, locate)

    def a2_at(self, m2, locate=False):
        return self._eval("a2", m2, locate)

    def sigma_slope_at(self, m2):
        return self._splines["sigma"](np.asarray(m2, dtype=float), 1)

    @classmethod
    def from_values(cls, m2_grid, flow, sigma, a2, background_hash=""):
        """Build a table directly from arrays (synthetic tables for testing)."""
        return cls(
            m2_grid=np.asarray(m2_grid, dtype=float),
            flow=np.asarray(flow, dtype=float),
            sigma=np.asarray(sigma, dtype=float),
            a2=np.asarray(a2, dtype=float),
            background_hash=background_hash,
        )

    @classmethod
    def constant(cls, value, m2_max=0.5, n_points=11):
        """Table of a constant flow function (zero derivatives); test hook."""
        grid = np.linspace(-m2_max, m2_max, n_points)
        return cls.from_values(
            grid, np.full(n_points, value), np.zeros(n_points), np.zeros(n_points)
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("m2,G,sigma,A2\n")
            for m2, g, s, a in zip(self.m2_grid, self.flow, self.sigma, self.a2):
                fh.write(f"{m2:.17g},{g:.17g},{s:.17g},{a:.17g}\n")


def _thread_count():
    env = os.environ.get("CSFLOW_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def tabulate(bg, m2_max, n_points, background_hash="", threads=None):
    """Fill the flow table on a uniform grid over [-m2_max, m2_max].

    Points are independent, so the fill parallelizes over the grid; the result
    is deterministic regardless of the worker count.  Kernel failures propagate
    with the offending m2 attached.
    """
    if n_points < 4:
        raise ValueError("need >= 4 points for cubic spline")
    if m2_max <= 0.0:
        raise ValueError("m2 range must be positive")
    grid = np.linspace(-m2_max, m2_max, n_points)
    flow = np.empty(n_points)
    sigma = np.empty(n_points)
    a2 = np.empty(n_points)

    def fill(i):
        try:
            flow[i], sigma[i], a2[i] = _point_values(bg, grid[i])
        except Exception as exc:
            raise RuntimeError(f"kernel failure at m2 = {grid[i]:.6g}") from exc

    workers = threads if threads is not None else _thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(n_points)))
    else:
        for i in range(n_points):
            fill(i)

    table = FlowTable(
        m2_grid=grid, flow=flow, sigma=sigma, a2=a2, background_hash=background_hash
    )
    check = derivative_consistency(table)
    if not check["passed"]:
        raise RuntimeError(
            "table derivative consistency failed: "
            f"sigma residual {check['sigma_max_err']:.3e} vs bound {check['sigma_bound']:.3e}"
        )
    return table


def derivative_consistency(table, safety=10.0):
    """Check sigma/a2 columns against centered differences of the flow column.

    The bounds are self-calibrated from the spline's higher derivatives: the
    centered first difference of G differs from G' by G'''(xi) d^2 / 6, and the
    centered second difference from G'' by G''''(xi) d^2 / 12.
    """
    d = float(table.m2_grid[1] - table.m2_grid[0])
    g = table.flow
    interior = slice(1, -1)
    d1 = (g[2:] - g[:-2]) / (2.0 * d)
    d2 = (g[2:] - 2.0 * g[1:-1] + g[:-2]) / d**2
    sig_err = float(np.max(np.abs(table.sigma[interior] - d1)))
    a2_err = float(np.max(np.abs(table.a2[interior] - d2)))

    spline = table._splines["flow"]
    xs = table.m2_grid
    g3 = float(np.max(np.abs(spline(xs, 3)))) if xs.size >= 5 else 0.0
    # the spline is C2; estimate G'''' from differences of its third derivative
    g4 = float(np.max(np.abs(np.diff(spline(xs, 3)) / d))) if xs.size >= 5 else 0.0
    sig_bound = safety * (g3 * d**2 / 6.0) + 1e-12
    a2_bound = safety * (g4 * d**2 / 12.0) + 1e-10
    return {
        "sigma_max_err": sig_err,
        "a2_max_err": a2_err,
        "sigma_bound": sig_bound,
        "a2_bound": a2_bound,
        "passed": sig_err <= sig_bound and a2_err <= a2_bound,
    }


@dataclass(frozen=True)
class SigmaWindowReport:
    """Positivity and log-derivative budget of sigma over the working window."""

    sigma_min: float
    sigma_at_zero: float
    max_log_slope: float
    floor: float
    log_slope_budget: float
    window: float
    passed: bool
    remedy: str = ""


def check_sigma_window(table, c, eps_prime, a_window, samples=512):
    """Report min sigma over [-A, A] and the max |sigma'/sigma| against budgets.

    When sigma is negative at the origin the report suggests flipping the sign
    of the state amplitude, which flips sigma linearly.
    """
    if a_window < 0.0:
        raise ValueError("window must be non-negative")
    a_window = min(a_window, table.m2_max)
    if a_window == 0.0:
        xs = np.array([0.0])
    else:
        xs = np.linspace(-a_window, a_window, samples)
    sig = np.atleast_1d(table.sigma_at(xs))
    slope = np.atleast_1d(table.sigma_slope_at(xs))
    sigma_min = float(np.min(sig))
    sigma_zero = float(table.sigma_at(0.0))

    nonzero = np.abs(sig) > 1e-300
    if np.any(nonzero):
        max_log = float(np.max(np.abs(slope[nonzero] / sig[nonzero])))
    else:
        max_log = 0.0  # identically flat table: log-derivative vacuous

    passed = sigma_min >= c and max_log < eps_prime
    remedy = ""
    if sigma_zero < 0.0:
        remedy = "sigma(0) < 0: flip the sign of the state amplitude alpha"
    elif not passed and sigma_min < c:
        remedy = "increase |alpha| or lower the floor c"
    elif not passed:
        remedy = "shrink the window A or the scale interval [a, b]"
    return SigmaWindowReport(
        sigma_min=sigma_min,
        sigma_at_zero=sigma_zero,
        max_log_slope=max_log,
        floor=c,
        log_slope_budget=eps_prime,
        window=a_window,
        passed=passed,
        remedy=remedy,
    )
