"""Grid fields on the (phi, k) rectangle, graded seminorms, smoothing, boundary lift.

The solver works in the constraint space F0 of fields vanishing on the initial
row k = a and on the phi boundary.  Seminorms are sums of sup-norms of mixed
finite-difference derivatives on the same grid the solver uses, so they are
defined for every field the solver can produce.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.fft import dctn, idctn

from .background import smooth_transition


class GridError(ValueError):
    """Raised for invalid grids or grid/field mismatches."""


class CompatibilityError(ValueError):
    """Boundary data incompatible with the initial profile at the corners."""


@dataclass(frozen=True)
class FlowGrid:
    """Uniform rectangle X x [a, b] in the (phi, k) plane."""

    phi_min: float
    phi_max: float
    n_phi: int
    k_min: float
    k_max: float
    n_k: int

    def __post_init__(self):
        if self.n_phi < 9 or self.n_k < 9:
            raise GridError("grid must have at least 9 points per direction")
        if not self.phi_min < self.phi_max:
            raise GridError("phi range is empty")
        if not 0.0 < self.k_min < self.k_max:
            raise GridError("scale interval must satisfy b > a > 0")

    @property
    def phi(self):
        return np.linspace(self.phi_min, self.phi_max, self.n_phi)

    @property
    def k(self):
        return np.linspace(self.k_min, self.k_max, self.n_k)

    @property
    def dphi(self):
        return (self.phi_max - self.phi_min) / (self.n_phi - 1)

    @property
    def dk(self):
        return (self.k_max - self.k_min) / (self.n_k - 1)

    @property
    def shape(self):
        return (self.n_phi, self.n_k)


# roles: 'solution' fields live in F0; 'lift', 'source', 'residual' fields do not
_F0_ROLES = ("solution",)


@dataclass(frozen=True)
class GridField:
    """Real function on a :class:`FlowGrid`; values indexed [phi, k]."""

    grid: FlowGrid
    values: np.ndarray
    role: str = "source"

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridError(
                f"field shape {self.values.shape} != grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise GridError("field contains non-finite values")
        if self.in_f0:
            _assert_f0(self.values)

    @property
    def in_f0(self):
        return self.role in _F0_ROLES

    @classmethod
    def zeros(cls, grid, role="source"):
        return cls(grid=grid, values=np.zeros(grid.shape), role=role)

    def with_values(self, values):
        return replace(self, values=values)


def _assert_f0(values):
    if np.any(values[:, 0] != 0.0) or np.any(values[0, :] != 0.0) or np.any(
        values[-1, :] != 0.0
    ):
        raise GridError("F0 field must vanish exactly on k=a row and phi boundary")


def project_f0(values):
    """Zero the initial row and the phi-boundary rows (exactly)."""
    out = values.copy()
    out[:, 0] = 0.0
    out[0, :] = 0.0
    out[-1, :] = 0.0
    return out


def _derivative(values, grid, order_phi, order_k):
    out = values
    for _ in range(order_phi):
        out = np.gradient(out, grid.dphi, axis=0, edge_order=2)
    for _ in range(order_k):
        out = np.gradient(out, grid.dk, axis=1, edge_order=2)
    return out


def d2_phi(values, grid):
    """Centered second phi-derivative, one-sided (2nd order) at the boundary rows."""
    return _derivative(values, grid, 2, 0)


def dk_backward(values, grid):
    """Backward first k-derivative on columns j >= 1; column 0 is zero-filled."""
    out = np.zeros_like(values)
    out[:, 1:] = (values[:, 1:] - values[:, :-1]) / grid.dk
    return out


def seminorm(field, n):
    """Graded sup-seminorm: sum over all mixed derivatives of total order <= n.

    Derivatives are repeated second-order centered differences (one-sided of
    the same order at the boundary), exact for quadratics.
    """
    grid = field.grid
    values = field.values
    min_pts = 2 * n + 1
    if grid.n_phi < min_pts or grid.n_k < min_pts:
        raise GridError(f"grid too coarse for order-{n} differences")
    total = 0.0
    # cache phi-derivatives; k-derivatives build on top of each
    phi_stack = [values]
    for _ in range(n):
        phi_stack.append(np.gradient(phi_stack[-1], grid.dphi, axis=0, edge_order=2))
    for j in range(n + 1):
        for p in range(j + 1):
            d = phi_stack[p]
            for _ in range(j - p):
                d = np.gradient(d, grid.dk, axis=1, edge_order=2)
            total += float(np.max(np.abs(d)))
    return total


def slice_sobolev_norm(coeffs, laplacian):
    """||h||_2 + ||D h||_2 on a spatial slice, from mode coefficients.

    ``laplacian`` holds the eigenvalue of the (positive) spatial Laplacian for
    each coefficient entry.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    laplacian = np.asarray(laplacian, dtype=float)
    l2 = float(np.sqrt(np.sum(coeffs**2)))
    dl2 = float(np.sqrt(np.sum((laplacian * coeffs) ** 2)))
    return l2 + dl2


def _rolloff_smoothstep(x):
    # quintic smoothstep ramp-down: 1 on [0,1], 0 on [2,inf)
    x = np.asarray(x, dtype=float)
    s = np.clip(x - 1.0, 0.0, 1.0)
    ramp = 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)
    return np.where(x <= 1.0, 1.0, np.where(x >= 2.0, 0.0, ramp))


def _rolloff_bump(x):
    # C-infinity ramp-down built from the exp(-1/tau) transition
    x = np.asarray(x, dtype=float)
    return smooth_transition(2.0 - x)


_ROLLOFFS = {"smoothstep": _rolloff_smoothstep, "bump": _rolloff_bump}


@dataclass(frozen=True)
class SmoothingSchedule:
    """Low-pass schedule: cutoff radius r(t) = r0 * exp(t) in DCT index units."""

    r0: float = 4.0
    rolloff: str = "smoothstep"

    def radius(self, t):
        if t < 0.0:
            raise ValueError("smoothing parameter must satisfy t >= 0")
        return self.r0 * np.exp(t)

    def rho(self, x):
        return _ROLLOFFS[self.rolloff](x)


def smoothing_apply(field, t, schedule=None):
    """Low-pass the field: DCT coefficient (p, q) is scaled by rho(|(p,q)| / r(t)).

    Fields tagged F0 are re-projected onto F0 afterwards so the smoothing maps
    the constraint space to itself.
    """
    if schedule is None:
        schedule = SmoothingSchedule()
    r = schedule.radius(t)
    coeff = dctn(field.values, type=2, norm="ortho")
    p = np.arange(field.grid.n_phi)
    q = np.arange(field.grid.n_k)
    radius = np.sqrt(p[:, None] ** 2 + q[None, :] ** 2)
    coeff *= schedule.rho(radius / r)
    values = idctn(coeff, type=2, norm="ortho")
    if field.in_f0:
        values = project_f0(values)
    return field.with_values(values)


@dataclass(frozen=True)
class LiftReport:
    field: GridField
    norm2: float
    norm3: float
    corner_mismatch: float


def boundary_lift(psi, beta_left, beta_right, grid, tol=1e-9):
    """Transfinite interpolation of the initial profile and the side traces.

    ``psi`` is the k = a profile on the phi grid; ``beta_left``/``beta_right``
    are the phi-boundary traces on the k grid.  The blend is a quintic
    smoothstep in phi, so data constant in k reproduces psi(phi) exactly.
    Raises :class:`CompatibilityError` when the corner values disagree.
    """
    psi = np.asarray(psi, dtype=float)
    beta_left = np.asarray(beta_left, dtype=float)
    beta_right = np.asarray(beta_right, dtype=float)
    if psi.shape != (grid.n_phi,):
        raise GridError("psi must live on the phi grid")
    if beta_left.shape != (grid.n_k,) or beta_right.shape != (grid.n_k,):
        raise GridError("beta traces must live on the k grid")

    mismatch = max(abs(beta_left[0] - psi[0]), abs(beta_right[0] - psi[-1]))
    if mismatch > tol:
        raise CompatibilityError(
            f"corner data incompatible: |beta(a) - psi(boundary)| = {mismatch:.3e}"
        )

    s = (grid.phi - grid.phi_min) / (grid.phi_max - grid.phi_min)
    blend = _smoothstep01(s)
    values = (
        psi[:, None]
        + (1.0 - blend)[:, None] * (beta_left - beta_left[0])[None, :]
        + blend[:, None] * (beta_right - beta_right[0])[None, :]
    )
    # pin the boundary data exactly
    values[:, 0] = psi
    values[0, :] = beta_left
    values[-1, :] = beta_right
    field = GridField(grid=grid, values=values, role="lift")
    return LiftReport(
        field=field,
        norm2=seminorm(field, 2),
        norm3=seminorm(field, 3),
        corner_mismatch=mismatch,
    )


def _smoothstep01(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


@dataclass(frozen=True)
class TameFitReport:
    """Result of fitting ||map(u)||_n <= C (1 + ||u||_{n+r}) on a sample split."""

    n: int
    r: int
    constant: float
    slack: float
    train_count: int
    holdout_count: int
    violations: int

    @property
    def passed(self):
        return self.violations == 0


def tame_fit(samples, func, n, r, slack=0.1):
    """Fit the smallest tame constant on even-index samples, validate on the rest.

    A held-out sample violates the bound when ||map(u)||_n exceeds
    C * (1 + slack) * (1 + ||u||_{n+r}).
    """
    ratios = []
    for f in samples:
        out = func(f)
        ratios.append(seminorm(out, n) / (1.0 + seminorm(f, n + r)))
    ratios = np.asarray(ratios)
    train = ratios[::2]
    holdout = ratios[1::2]
    constant = float(np.max(train)) if train.size else 0.0
    violations = int(np.sum(holdout > constant * (1.0 + slack)))
    return TameFitReport(
        n=n,
        r=r,
        constant=constant,
        slack=slack,
        train_count=int(train.size),
        holdout_count=int(holdout.size),
        violations=violations,
    )


def trig_field_samples(grid, count, target_norm4, rng, order=3, role="solution"):
    """Random trigonometric-polynomial fields in F0, rescaled to ||u||_4 targets.

    Each sample uses sin(p pi phi_hat) factors (vanishing on the phi boundary)
    and sin(q pi k_hat / 2) factors (vanishing only at k = a), with amplitudes
    drawn from ``rng`` and a uniform rescaling to a random fraction of
    ``target_norm4``.
    """
    phi_hat = (grid.phi - grid.phi_min) / (grid.phi_max - grid.phi_min)
    k_hat = (grid.k - grid.k_min) / (grid.k_max - grid.k_min)
    samples = []
    for _ in range(count):
        values = np.zeros(grid.shape)
        for p in range(1, order + 1):
            for q in range(1, order + 1):
                amp = rng.normal()
                values += amp * np.outer(
                    np.sin(p * np.pi * phi_hat), np.sin(0.5 * q * np.pi * k_hat)
                )
        values = project_f0(values)
        field = GridField(grid=grid, values=values, role=role)
        norm4 = seminorm(field, 4)
        if norm4 > 0.0:
            scale = target_norm4 * rng.uniform(0.2, 0.95) / norm4
            field = field.with_values(project_f0(values * scale))
        samples.append(field)
    return samples


def field_to_csv(field, path):
    """Serialize a field in long format: phi,k,value with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write("phi,k,value\n")
        phi = field.grid.phi
        k = field.grid.k
        for i in range(field.grid.n_phi):
            for j in range(field.grid.n_k):
                fh.write(f"{phi[i]:.17g},{k[j]:.17g},{field.values[i, j]:.17g}\n")
