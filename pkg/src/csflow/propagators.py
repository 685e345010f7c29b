"""Per-mode retarded Green kernels, their mass-perturbed counterparts, and intertwiners.

For each spatial mode with frequency ``omega`` the wave operator reduces to
``d^2/dt^2 + omega^2 + m2*chi(t)`` on the time grid.  The free retarded kernel
is sin(omega (t - tau)) / omega on t > tau; the perturbed kernel solves the
discrete Volterra identity

    G = G0 - m2 * G0 @ diag(chi * w_t) @ G

by a unit lower-triangular forward solve (production path), with a Neumann
partial-sum series as an independent cross-check.  All compositions share the
same trapezoid weight matrix, so operator identities hold exactly in the
discretized algebra.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular


class SeriesDivergenceError(RuntimeError):
    """Neumann partial sums stopped contracting before reaching tolerance."""


class KernelError(RuntimeError):
    """Forward substitution produced non-finite kernel values."""


@dataclass(frozen=True)
class PropagatorKernel:
    """Retarded kernel matrix of one mode at one mass-squared shift.

    ``matrix[i, j]`` approximates the kernel at (t_i, t_j); it is strictly lower
    triangular (retarded support, zero at coincidence).  The advanced kernel is
    the transpose.
    """

    mode: int
    m2: float
    matrix: np.ndarray

    @property
    def advanced(self):
        return self.matrix.T


@dataclass(frozen=True)
class MoellerMatrix:
    """Intertwiner 1 - m2 * G * diag(chi * w_t) acting on time series."""

    mode: int
    m2: float
    matrix: np.ndarray


@dataclass(frozen=True)
class NeumannResult:
    kernel: PropagatorKernel
    n_terms: int
    term_norms: np.ndarray


def free_kernel(bg, n):
    """Free retarded kernel matrix sin(omega_n (t_i - t_j)) / omega_n, j < i."""
    w = bg.modes.omega[n]
    dt_matrix = bg.t[:, None] - bg.t[None, :]
    g0 = np.sin(w * dt_matrix) / w
    return np.tril(g0, k=-1)


def _weighted_cut(bg):
    """chi * trapezoid weights; the diagonal every kernel composition shares."""
    return bg.chi * bg.time_weights


def free_retarded_apply(bg, n, g):
    """Apply the free retarded operator to a time series (trapezoid weights)."""
    g = np.asarray(g, dtype=float)
    return free_kernel(bg, n) @ (bg.time_weights * g)


class VolterraFactor:
    """Forward-substitution context for one (mode, m2) pair.

    Holds T = I + m2 * G0 * diag(chi * w_t); applying the perturbed kernel to a
    weighted source y is then G @ y = T^(-1) (G0 @ y), one O(N^2) triangular
    solve per right-hand side.
    """

    def __init__(self, bg, n, m2):
        self.bg = bg
        self.n = n
        self.m2 = float(m2)
        self.g0 = free_kernel(bg, n)
        x = _weighted_cut(bg)
        self._t = np.eye(bg.n_t) + self.m2 * (self.g0 * x[None, :])

    def apply(self, y):
        """G @ y for y of shape (n_t,) or (n_t, k); y carries its own weights."""
        rhs = self.g0 @ y
        out = solve_triangular(self._t, rhs, lower=True, unit_diagonal=True)
        if not np.all(np.isfinite(out)):
            raise KernelError(
                f"non-finite kernel action for mode {self.n}, m2={self.m2}"
            )
        return out

    def kernel_matrix(self):
        out = solve_triangular(self._t, self.g0, lower=True, unit_diagonal=True)
        if not np.all(np.isfinite(out)):
            raise KernelError(f"non-finite kernel for mode {self.n}, m2={self.m2}")
        return out


def interacting_retarded_volterra(bg, n, m2):
    """Perturbed retarded kernel by the direct forward-substitution solve.

    Valid for any finite m2; exact (to round-off) solution of the discrete
    Volterra identity, hence strictly lower triangular by construction.
    """
    matrix = VolterraFactor(bg, n, m2).kernel_matrix()
    return PropagatorKernel(mode=n, m2=float(m2), matrix=matrix)


def interacting_retarded_neumann(bg, n, m2, tol=1e-10, max_terms=200):
    """Perturbed kernel by partial sums of the iterated recursion.

    Terms follow T_{j+1} = -m2 * G0 @ diag(chi*w_t) @ T_j; stops when the term
    max-norm drops below ``tol``.  Raises :class:`SeriesDivergenceError` when
    the term norms stop contracting before ``tol`` is reached, which signals a
    mass shift outside the perturbative radius (fall back to the Volterra
    solve).
    """
    g0 = free_kernel(bg, n)
    x = _weighted_cut(bg)
    step = -float(m2) * (g0 * x[None, :])
    term = g0
    total = g0.copy()
    norms = [float(np.max(np.abs(term)))]
    for j in range(1, max_terms + 1):
        term = step @ term
        norm = float(np.max(np.abs(term)))
        if norm < tol:
            kern = PropagatorKernel(mode=n, m2=float(m2), matrix=total)
            return NeumannResult(
                kernel=kern, n_terms=j - 1, term_norms=np.array(norms)
            )
        norms.append(norm)
        if norm >= norms[-2]:
            raise SeriesDivergenceError(
                f"series not converged: term norms stopped contracting at j={j} "
                f"(ratio {norm / norms[-2]:.3f}) for mode {n}, m2={m2}"
            )
        total += term
    raise SeriesDivergenceError(
        f"series not converged within {max_terms} terms for mode {n}, m2={m2}"
    )


def moeller_matrix(bg, kernel):
    """Intertwiner matrix 1 - m2 * G * diag(chi * w_t) for a built kernel."""
    x = _weighted_cut(bg)
    m = np.eye(bg.n_t) - kernel.m2 * (kernel.matrix * x[None, :])
    return MoellerMatrix(mode=kernel.mode, m2=kernel.m2, matrix=m)


def moeller_apply(bg, n, m2, psi, kernel=None):
    """psi - m2 * G @ (chi * w_t * psi); linear in psi, identity at m2 = 0."""
    psi = np.asarray(psi, dtype=float)
    x = _weighted_cut(bg)
    if kernel is not None:
        return psi - float(m2) * (kernel.matrix @ (x * psi))
    return psi - float(m2) * VolterraFactor(bg, n, m2).apply(x * psi)


def moeller_cos_sin(bg, n, m2, factor=None):
    """Moeller images of the state-kernel factors cos(w t), sin(w t) for mode n.

    These two vectors carry the full rank-2 content of the transported state
    kernel: (M w_n M^T)(t, t') = c_n * (a(t) a(t') + b(t) b(t')).
    """
    if factor is None:
        factor = VolterraFactor(bg, n, m2)
    c, s = bg.time_harmonics(n)
    x = _weighted_cut(bg)
    rhs = np.column_stack([x * c, x * s])
    img = factor.apply(rhs)
    a = c - factor.m2 * img[:, 0]
    b = s - factor.m2 * img[:, 1]
    return a, b


def normal_ordered_diagonal(bg, m2):
    """Mode-summed coincidence diagonal of the transported state kernel.

    Returns d(t_i) = sum_n mult_n * [M_n w_n M_n^T](t_i, t_i); at m2 = 0 this
    is the constant sum of the state weights.
    """
    d = np.zeros(bg.n_t)
    for n in range(bg.n_modes + 1):
        a, b = moeller_cos_sin(bg, n, m2)
        cn = bg.state.weights[n]
        mult = bg.modes.multiplicity[n]
        d += mult * cn * (a * a + b * b)
    return d


@dataclass(frozen=True)
class IntertwiningReport:
    """Residual of (d^2/dt^2 + omega^2 + m2 chi) G against the discrete delta."""

    mode: int
    m2: float
    max_off_delta: float
    max_delta_row_relative: float
    threshold: float

    @property
    def residual(self):
        return max(self.max_off_delta, self.max_delta_row_relative)

    @property
    def passed(self):
        return self.residual < self.threshold


def verify_intertwining(bg, n, m2, kernel=None, safety=12.0):
    """Apply the discrete wave operator to each kernel column and compare to a delta.

    Off the impulse row the column must solve the homogeneous equation; on the
    impulse row it must reproduce the discrete delta 1/w_j, which is compared in
    relative terms because the delta grows like 1/dt.  Both parts converge at
    second order.  The pass threshold scales the leading truncation constant
    (omega^2 + |m2|)^2 * max|G| * dt^2 / 12 by ``safety``.
    """
    if kernel is None:
        kernel = interacting_retarded_volterra(bg, n, m2)
    g = kernel.matrix
    dt = bg.dt
    omega2 = bg.modes.omega[n] ** 2
    pot = omega2 + float(m2) * bg.chi

    # operator rows 1..n_t-2 (central second difference), all columns
    lg = (g[2:, :] - 2.0 * g[1:-1, :] + g[:-2, :]) / dt**2 + pot[1:-1, None] * g[1:-1, :]

    delta = np.zeros_like(g)
    rows = np.arange(1, bg.n_t - 1)
    delta[rows, rows] = 1.0 / bg.time_weights[rows]

    resid = lg - delta[1:-1, :]
    on_delta = resid[rows - 1, rows]
    off = resid.copy()
    off[rows - 1, rows] = 0.0

    max_off = float(np.max(np.abs(off)))
    max_rel = float(np.max(np.abs(on_delta) * bg.time_weights[rows]))
    threshold = safety * (omega2 + abs(m2)) ** 2 * float(np.max(np.abs(g))) * dt**2 / 12.0
    return IntertwiningReport(
        mode=n,
        m2=float(m2),
        max_off_delta=max_off,
        max_delta_row_relative=max_rel,
        threshold=threshold,
    )


_CACHE_MAGIC = b"CSFK"
_CACHE_VERSION = 1


def save_kernel(path, matrix):
    """Write a kernel (or any 2-d float array) in the binary cache layout.

    Layout: magic ``CSFK``, u32 version, u32 leading dimension, then row-major
    64-bit floats.  The trailing dimension is recovered from the payload size.
    """
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", _CACHE_MAGIC, _CACHE_VERSION, matrix.shape[0]))
        fh.write(matrix.tobytes())


def load_kernel(path):
    with open(path, "rb") as fh:
        header = fh.read(12)
        magic, version, rows = struct.unpack("<4sII", header)
        if magic != _CACHE_MAGIC:
            raise KernelError(f"bad cache magic in {path}")
        if version != _CACHE_VERSION:
            raise KernelError(f"unsupported cache version {version} in {path}")
        payload = fh.read()
    data = np.frombuffer(payload, dtype=np.float64)
    if rows == 0 or data.size % rows:
        raise KernelError(f"corrupt cache payload in {path}")
    return data.reshape(rows, data.size // rows).copy()


def cache_filename(config_hash, n, m2):
    """Cache key: config hash, mode index, and the exact float bits of m2."""
    bits = np.float64(m2).tobytes().hex()
    return f"{config_hash}_n{n}_m2{bits}.bin"


class KernelCache:
    """Optional on-disk store of kernel matrices keyed by (config hash, n, m2)."""

    def __init__(self, directory, config_hash):
        self.directory = directory
        self.config_hash = config_hash

    def path_for(self, n, m2):
        import os

        return os.path.join(self.directory, cache_filename(self.config_hash, n, m2))

    def get_or_build(self, bg, n, m2):
        import os

        path = self.path_for(n, m2)
        if os.path.exists(path):
            return PropagatorKernel(mode=n, m2=float(m2), matrix=load_kernel(path))
        kern = interacting_retarded_volterra(bg, n, m2)
        os.makedirs(self.directory, exist_ok=True)
        save_kernel(path, kern.matrix)
        return kern
