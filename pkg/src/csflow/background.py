"""Desk-scale spacetime model: cylinder geometry, mode basis, cutoff, regulator, state kernel.

The spatial section is a circle of circumference ``L``; spatial modes decouple
exactly, so every propagator reduces to a family of one-dimensional kernels on
the time grid.  The temporal cutoff ``chi`` is a genuine C-infinity bump, the
regulator is linear in the scale with slope ``epsilon``, and the state kernel
is mode-diagonal with exponentially decaying weights.
"""

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Raised when a background configuration violates its invariants."""


def smooth_transition(tau):
    """C-infinity transition s(tau) with s=0 for tau<=0, s=1 for tau>=1, s(1/2)=1/2.

    Built from sigma(tau) = exp(-1/tau) as s = sigma(tau) / (sigma(tau) + sigma(1-tau)).
    """
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        num = np.where(tau > 0.0, np.exp(-1.0 / np.where(tau > 0.0, tau, 1.0)), 0.0)
        rev = 1.0 - tau
        den = np.where(rev > 0.0, np.exp(-1.0 / np.where(rev > 0.0, rev, 1.0)), 0.0)
    total = num + den
    # total > 0 except in the (excluded) region where both branches vanish
    out = np.where(total > 0.0, num / np.where(total > 0.0, total, 1.0), 0.0)
    out = np.where(tau >= 1.0, 1.0, out)
    out = np.where(tau <= 0.0, 0.0, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ModeBasis:
    """Orthonormal real harmonics on the circle and their frequencies.

    Distinct wavenumbers ``n_abs[i] = 0, 1, ..., n_modes`` are stored once; the
    sine and cosine partners at the same wavenumber share frequency and state
    weight, which ``multiplicity`` records (1 for the constant mode, 2 else).
    """

    circumference: float
    n_abs: np.ndarray
    omega: np.ndarray
    multiplicity: np.ndarray

    @property
    def laplacian(self):
        """Eigenvalues (2*pi*n/L)**2 of the (positive) circle Laplacian."""
        return (2.0 * np.pi * self.n_abs / self.circumference) ** 2

    def harmonic(self, n, x):
        """Value of the orthonormal harmonic with signed index ``n`` at points ``x``.

        n = 0 is the constant mode, n > 0 a cosine, n < 0 a sine.
        """
        x = np.asarray(x, dtype=float)
        L = self.circumference
        if n == 0:
            return np.full_like(x, 1.0 / np.sqrt(L))
        arg = 2.0 * np.pi * abs(n) * x / L
        if n > 0:
            return np.sqrt(2.0 / L) * np.cos(arg)
        return np.sqrt(2.0 / L) * np.sin(arg)


@dataclass(frozen=True)
class StateKernelModes:
    """Mode-diagonal state kernel w_n(t, t') = c_n * cos(omega_n (t - t')).

    The weights c_n = alpha * exp(-omega_n / lambda_w) / (2 omega_n) mirror a
    thermal-like damping of the vacuum normalization 1/(2 omega); the sign of
    ``alpha`` is the lever used to place the conductivity window.
    """

    alpha: float
    lambda_w: float
    weights: np.ndarray  # c_n per distinct wavenumber

    def kernel_matrix(self, index, omega, t):
        """Dense symmetric kernel w_n(t_i, t_j) for the distinct mode ``index``.

        Built from the rank-2 identity cos(w(t-t')) = cc' + ss', which makes the
        symmetry w_n(t_i, t_j) = w_n(t_j, t_i) exact in floating point.
        """
        c = np.cos(omega * t)
        s = np.sin(omega * t)
        return self.weights[index] * (np.outer(c, c) + np.outer(s, s))


@dataclass(frozen=True)
class Background:
    """Fully resolved spacetime/cutoff/regulator/state configuration.

    Immutable after construction; every derived table carries its identity via
    the caller-supplied config hash.
    """

    circumference: float
    m0: float
    n_modes: int
    t: np.ndarray
    t1: float
    t2: float
    plateau_fraction: float
    k0: float
    epsilon: float
    alpha: float
    lambda_w: float
    modes: ModeBasis = field(repr=False)
    state: StateKernelModes = field(repr=False)
    chi: np.ndarray = field(repr=False)
    time_weights: np.ndarray = field(repr=False)

    @property
    def n_t(self):
        return self.t.size

    @property
    def dt(self):
        return self.t[1] - self.t[0]

    def time_harmonics(self, index):
        """cos/sin factors of the state kernel for distinct mode ``index`` on the grid."""
        w = self.modes.omega[index]
        return np.cos(w * self.t), np.sin(w * self.t)

    def state_kernel(self, index):
        """Dense state kernel w_n on the time grid for distinct mode ``index``."""
        return self.state.kernel_matrix(index, self.modes.omega[index], self.t)

    def state_weight_sum(self):
        """Sum of c_n over the full signed index set (multiplicity resolved)."""
        return float(np.sum(self.modes.multiplicity * self.state.weights))


_REQUIRED = {
    "l": "circle circumference required",
    "m0": "free mass required",
    "n_modes": "mode count required",
    "n_t": "time grid size required",
    "t_min": "time grid start required",
    "t_max": "time grid end required",
    "t1": "cutoff window start required",
    "t2": "cutoff window end required",
    "plateau_fraction": "cutoff plateau fraction required",
    "epsilon": "regulator slope required",
}


def build_background(config):
    """Resolve a key-value configuration into an immutable :class:`Background`.

    Deterministic function of the configuration.  Rejects configurations that
    violate the model invariants (massless zero mode, cutoff window without
    grid margin, non-positive regulator slope, ...).
    """
    cfg = dict(config)
    for key, msg in _REQUIRED.items():
        if key not in cfg or cfg[key] is None:
            raise ConfigurationError(msg)

    L = float(cfg["l"])
    m0 = float(cfg["m0"])
    n_modes = int(cfg["n_modes"])
    n_t = int(cfg["n_t"])
    t_min = float(cfg["t_min"])
    t_max = float(cfg["t_max"])
    t1 = float(cfg["t1"])
    t2 = float(cfg["t2"])
    rho = float(cfg["plateau_fraction"])
    k0 = float(cfg.get("k0", 0.0))
    eps = float(cfg["epsilon"])
    alpha = float(cfg.get("alpha", 0.0))
    lambda_w = float(cfg.get("lambda_w", 1.0))

    if L <= 0.0:
        raise ConfigurationError("circumference must be positive")
    if m0 <= 0.0:
        # the circle always carries the constant harmonic, whose frequency is m0
        raise ConfigurationError(
            "free mass must be positive: the zero mode would have zero frequency"
        )
    if n_modes < 1:
        raise ConfigurationError("need at least one non-constant mode")
    if n_t < 8:
        raise ConfigurationError("time grid too coarse")
    if eps <= 0.0:
        raise ConfigurationError("regulator slope must be positive")
    if k0 < 0.0:
        raise ConfigurationError("regulator offset must be non-negative")
    if lambda_w <= 0.0:
        raise ConfigurationError("state kernel decay scale must be positive")
    if not (0.0 < rho < 1.0):
        raise ConfigurationError("plateau fraction must lie in (0, 1)")
    if not t1 < t2:
        raise ConfigurationError("cutoff window must have t1 < t2")
    if not t_min < t_max:
        raise ConfigurationError("time grid must have t_min < t_max")

    t = np.linspace(t_min, t_max, n_t)
    dt = t[1] - t[0]
    if t1 - t_min < 2.0 * dt or t_max - t2 < 2.0 * dt:
        raise ConfigurationError(
            "time grid must contain the cutoff window with a margin of >= 2 cells"
        )

    n_abs = np.arange(0, n_modes + 1)
    omega = np.sqrt(m0**2 + (2.0 * np.pi * n_abs / L) ** 2)
    multiplicity = np.where(n_abs == 0, 1, 2)
    modes = ModeBasis(
        circumference=L, n_abs=n_abs, omega=omega, multiplicity=multiplicity
    )

    weights = alpha * np.exp(-omega / lambda_w) / (2.0 * omega)
    state = StateKernelModes(alpha=alpha, lambda_w=lambda_w, weights=weights)

    chi = _cutoff_values(t, t1, t2, rho)
    w_t = np.full(n_t, dt)
    w_t[0] = w_t[-1] = 0.5 * dt

    return Background(
        circumference=L,
        m0=m0,
        n_modes=n_modes,
        t=t,
        t1=t1,
        t2=t2,
        plateau_fraction=rho,
        k0=k0,
        epsilon=eps,
        alpha=alpha,
        lambda_w=lambda_w,
        modes=modes,
        state=state,
        chi=chi,
        time_weights=w_t,
    )


def _cutoff_values(t, t1, t2, rho):
    width = t2 - t1
    band = 0.5 * (1.0 - rho) * width
    p1 = t1 + band
    p2 = t2 - band
    t = np.asarray(t, dtype=float)
    rising = smooth_transition((t - t1) / band)
    falling = smooth_transition((t2 - t) / band)
    out = np.where(t < p1, rising, np.where(t > p2, falling, 1.0))
    out = np.where((t <= t1) | (t >= t2), 0.0, out)
    return out if out.ndim else float(out)


def cutoff_eval(bg, t):
    """Adiabatic cutoff chi(t): exact 0 outside [t1, t2], exact 1 on the plateau."""
    return _cutoff_values(t, bg.t1, bg.t2, bg.plateau_fraction)


def regulator_k_derivative(bg, t):
    """Scale derivative of the regulator kernel: epsilon * chi(t), independent of k."""
    return bg.epsilon * cutoff_eval(bg, t)


def f_l1_norm(bg, chi_values=None):
    """L1 norm of the spacetime cutoff, L * integral(chi), by trapezoid quadrature.

    ``chi_values`` on the time grid may be substituted for testing.
    """
    chi = bg.chi if chi_values is None else np.asarray(chi_values, dtype=float)
    return bg.circumference * float(np.dot(bg.time_weights, chi))
