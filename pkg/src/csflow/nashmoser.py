"""Flow residual operator and three solvers: smoothed iteration, plain Newton, marching.

The primary solver integrates the continuous update

    du/dt = -c * E(sigma(S_t u_t)) [ S_t R(u_t) ]

by explicit pseudo-time steps, where R(u) = dk(u + u_b) - G(d^2phi(u + u_b))
is the flow residual, E the linearized inverse, and S_t a low-pass with an
exponentially opening passband.  The conductivity is frozen at the smoothed
iterate and the residual is smoothed before inversion, exactly as the update
rule is written.  A plain Newton variant (S_t = identity) and a direct
implicit march in k serve as contrast baseline and independent oracle.
"""

import time
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.linalg import solve_banded

from .flowfn import TableRangeError, check_sigma_window
from .graded import (
    GridField,
    SmoothingSchedule,
    boundary_lift,
    d2_phi,
    dk_backward,
    project_f0,
    seminorm,
    smoothing_apply,
)
from .linsolve import PositivityError, ConductivityField, solve_linearized


class WindowExitError(RuntimeError):
    """Conductivity window violated (before or during the iteration)."""


class StallError(RuntimeError):
    """Residual stopped decreasing before reaching tolerance."""


@dataclass
class SolverParams:
    """Knobs of the outer iteration; defaults follow the shipped configuration."""

    c_step: float = 1.0
    dt: float = 0.1
    t_max: float = 40.0
    tol: float = 1e-9
    patience: int = 25
    sigma_floor: float = 0.0
    log_slope_budget: float = 1.0
    window: float = 0.1
    smoothing: SmoothingSchedule = dataclass_field(default_factory=SmoothingSchedule)
    newton_max_iter: int = 40
    newton_tol: float = 1e-12
    lift_tol: float = 1e-9

    def __post_init__(self):
        if self.c_step * self.dt > 1.0 + 1e-12:
            raise ValueError("explicit stepping requires c_step * dt <= 1")


@dataclass
class SolverState:
    """Mutable state of the outer loop; history rows are (t, res0, res2)."""

    u: GridField
    t: float = 0.0
    history: list = dataclass_field(default_factory=list)
    seminorm4_history: list = dataclass_field(default_factory=list)

    def record(self, res0, res2, norm4):
        self.history.append((self.t, res0, res2))
        self.seminorm4_history.append(norm4)


@dataclass
class SolveReport:
    """Outcome of one solver run; serializable minus volatile timing."""

    method: str
    termination: str
    iterations: int
    final_res0: float
    final_res2: float
    residual_history: list
    seminorm4_history: list
    seminorm4_max: float
    tolerance: float
    window_report: dict
    lift_norms: dict
    config_hash: str = ""
    wall_clock: float = 0.0
    diagnostics: dict = dataclass_field(default_factory=dict)

    @property
    def converged(self):
        return self.termination == "converged"

    def to_dict(self, include_volatile=False):
        out = {
            "schema_version": "v1",
            "method": self.method,
            "termination": self.termination,
            "iterations": self.iterations,
            "final_res0": self.final_res0,
            "final_res2": self.final_res2,
            "seminorm4_max": self.seminorm4_max,
            "tolerance": self.tolerance,
            "window_report": self.window_report,
            "lift_norms": self.lift_norms,
            "config_hash": self.config_hash,
            "diagnostics": self.diagnostics,
        }
        if include_volatile:
            out["wall_clock"] = self.wall_clock
        return out


def rg_apply(u, u_b, table):
    """Flow residual: backward-in-k difference of u + u_b minus the tabulated flow.

    Defined on interior phi rows and k columns j >= 1; raises
    :class:`TableRangeError` with the offending node when the field curvature
    leaves the tabulated window.
    """
    grid = u.grid
    total = u.values + u_b.values
    curvature = d2_phi(total, grid)
    flow = table.flow_at(curvature, locate=True)
    dk = dk_backward(total, grid)
    out = np.zeros(grid.shape)
    out[1:-1, 1:] = dk[1:-1, 1:] - flow[1:-1, 1:]
    return GridField(grid=grid, values=out, role="residual")


def _residual_norms(res):
    return float(np.max(np.abs(res.values))), seminorm(res, 2)


def _build_lift(psi, beta, grid, tol):
    beta_left, beta_right = beta
    return boundary_lift(psi, beta_left, beta_right, grid, tol=tol)


def _window_gate(table, params):
    report = check_sigma_window(
        table, params.sigma_floor, params.log_slope_budget, params.window
    )
    if not report.passed:
        raise WindowExitError(
            f"sigma window check failed: min sigma {report.sigma_min:.6g} vs floor "
            f"{report.floor:.6g}, |dlog sigma| {report.max_log_slope:.6g} vs budget "
            f"{report.log_slope_budget:.6g}. {report.remedy}"
        )
    return report


def _iterate(table, grid, psi, beta, params, smoothed, method, config_hash):
    started = time.perf_counter()
    window_report = _window_gate(table, params)
    lift = _build_lift(psi, beta, grid, params.lift_tol)
    if lift.norm3 > params.window:
        raise WindowExitError(
            f"boundary lift too large: ||u_b||_3 = {lift.norm3:.6g} exceeds "
            f"window {params.window:.6g}"
        )
    u_b = lift.field

    state = SolverState(u=GridField.zeros(grid, role="solution"))
    schedule = params.smoothing
    termination = None
    diagnostics = {}
    best_res = np.inf
    since_best = 0
    iterations = 0

    while True:
        res = rg_apply(state.u, u_b, table)
        res0, res2 = _residual_norms(res)
        norm4 = seminorm(state.u, 4)
        state.record(res0, res2, norm4)

        if norm4 > params.window:
            termination = "window_exit"
            diagnostics["reason"] = (
                f"||u||_4 = {norm4:.6g} left the neighbourhood {params.window:.6g}"
            )
            break
        if res0 < params.tol:
            termination = "converged"
            break
        if state.t > params.t_max:
            termination = "t_max"
            break
        if res0 < best_res * (1.0 - 1e-12):
            best_res = res0
            since_best = 0
        else:
            since_best += 1
            if since_best >= params.patience:
                termination = "stalled"
                diagnostics["reason"] = (
                    f"residual non-decreasing for {params.patience} steps "
                    f"at res0 = {res0:.6g}"
                )
                break

        if smoothed:
            u_s = smoothing_apply(state.u, state.t, schedule)
            res_s = smoothing_apply(res, state.t, schedule)
        else:
            u_s, res_s = state.u, res
        u_tilde_s = GridField(
            grid=grid, values=u_s.values + u_b.values, role="source"
        )
        curvature = d2_phi(u_tilde_s.values, grid)
        try:
            sigma_values = table.sigma_at(curvature, locate=True)
            sigma_field = ConductivityField(
                grid=grid, values=sigma_values, floor=params.sigma_floor
            )
        except (PositivityError, TableRangeError) as exc:
            termination = "window_exit"
            diagnostics["reason"] = str(exc)
            break

        update = solve_linearized(sigma_field, res_s)
        new_values = project_f0(
            state.u.values - params.dt * params.c_step * update.values
        )
        state.u = state.u.with_values(new_values)
        state.t += params.dt
        iterations += 1

    u_tilde = GridField(
        grid=grid, values=state.u.values + u_b.values, role="source"
    )
    report = SolveReport(
        method=method,
        termination=termination,
        iterations=iterations,
        final_res0=state.history[-1][1],
        final_res2=state.history[-1][2],
        residual_history=state.history,
        seminorm4_history=state.seminorm4_history,
        seminorm4_max=float(np.max(state.seminorm4_history)),
        tolerance=params.tol,
        window_report=_window_as_dict(window_report),
        lift_norms={"norm2": lift.norm2, "norm3": lift.norm3},
        config_hash=config_hash,
        wall_clock=time.perf_counter() - started,
        diagnostics=diagnostics,
    )
    return u_tilde, report


def nash_moser_solve(table, grid, psi, beta, params=None, config_hash=""):
    """Solve the flow by the smoothed continuous-update iteration.

    Returns the full solution u~ = u + u_b and a report; pre-checks the sigma
    window and the lift size, re-checks positivity at every iterate.
    """
    params = params or SolverParams()
    return _iterate(table, grid, psi, beta, params, True, "nash-moser", config_hash)


def newton_solve(table, grid, psi, beta, params=None, config_hash=""):
    """Undamped Newton contrast baseline: same loop without smoothing.

    The report records the order-4 seminorm history; growth past the window is
    the expected loss-of-derivatives signature on hard instances and is
    reported, not asserted.
    """
    params = params or SolverParams()
    return _iterate(table, grid, psi, beta, params, False, "newton", config_hash)


def _window_as_dict(report):
    return {
        "sigma_min": report.sigma_min,
        "sigma_at_zero": report.sigma_at_zero,
        "max_log_slope": report.max_log_slope,
        "floor": report.floor,
        "log_slope_budget": report.log_slope_budget,
        "window": report.window,
        "passed": report.passed,
    }


class NewtonDivergenceError(RuntimeError):
    """Inner Newton iteration of the marching solver failed to converge."""


def march_solve(table, grid, psi, beta, params=None, config_hash=""):
    """Independent oracle: implicit Euler in k applied directly to the flow.

    Each k step solves u_new - dk * G(d^2phi u_new) = u_old by damped Newton
    with the tridiagonal Jacobian 1 - dk * sigma * d^2phi; Dirichlet data from
    the boundary traces, initial row from psi.
    """
    params = params or SolverParams()
    started = time.perf_counter()
    window_report = _window_gate(table, params)
    beta_left, beta_right = np.asarray(beta[0], float), np.asarray(beta[1], float)
    psi = np.asarray(psi, dtype=float)

    dk = grid.dk
    lam = dk / grid.dphi**2
    n_int = grid.n_phi - 2
    u = np.zeros(grid.shape)
    u[:, 0] = psi
    u[0, :] = beta_left
    u[-1, :] = beta_right

    total_newton = 0
    for j in range(1, grid.n_k):
        prev = u[:, j - 1]
        cur = prev.copy()
        cur[0] = beta_left[j]
        cur[-1] = beta_right[j]

        def residual(col):
            curv = _d2_column(col, grid.dphi)
            flow = table.flow_at(curv, locate=True)
            return col[1:-1] - dk * flow[1:-1] - prev[1:-1]

        f = residual(cur)
        for it in range(params.newton_max_iter):
            fnorm = float(np.max(np.abs(f)))
            if fnorm < params.newton_tol:
                break
            curv = _d2_column(cur, grid.dphi)
            sig = np.atleast_1d(table.sigma_at(curv))[1:-1]
            band = np.zeros((3, n_int))
            band[0, 1:] = -lam * sig[:-1]
            band[1, :] = 1.0 + 2.0 * lam * sig
            band[2, :-1] = -lam * sig[1:]
            step = solve_banded((1, 1), band, f)
            lam_damp = 1.0
            for _ in range(20):
                trial = cur.copy()
                trial[1:-1] -= lam_damp * step
                f_trial = residual(trial)
                if float(np.max(np.abs(f_trial))) < fnorm:
                    cur, f = trial, f_trial
                    break
                lam_damp *= 0.5
            else:
                raise NewtonDivergenceError(
                    f"damped Newton made no progress at k step {j}"
                )
            total_newton += 1
        else:
            raise NewtonDivergenceError(
                f"inner Newton did not converge at k step {j} "
                f"(residual {float(np.max(np.abs(f))):.3e})"
            )
        u[:, j] = cur

    field = GridField(grid=grid, values=u, role="source")
    lift = _build_lift(psi, (beta_left, beta_right), grid, params.lift_tol)
    u_f0 = GridField(grid=grid, values=project_f0(u - lift.field.values), role="solution")
    res = rg_apply(u_f0, lift.field, table)
    res0, res2 = _residual_norms(res)
    norm4 = seminorm(u_f0, 4)
    report = SolveReport(
        method="march",
        termination="converged",
        iterations=grid.n_k - 1,
        final_res0=res0,
        final_res2=res2,
        residual_history=[(0.0, res0, res2)],
        seminorm4_history=[norm4],
        seminorm4_max=norm4,
        tolerance=params.newton_tol,
        window_report=_window_as_dict(window_report),
        lift_norms={"norm2": lift.norm2, "norm3": lift.norm3},
        config_hash=config_hash,
        wall_clock=time.perf_counter() - started,
        diagnostics={"newton_iterations": total_newton},
    )
    return field, report


def _d2_column(col, dphi):
    out = np.zeros_like(col)
    out[1:-1] = (col[2:] - 2.0 * col[1:-1] + col[:-2]) / dphi**2
    out[0] = out[1]
    out[-1] = out[-2]
    return out
