"""INI-style run configuration: parsing, validation, content hashing.

Sections: [spacetime], [cutoff], [regulator], [state], [grid], [solver]; all
keys lowercase snake_case, values in natural units.  The content hash covers
every value that affects numerics (including the effective sampling seed), so
identical hashes imply identical outputs.
"""

import configparser
import hashlib
import os

import numpy as np

from .background import ConfigurationError, build_background
from .graded import FlowGrid, SmoothingSchedule
from .nashmoser import SolverParams

_FLOAT_KEYS = {
    "l", "m0", "t_min", "t_max", "t1", "t2", "plateau_fraction", "k0", "epsilon",
    "alpha", "lambda_w", "phi_min", "phi_max", "k_min", "k_max", "m2_max",
    "c_step", "dt", "t_end", "tol", "newton_tol", "sigma_floor",
    "log_slope_budget", "window", "smoothing_r0", "psi_amplitude", "beta_rate",
    "lift_tol",
}
_INT_KEYS = {"n_modes", "n_t", "n_phi", "n_k", "n_m2", "patience",
             "newton_max_iter", "seed"}
_STR_KEYS = {"psi_profile", "beta_profile", "smoothing_rolloff", "snapshot_times"}

_DEFAULTS = {
    "k0": 0.0,
    "alpha": 0.0,
    "lambda_w": 1.0,
    "m2_max": 0.5,
    "n_m2": 101,
    "c_step": 1.0,
    "dt": 0.1,
    "t_end": 40.0,
    "tol": 1e-9,
    "patience": 25,
    "newton_max_iter": 40,
    "newton_tol": 1e-12,
    "sigma_floor": 0.0,
    "log_slope_budget": 1.0,
    "window": 0.1,
    "smoothing_r0": 4.0,
    "smoothing_rolloff": "smoothstep",
    "psi_profile": "zero",
    "psi_amplitude": 0.0,
    "beta_profile": "constant",
    "beta_rate": 0.0,
    "seed": 0,
    "lift_tol": 1e-9,
    "snapshot_times": "",
}


class RunConfig:
    """Resolved configuration: typed values plus the derived model objects."""

    def __init__(self, values):
        self.values = dict(values)
        self.hash = _content_hash(self.values)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def seed(self):
        return int(self.values["seed"])

    def background(self):
        return build_background(self.values)

    def flow_grid(self):
        v = self.values
        return FlowGrid(
            phi_min=v["phi_min"],
            phi_max=v["phi_max"],
            n_phi=v["n_phi"],
            k_min=v["k_min"],
            k_max=v["k_max"],
            n_k=v["n_k"],
        )

    def solver_params(self):
        v = self.values
        return SolverParams(
            c_step=v["c_step"],
            dt=v["dt"],
            t_max=v["t_end"],
            tol=v["tol"],
            patience=v["patience"],
            sigma_floor=v["sigma_floor"],
            log_slope_budget=v["log_slope_budget"],
            window=v["window"],
            smoothing=SmoothingSchedule(
                r0=v["smoothing_r0"], rolloff=v["smoothing_rolloff"]
            ),
            newton_max_iter=v["newton_max_iter"],
            newton_tol=v["newton_tol"],
            lift_tol=v["lift_tol"],
        )

    def boundary_data(self, grid):
        """(psi, (beta_left, beta_right)) arrays from the configured profiles."""
        v = self.values
        phi_hat = (grid.phi - grid.phi_min) / (grid.phi_max - grid.phi_min)
        amp = v["psi_amplitude"]
        profile = v["psi_profile"]
        if profile == "zero":
            psi = np.zeros(grid.n_phi)
        elif profile == "sine":
            psi = amp * np.sin(np.pi * phi_hat)
        elif profile == "quadratic":
            psi = amp * 4.0 * phi_hat * (1.0 - phi_hat)
        elif profile == "gauss":
            psi = amp * np.exp(-(((phi_hat - 0.5) / 0.2) ** 2))
        else:
            raise ConfigurationError(f"unknown psi profile '{profile}'")

        ramp = grid.k - grid.k_min
        if v["beta_profile"] == "constant":
            beta_left = np.full(grid.n_k, psi[0])
            beta_right = np.full(grid.n_k, psi[-1])
        elif v["beta_profile"] == "ramp":
            beta_left = psi[0] + v["beta_rate"] * ramp
            beta_right = psi[-1] + v["beta_rate"] * ramp
        else:
            raise ConfigurationError(f"unknown beta profile '{v['beta_profile']}'")
        return psi, (beta_left, beta_right)

    def snapshot_times(self):
        raw = str(self.values.get("snapshot_times", "")).strip()
        if not raw:
            return []
        return [float(x) for x in raw.split(",") if x.strip()]


def _content_hash(values):
    lines = []
    for key in sorted(values):
        val = values[key]
        if isinstance(val, float):
            rep = repr(val)
        else:
            rep = str(val)
        lines.append(f"{key}={rep}")
    digest = hashlib.sha256("\n".join(lines).encode()).hexdigest()
    return digest[:16]


def load_config(path):
    """Parse and validate an INI run configuration; environment seed override."""
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc

    values = dict(_DEFAULTS)
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key in _FLOAT_KEYS:
                values[key] = float(raw)
            elif key in _INT_KEYS:
                values[key] = int(raw)
            elif key in _STR_KEYS:
                values[key] = raw.strip()
            else:
                raise ConfigurationError(f"unknown config key '{key}' in [{section}]")

    env_seed = os.environ.get("CSFLOW_SEED")
    if env_seed:
        values["seed"] = int(env_seed)

    missing = [k for k in ("l", "m0", "n_modes", "n_t", "t_min", "t_max", "t1",
                           "t2", "plateau_fraction", "epsilon", "phi_min",
                           "phi_max", "n_phi", "k_min", "k_max", "n_k")
               if k not in values]
    if missing:
        raise ConfigurationError(f"missing required config keys: {missing}")
    return RunConfig(values)
