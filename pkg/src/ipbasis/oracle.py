"""Ground-truth solutions, observation sampling and noise injection."""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from .problems import ProblemSpec, qho_initial_condition

DATASET_HEADER = "# ipbasis-dataset v1"


class SolverDivergenceError(FloatingPointError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite state at step {step}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # [n_times, *state_shape]

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


@dataclass
class WaveField:
    x_grid: np.ndarray
    t_grid: np.ndarray
    psi_re: np.ndarray  # [n_t, n_x]
    psi_im: np.ndarray

    def norms(self):
        dx = self.x_grid[1] - self.x_grid[0]
        return (self.psi_re ** 2 + self.psi_im ** 2).sum(axis=1) * dx


@dataclass
class ObservationSet:
    points: np.ndarray  # [n_obs, input_dim]; spatial column first for PDEs
    values: np.ndarray  # [n_obs, d]
    noise_scale: float = 0.0
    seed: int | None = None
    complex_valued: bool = False

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.points), -1)
        if len(self.points) < 1:
            raise ValueError("an observation set needs at least one point")


# --------------------------------------------------------------------------
# ODEs

def rk4_solve(rhs, ic, t_span, n_steps) -> Trajectory:
    """Classical fixed-step RK4; ``rhs(t, y)`` may act on batched states."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    t0, t1 = t_span
    h = (t1 - t0) / n_steps
    y = np.array(ic, dtype=np.float64)
    out = np.empty((n_steps + 1,) + y.shape)
    out[0] = y
    for n in range(n_steps):
        t = t0 + n * h
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise SolverDivergenceError(n + 1)
        out[n + 1] = y
    return Trajectory(t0 + h * np.arange(n_steps + 1), out)


def dho_rhs(params):
    """State ``(x, v)``; ``params[..., :] = (alpha, beta, f)``."""
    p = np.asarray(params, dtype=np.float64)
    a, b, f = p[..., 0], p[..., 1], p[..., 2]

    def rhs(t, y):
        x, v = y[..., 0], y[..., 1]
        return np.stack([v, f - a * v - b * x], axis=-1)

    return rhs


def lv_rhs(params):
    p = np.asarray(params, dtype=np.float64)
    a, b, g, d = p[..., 0], p[..., 1], p[..., 2], p[..., 3]

    def rhs(t, y):
        x, yy = y[..., 0], y[..., 1]
        return np.stack([a * x - b * x * yy, -g * yy + d * x * yy], axis=-1)

    return rhs


# --------------------------------------------------------------------------
# Schrodinger

def crank_nicolson_qho(k, x_grid, t_grid, ic=qho_initial_condition) -> WaveField:
    """Crank-Nicolson propagation of ``i psi_t = -0.5 psi_xx + 0.5 k x^2 psi``.

    ``x_grid = (lo, hi, n_x)`` includes the Dirichlet-zero boundary nodes;
    ``t_grid = (0, T, n_t)`` counts stored time levels including ``t=0``.
    """
    lo, hi, n_x = x_grid
    t0, T, n_t = t_grid
    if n_x < 3 or n_t < 1:
        raise ValueError("need n_x >= 3 and n_t >= 1")
    x = np.linspace(lo, hi, int(n_x))
    t = np.linspace(t0, T, int(n_t))
    dx = x[1] - x[0]
    dt = t[1] - t[0] if n_t > 1 else 0.0
    xi = x[1:-1]
    m = len(xi)
    diag = 1.0 / dx ** 2 + 0.5 * k * xi ** 2
    off = -0.5 / dx ** 2
    c = 0.5j * dt
    ab = np.zeros((3, m), dtype=complex)
    ab[0, 1:] = c * off
    ab[1, :] = 1.0 + c * diag
    ab[2, :-1] = c * off

    re0, im0 = ic(x)
    psi = (np.asarray(re0) + 1j * np.asarray(im0))[1:-1].astype(complex)
    field = np.zeros((int(n_t), int(n_x)), dtype=complex)
    field[0, 1:-1] = psi
    for n in range(1, int(n_t)):
        h_psi = diag * psi
        h_psi[1:] += off * psi[:-1]
        h_psi[:-1] += off * psi[1:]
        rhs = psi - c * h_psi
        try:
            psi = scipy.linalg.solve_banded((1, 1), ab, rhs, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise FloatingPointError(f"singular Crank-Nicolson solve at step {n}") from exc
        field[n, 1:-1] = psi
    return WaveField(x, t, field.real.copy(), field.imag.copy())


# --------------------------------------------------------------------------
# ground truth for specs

def even_steps(base_steps, n_obs):
    """Smallest multiple of ``n_obs - 1`` that is at least ``base_steps``."""
    if n_obs <= 1:
        return base_steps
    return int(math.ceil(base_steps / (n_obs - 1)) * (n_obs - 1))


def solve_spec(spec: ProblemSpec, params, ics, n_steps) -> Trajectory:
    """Batched truth trajectories for ODE specs; states ``[n_times, n, d]``."""
    if spec.name == "dho":
        traj = rk4_solve(dho_rhs(params), ics, spec.t_span, n_steps)
        return traj
    if spec.name in ("lv", "lv_upinn"):
        return rk4_solve(lv_rhs(params), ics, spec.t_span, n_steps)
    raise ValueError(f"no ODE solver for spec '{spec.name}'")


def qho_truth(k, n_x=400, n_t=1500, spec=None) -> WaveField:
    x_span = spec.x_span if spec is not None else (-5.0, 5.0)
    t_span = spec.t_span if spec is not None else (0.0, 1.5)
    return crank_nicolson_qho(k, (x_span[0], x_span[1], n_x), (t_span[0], t_span[1], n_t))


# --------------------------------------------------------------------------
# observations

def _pick(n_avail, n_obs, layout, rng):
    if n_obs > n_avail:
        raise ValueError(f"requested {n_obs} observations from {n_avail} nodes")
    if layout in ("even", "evenly-spaced"):
        idx = np.linspace(0, n_avail - 1, n_obs)
        return np.round(idx).astype(int)
    if layout == "random":
        return np.sort(rng.choice(n_avail, size=n_obs, replace=False))
    raise ValueError(f"unknown layout '{layout}'")


def sample_observations(source, n_obs, layout="even", seed=0, component=None) -> ObservationSet:
    """Read observations at grid nodes of a trajectory or wave field.

    For trajectories the value columns are the solution components; for DHO
    the state is ``(x, v)`` and only position is observed, so pass
    ``component=slice(0, 1)``.
    """
    rng = np.random.default_rng(seed)
    if isinstance(source, Trajectory):
        if len(source.times) == 0:
            raise ValueError("empty trajectory")
        idx = _pick(len(source.times), n_obs, layout, rng)
        vals = source.states[idx]
        if component is not None:
            vals = vals[..., component]
        return ObservationSet(source.times[idx][:, None], vals, seed=seed)
    if isinstance(source, WaveField):
        n_t, n_x = source.psi_re.shape
        if n_t * n_x == 0:
            raise ValueError("empty wave field")
        flat = _pick(n_t * n_x, n_obs, layout, rng)
        it, ix = np.divmod(flat, n_x)
        pts = np.column_stack([source.x_grid[ix], source.t_grid[it]])
        vals = np.column_stack([source.psi_re[it, ix], source.psi_im[it, ix]])
        return ObservationSet(pts, vals, seed=seed, complex_valued=True)
    raise TypeError(f"cannot sample from {type(source).__name__}")


def inject_noise(obs: ObservationSet, scale: float, seed=0) -> ObservationSet:
    """Add uniform noise of amplitude ``scale * M``; ``M`` is the max modulus of the set."""
    if scale < 0:
        raise ValueError("noise scale must be non-negative")
    if scale > 1:
        warnings.warn(f"noise scale {scale} exceeds 1", stacklevel=2)
    if scale == 0:
        return replace(obs, points=obs.points.copy(), values=obs.values.copy(), noise_scale=0.0, seed=seed)
    if obs.complex_valued:
        M = float(np.sqrt((obs.values ** 2).sum(axis=1)).max())
    else:
        M = float(np.abs(obs.values).max())
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-1.0, 1.0, size=obs.values.shape) * scale * M
    return replace(obs, points=obs.points.copy(), values=obs.values + noise, noise_scale=scale, seed=seed)


# --------------------------------------------------------------------------
# dataset files

def _fmt(v):
    return format(float(v), ".17g")


def write_dataset(path, observations, sidecar: dict):
    """CSV of all readouts plus ``<path>.json`` holding the answer key."""
    path = Path(path)
    spatial = observations[0].points.shape[1] == 2
    d = observations[0].values.shape[1]
    buf = io.StringIO()
    buf.write(DATASET_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["readout_id", "t"] + (["x"] if spatial else []) + [f"v{c}" for c in range(d)])
    for rid, obs in enumerate(observations):
        for p, v in zip(obs.points, obs.values):
            coords = [p[1], p[0]] if spatial else [p[0]]
            w.writerow([rid] + [_fmt(c) for c in coords] + [_fmt(x) for x in v])
    path.write_text(buf.getvalue(), encoding="utf-8")
    sidecar_path = sidecar_for(path)
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, sidecar_path


def sidecar_for(path):
    path = Path(path)
    return path.with_suffix(path.suffix + ".json")


def read_dataset(path):
    """Return ``(observations, sidecar)``; the sidecar may be ``None``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    first, _, rest = text.partition("\n")
    if first.strip() != DATASET_HEADER:
        raise ValueError(f"{path}: missing dataset header")
    rows = list(csv.reader(io.StringIO(rest)))
    cols = rows[0]
    spatial = "x" in cols
    data = np.array([[float(c) for c in r] for r in rows[1:]])
    ids = data[:, 0].astype(int)
    sidecar = None
    sc = sidecar_for(path)
    if sc.exists():
        sidecar = json.loads(sc.read_text(encoding="utf-8"))
    complex_valued = bool(sidecar and sidecar.get("complex_valued"))
    noise = float(sidecar.get("noise_scale", 0.0)) if sidecar else 0.0
    observations = []
    for rid in np.unique(ids):
        block = data[ids == rid]
        if spatial:
            pts = np.column_stack([block[:, 2], block[:, 1]])
            vals = block[:, 3:]
        else:
            pts = block[:, 1:2]
            vals = block[:, 2:]
        observations.append(ObservationSet(pts, vals, noise_scale=noise, complex_valued=complex_valued))
    return observations, sidecar
