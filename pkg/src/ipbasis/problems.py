"""Parametric differential equations used by the benchmarks.

Each residual operator works on arrays whose last axis indexes solution
components; leading axes broadcast (``[n_points, n_readouts, d]`` in the
training code).  Alongside every residual there is a function returning its
pointwise partial derivatives, which the loss code contracts with residual
adjoints.  All residuals are at most bilinear in their inputs, so the
partials are written out by hand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .network import NetworkArch


class UnknownSpecError(KeyError):
    pass


class MissingFieldError(ValueError):
    pass


# --------------------------------------------------------------------------
# schedules

@dataclass(frozen=True)
class WeightSchedule:
    """Piecewise value of a loss weight (or learning rate) over epochs.

    ``steps`` multiply the value by ``factor`` from ``epoch`` onwards;
    ``ramp = (e0, e1, v1)`` interpolates linearly from the base value at
    ``e0`` to ``v1`` at ``e1``.  Both may be combined; steps apply on top.
    """
    value: float
    steps: tuple = ()
    ramp: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple((int(e), float(f)) for e, f in self.steps))
        if self.ramp is not None:
            e0, e1, v1 = self.ramp
            if e1 <= e0:
                raise ValueError("ramp end must follow ramp start")
            object.__setattr__(self, "ramp", (int(e0), int(e1), float(v1)))
        if self.value < 0 or any(f < 0 for _, f in self.steps) or (self.ramp and self.ramp[2] < 0):
            raise ValueError("schedule values must be non-negative")

    def __call__(self, epoch: int) -> float:
        v = float(self.value)
        if self.ramp is not None:
            e0, e1, v1 = self.ramp
            if epoch >= e1:
                v = v1
            elif epoch > e0:
                v = v + (v1 - v) * (epoch - e0) / (e1 - e0)
        for e, f in self.steps:
            if epoch >= e:
                v *= f
        return v

    def scaled(self, factor: float) -> "WeightSchedule":
        """Same shape with every breakpoint epoch multiplied by ``factor``."""
        steps = tuple((int(round(e * factor)), f) for e, f in self.steps)
        ramp = None
        if self.ramp is not None:
            e0, e1, v1 = self.ramp
            e0, e1 = int(round(e0 * factor)), int(round(e1 * factor))
            ramp = (e0, max(e1, e0 + 1), v1)
        return WeightSchedule(self.value, steps, ramp)

    @classmethod
    def parse(cls, obj) -> "WeightSchedule":
        if isinstance(obj, WeightSchedule):
            return obj
        if isinstance(obj, (int, float)):
            return cls(float(obj))
        if isinstance(obj, dict):
            extra = set(obj) - {"value", "steps", "ramp"}
            if extra:
                raise KeyError(f"unknown schedule keys {sorted(extra)}")
            ramp = obj.get("ramp")
            return cls(float(obj["value"]), tuple(tuple(s) for s in obj.get("steps", ())),
                       tuple(ramp) if ramp is not None else None)
        raise TypeError(f"cannot build a schedule from {obj!r}")

    def to_config(self):
        if not self.steps and self.ramp is None:
            return self.value
        d = {"value": self.value}
        if self.steps:
            d["steps"] = [list(s) for s in self.steps]
        if self.ramp is not None:
            d["ramp"] = list(self.ramp)
        return d


# --------------------------------------------------------------------------
# residuals

@dataclass
class ResidualInput:
    value: np.ndarray
    params: np.ndarray
    d_t: np.ndarray | None = None
    d_tt: np.ndarray | None = None
    d_xx: np.ndarray | None = None
    x: np.ndarray | None = None
    unknown_terms: np.ndarray | None = None

    def need(self, *names):
        for n in names:
            if getattr(self, n) is None:
                raise MissingFieldError(f"residual needs field '{n}'")


def _p(inp, k):
    return np.asarray(inp.params, dtype=np.float64)[..., k]


def _arr(a):
    return np.asarray(a, dtype=np.float64)


def residual_dho(inp: ResidualInput):
    """``x'' + alpha x' + beta x - f``; params ``(alpha, beta, f)``."""
    inp.need("d_tt", "d_t")
    a, b, f = _p(inp, 0), _p(inp, 1), _p(inp, 2)
    r = _arr(inp.d_tt)[..., 0] + a * _arr(inp.d_t)[..., 0] + b * _arr(inp.value)[..., 0] - f
    return r[..., None]


def partials_dho(inp: ResidualInput):
    a, b = _p(inp, 0), _p(inp, 1)
    one = np.ones_like(a)
    return {
        "value": b[..., None, None],
        "d_t": a[..., None, None],
        "d_tt": one[..., None, None],
        "params": np.stack(
            np.broadcast_arrays(_arr(inp.d_t)[..., 0], _arr(inp.value)[..., 0], -1.0), axis=-1
        )[..., None, :],
    }


def residual_lv(inp: ResidualInput):
    """Predator-prey residuals.

    Parametric mode: params ``(alpha, beta, gamma, delta)``.  With
    ``unknown_terms`` present the interaction terms ``beta*x*y`` and
    ``delta*x*y`` are taken from it and params are ``(alpha, gamma)``.
    """
    inp.need("d_t")
    v, dt = _arr(inp.value), _arr(inp.d_t)
    x, y = v[..., 0], v[..., 1]
    if inp.unknown_terms is not None:
        u = _arr(inp.unknown_terms)
        a, g = _p(inp, 0), _p(inp, 1)
        bxy, dxy = u[..., 0], u[..., 1]
    else:
        a, b, g, d = _p(inp, 0), _p(inp, 1), _p(inp, 2), _p(inp, 3)
        bxy, dxy = b * x * y, d * x * y
    r1 = dt[..., 0] - a * x + bxy
    r2 = dt[..., 1] + g * y - dxy
    return np.stack([r1, r2], axis=-1)


def partials_lv(inp: ResidualInput):
    v = _arr(inp.value)
    x, y = v[..., 0], v[..., 1]
    shape = np.broadcast_shapes(x.shape, np.shape(_p(inp, 0)))
    z = np.zeros(shape)
    x, y = np.broadcast_to(x, shape), np.broadcast_to(y, shape)
    eye = np.eye(2)
    out = {"d_t": eye}
    if inp.unknown_terms is not None:
        a, g = np.broadcast_to(_p(inp, 0), shape), np.broadcast_to(_p(inp, 1), shape)
        out["value"] = np.stack([np.stack([-a, z], -1), np.stack([z, g], -1)], -2)
        out["params"] = np.stack([np.stack([-x, z], -1), np.stack([z, y], -1)], -2)
        out["unknown_terms"] = np.array([[1.0, 0.0], [0.0, -1.0]])
    else:
        a, b, g, d = (np.broadcast_to(_p(inp, k), shape) for k in range(4))
        out["value"] = np.stack([np.stack([-a + b * y, b * x], -1),
                                 np.stack([-d * y, g - d * x], -1)], -2)
        xy = x * y
        out["params"] = np.stack([np.stack([-x, xy, z, z], -1),
                                  np.stack([z, z, y, -xy], -1)], -2)
    return out


def residual_qho(inp: ResidualInput):
    """Real/imaginary split of ``i psi_t = -0.5 psi_xx + 0.5 k x^2 psi``."""
    inp.need("d_t", "d_xx", "x")
    v, dt, dxx = _arr(inp.value), _arr(inp.d_t), _arr(inp.d_xx)
    pot = 0.5 * _p(inp, 0) * _arr(inp.x) ** 2
    r_re = -dt[..., 1] + 0.5 * dxx[..., 0] - pot * v[..., 0]
    r_im = dt[..., 0] + 0.5 * dxx[..., 1] - pot * v[..., 1]
    return np.stack([r_re, r_im], axis=-1)


def partials_qho(inp: ResidualInput):
    v = _arr(inp.value)
    x2 = _arr(inp.x) ** 2
    pot = 0.5 * _p(inp, 0) * x2
    pot = np.broadcast_to(pot, np.broadcast_shapes(pot.shape, v.shape[:-1]))
    z = np.zeros_like(pot)
    return {
        "value": np.stack([np.stack([-pot, z], -1), np.stack([z, -pot], -1)], -2),
        "d_t": np.array([[0.0, -1.0], [1.0, 0.0]]),
        "d_xx": 0.5 * np.eye(2),
        "params": np.stack([-0.5 * x2 * v[..., 0], -0.5 * x2 * v[..., 1]], -1)[..., None],
    }


QHO_SIGMA = 0.5
QHO_WAVENUMBER = 0.1
QHO_CENTER = -2.0


def qho_initial_condition(x):
    """Gaussian packet centred at -2 with width 0.5 and wave number 0.1."""
    x = np.asarray(x, dtype=np.float64)
    amp = 1.0 / (QHO_SIGMA * math.sqrt(math.pi))
    g = amp * np.exp(-((x - QHO_CENTER) ** 2) / (2.0 * QHO_SIGMA ** 2))
    return g * np.cos(QHO_WAVENUMBER * x), g * np.sin(QHO_WAVENUMBER * x)


# --------------------------------------------------------------------------
# unknown-term networks

class UnknownTermNet:
    """Independent small tanh MLPs ``state -> scalar``, one per (query, term).

    Weights are stacked along a leading group axis ``g = q * n_terms + t`` so
    all sub-networks run in one batched pass.
    """

    def __init__(self, weights, biases, n_queries, n_terms):
        self.weights = weights
        self.biases = biases
        self.n_queries = n_queries
        self.n_terms = n_terms

    @classmethod
    def init(cls, n_queries, n_terms=2, input_dim=2, widths=(32, 32), seed=0):
        rng = np.random.default_rng(seed)
        sizes = (input_dim,) + tuple(widths) + (1,)
        G = n_queries * n_terms
        weights, biases = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (a + b))
            weights.append(rng.uniform(-lim, lim, size=(G, a, b)))
            biases.append(np.zeros((G, b)))
        return cls(weights, biases, n_queries, n_terms)

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return UnknownTermNet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                              self.n_queries, self.n_terms)

    def forward(self, state, tape=None):
        """``state [N, Q, d] -> [N, Q, n_terms]``."""
        N, Q, d = state.shape
        # group-major layout [G, N, width] so every layer is one batched matmul
        a = np.repeat(state.transpose(1, 0, 2), self.n_terms, axis=0)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if tape is not None:
                tape.append(a)
            z = a @ w + b[:, None, :]
            a = z if k == last else np.tanh(z)
        return a[..., 0].reshape(Q, self.n_terms, N).transpose(2, 0, 1)

    def backward(self, bar, tape):
        """Return ``(grads, state_bar)`` for output adjoint ``bar [N, Q, n_terms]``."""
        N, Q, T = bar.shape
        g = bar.transpose(1, 2, 0).reshape(Q * T, N, 1)
        gw, gb = [None] * len(self.weights), [None] * len(self.weights)
        last = len(self.weights) - 1
        for k in range(last, -1, -1):
            a_in = tape[k]
            if k != last:
                act = tape[k + 1]
                g = g * (1.0 - act * act)
            gw[k] = a_in.transpose(0, 2, 1) @ g
            gb[k] = g.sum(axis=1)
            g = g @ self.weights[k].transpose(0, 2, 1)
        state_bar = g.reshape(Q, T, N, -1).sum(axis=1).transpose(1, 0, 2)
        grads = []
        for w, b in zip(gw, gb):
            grads += [w, b]
        return grads, state_bar


# --------------------------------------------------------------------------
# problem specs

@dataclass(frozen=True)
class ProblemSpec:
    name: str
    input_dim: int
    solution_dim: int
    param_names: tuple
    param_ranges: tuple
    ic_names: tuple
    ic_ranges: tuple
    t_span: tuple
    x_span: tuple | None
    n_collocation: tuple
    arch: NetworkArch
    passes: dict
    residual: Callable
    partials: Callable
    loss_weights: dict
    n_residuals: int
    trainable: tuple
    unknown_terms: int = 0
    readout_params: tuple | None = None
    truth_params: tuple | None = None

    def __post_init__(self):
        for lo, hi in tuple(self.param_ranges) + tuple(self.ic_ranges):
            if lo > hi:
                raise ValueError(f"{self.name}: range ({lo}, {hi}) has lo > hi")
        if min(self.n_collocation) < 1:
            raise ValueError("collocation counts must be >= 1")
        if not self.passes.get("colloc"):
            raise ValueError("derivative requirements must be non-empty")

    @property
    def param_dim(self):
        return len(self.param_names)

    @property
    def time_index(self):
        return self.input_dim - 1

    def with_overrides(self, **kw) -> "ProblemSpec":
        return replace(self, **kw)

    # point sets ----------------------------------------------------------
    def collocation_points(self):
        t = np.linspace(*self.t_span, self.n_collocation[-1])
        if self.input_dim == 1:
            return t[:, None]
        x = np.linspace(*self.x_span, self.n_collocation[0])
        X, T = np.meshgrid(x, t, indexing="ij")
        return np.column_stack([X.ravel(), T.ravel()])

    def ic_points(self):
        if self.input_dim == 1:
            return np.array([[self.t_span[0]]])
        x = np.linspace(*self.x_span, self.n_collocation[0])
        return np.column_stack([x, np.full_like(x, self.t_span[0])])

    def bc_points(self):
        if self.input_dim == 1:
            return None
        t = np.linspace(*self.t_span, self.n_collocation[-1])
        lo, hi = self.x_span
        return np.vstack([np.column_stack([np.full_like(t, lo), t]),
                          np.column_stack([np.full_like(t, hi), t])])

    def ic_targets(self, ics, points):
        """Target fields at IC points for readouts with initial conditions ``ics``."""
        n = len(ics) if ics is not None else 0
        if self.name == "qho":
            re, im = qho_initial_condition(points[:, 0])
            val = np.stack([re, im], -1)[:, None, :]
            return {"value": val}
        ics = np.asarray(ics, dtype=np.float64)
        if self.name == "dho":
            return {"value": ics[None, :, 0:1], "d_t": ics[None, :, 1:2]}
        return {"value": ics[None, :, :].reshape(1, n, self.solution_dim)}

    def bc_targets(self, points):
        if points is None:
            return None
        return {"value": np.zeros((len(points), 1, self.solution_dim))}

    def residual_input(self, fields, params, coords, unknown=None):
        return ResidualInput(
            value=fields["value"], params=params, d_t=fields.get("d_t"),
            d_tt=fields.get("d_tt"), d_xx=fields.get("d_xx"),
            x=coords[:, 0:1] if self.input_dim > 1 else None, unknown_terms=unknown,
        )

    def midpoint(self):
        return np.array([(lo + hi) / 2.0 for lo, hi in self.param_ranges])


def sample_parameters(spec: ProblemSpec, n: int, seed, param_ranges=None, ic_ranges=None):
    """I.i.d. uniform parameter vectors and initial conditions.

    Returns ``(params [n, P], ics [n, n_ic] or None)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pr = param_ranges if param_ranges is not None else spec.param_ranges
    ir = ic_ranges if ic_ranges is not None else spec.ic_ranges
    if len(pr) != spec.param_dim:
        raise ValueError(f"{spec.name}: expected {spec.param_dim} parameter ranges")
    lo, hi = np.array(pr, dtype=np.float64).T
    params = rng.uniform(lo, hi, size=(n, len(pr)))
    ics = None
    if ir:
        lo, hi = np.array(ir, dtype=np.float64).T
        ics = rng.uniform(lo, hi, size=(n, len(ir)))
    return params, ics


def _dho():
    return ProblemSpec(
        name="dho", input_dim=1, solution_dim=1,
        param_names=("alpha", "beta", "f"),
        param_ranges=((0.0, 1.5), (0.0, 1.5), (-1.5, 1.5)),
        ic_names=("x0", "v0"), ic_ranges=((-5.0, 5.0), (-5.0, 5.0)),
        t_span=(0.0, 3.0), x_span=None, n_collocation=(30,),
        arch=NetworkArch(1, (40,) * 4, 40),
        passes={
            "colloc": [(0, 0, {"re": "value", "e1": "d_t", "e12": "d_tt"})],
            "ic": [(0, 0, {"re": "value", "e1": "d_t"})],
            "data": [(None, None, {"re": "value"})],
        },
        residual=residual_dho, partials=partials_dho,
        loss_weights={"pde": WeightSchedule(1.0), "ic": WeightSchedule(1.0),
                      "bc": WeightSchedule(0.0), "data": WeightSchedule(0.0)},
        n_residuals=1, trainable=(True, True, False),
    )


def _lv(upinn=False):
    base = dict(
        input_dim=1, solution_dim=2,
        ic_names=("x0", "y0"), ic_ranges=((0.0, 2.0), (0.0, 2.0)),
        t_span=(0.0, 10.0), x_span=None, n_collocation=(1000,),
        arch=NetworkArch(1, (64,) * 4, 64),
        passes={
            "colloc": [(0, 0, {"re": "value", "e1": "d_t"})],
            "ic": [(None, None, {"re": "value"})],
            "data": [(None, None, {"re": "value"})],
        },
        residual=residual_lv, partials=partials_lv,
        loss_weights={"pde": WeightSchedule(1.0), "ic": WeightSchedule(1.0),
                      "bc": WeightSchedule(0.0), "data": WeightSchedule(1.0)},
        n_residuals=2,
    )
    full = (("alpha", "beta", "gamma", "delta"), ((0.5, 1.5),) * 4)
    if not upinn:
        return ProblemSpec(name="lv", param_names=full[0], param_ranges=full[1],
                           trainable=(True,) * 4, **base)
    return ProblemSpec(name="lv_upinn", param_names=("alpha", "gamma"),
                       param_ranges=((0.5, 1.5),) * 2, trainable=(False, False),
                       unknown_terms=2, truth_params=full, **base)


def _qho():
    steps = tuple((e, 0.5) for e in (1000, 1500, 2000, 2500, 3000))
    return ProblemSpec(
        name="qho", input_dim=2, solution_dim=2,
        param_names=("k",), param_ranges=((0.0, 5.0),),
        ic_names=(), ic_ranges=(),
        t_span=(0.0, 1.5), x_span=(-5.0, 5.0), n_collocation=(100, 100),
        arch=NetworkArch(2, (100,) * 5, 100),
        passes={
            "colloc": [(0, 0, {"re": "value", "e12": "d_xx"}), (1, 1, {"e1": "d_t"})],
            "ic": [(None, None, {"re": "value"})],
            "bc": [(None, None, {"re": "value"})],
            "data": [(None, None, {"re": "value"})],
        },
        residual=residual_qho, partials=partials_qho,
        loss_weights={"pde": WeightSchedule(5e-4, ramp=(1000, 3000, 5e-2)),
                      "ic": WeightSchedule(1.0), "bc": WeightSchedule(1e-3),
                      "data": WeightSchedule(1.0, steps=steps)},
        n_residuals=2, trainable=(True,),
        readout_params=tuple((float(k),) for k in range(6)),
    )


_BUILDERS = {"dho": _dho, "lv": _lv, "lv_upinn": lambda: _lv(upinn=True), "qho": _qho}


def builtin_specs() -> dict:
    return {name: build() for name, build in _BUILDERS.items()}


def get_spec(name: str) -> ProblemSpec:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise UnknownSpecError(f"unknown problem spec '{name}' (known: {', '.join(_BUILDERS)})") from None
