"""Online inverse phase on a frozen basis network.

The frozen body's values and input derivatives are computed once on every
point set.  Each training step then uses only readout matrix products:
trainables are a fresh readout (one column block per query), the parameter
estimates and, in UPINN mode, one unknown-term network per query and term.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .loss import TERMS, field_loss, readout_backward, readout_fields
from .network import MlpParams, ReadoutLayer, compute_features, init_readout
from .offline import base_points, stack_observations
from .optim import Adam
from .problems import ProblemSpec, UnknownTermNet, WeightSchedule


@dataclass
class PrecomputedBasis:
    points: dict
    features: dict  # set -> field -> [n_points, n_basis]

    @property
    def n_basis(self):
        return next(iter(self.features["colloc"].values())).shape[1]


def precompute_basis(R: MlpParams, spec: ProblemSpec, points: dict) -> PrecomputedBasis:
    if R.weights[0].shape[0] != spec.input_dim:
        from .network import ShapeMismatchError
        raise ShapeMismatchError(f"network input dim {R.weights[0].shape[0]} does not match spec {spec.name}")
    feats = compute_features(R, points, spec.passes)
    return PrecomputedBasis({k: np.array(v) for k, v in points.items()}, feats)


@dataclass
class InverseQuery:
    """A batch of inverse problems solved simultaneously."""
    observations: list
    epochs: int = 15000
    lr: object = 5e-2
    weights: dict = field(default_factory=lambda: {"data": 1.0, "pde": 1e-3})
    seed: int = 0
    mode: str = "parametric"
    known_params: np.ndarray | None = None  # [Q, P]; trainable columns ignored
    initial_guess: np.ndarray | None = None  # [P_trainable] or [Q, P_trainable]; default midpoint
    param_ranges: tuple | None = None
    unknown_widths: tuple = (32, 32)

    def __post_init__(self):
        if not self.observations:
            raise ValueError("an inverse query needs observations")
        if self.mode not in ("parametric", "upinn"):
            raise ValueError(f"unknown mode '{self.mode}'")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class InverseResult:
    readout: ReadoutLayer
    estimates: np.ndarray  # [Q, P] full parameter vectors
    unknown_net: UnknownTermNet | None
    final_loss: float
    terms: dict
    per_query: dict  # term -> [Q]
    metrics: dict | None
    ms: float
    loss_history: list


def _targets(spec, basis, observations, query):
    pts, vals = stack_observations(observations)
    targets = {"data": {"value": vals}}
    if "bc" in basis.points:
        targets["bc"] = spec.bc_targets(basis.points["bc"])
    if spec.name == "qho":
        targets["ic"] = spec.ic_targets(None, basis.points["ic"])
    return targets


def online_points(spec: ProblemSpec, observations):
    pts = base_points(spec)
    pts["data"], _ = stack_observations(observations)
    return pts


def online_loss(basis: PrecomputedBasis, L: ReadoutLayer, estimates, spec: ProblemSpec, weights,
                targets, unknown=None, per_readout=False):
    """Online loss from stored basis arrays; returns ``(total, terms)``.

    ``unknown`` is either an array of unknown-term values at the collocation
    points or an :class:`UnknownTermNet` evaluated on the predicted state.
    """
    fields = readout_fields(basis.features, L)
    if isinstance(unknown, UnknownTermNet):
        n, d = L.n_readouts, L.solution_dim
        state = fields["colloc"]["value"].reshape(-1, n, d)
        unknown = unknown.forward(state)
    total, terms, _ = field_loss(spec, fields, estimates, basis.points, targets, weights,
                                 unknown=unknown, grad=False, per_readout=per_readout)
    return total, terms


def _value_and_grad(basis, L, estimates, spec, weights, targets, net, epoch):
    fields = readout_fields(basis.features, L)
    n, d = L.n_readouts, L.solution_dim
    tape, unknown = None, None
    if net is not None:
        tape = []
        state = fields["colloc"]["value"].reshape(-1, n, d)
        unknown = net.forward(state, tape)
    total, terms, bars = field_loss(spec, fields, estimates, basis.points, targets, weights,
                                    unknown=unknown, epoch=epoch)
    net_grads = None
    if net is not None:
        ubar = bars["unknown"]
        if ubar is None:
            ubar = np.zeros_like(unknown)
        net_grads, state_bar = net.backward(ubar, tape)
        fb = bars["fields"].setdefault("colloc", {})
        flat = state_bar.reshape(state_bar.shape[0], n * d)
        fb["value"] = fb["value"] + flat if "value" in fb else flat
    gw, gb, _ = readout_backward(basis.features, L, bars["fields"], need_feature_bars=False)
    return total, terms, gw, gb, bars["params"], net_grads


def online_infer(source, query: InverseQuery, spec: ProblemSpec, answer_key=None) -> InverseResult:
    """Fit a fresh readout plus parameter estimates to every query at once.

    ``source`` is a frozen body ``R`` (basis is precomputed here) or a
    :class:`PrecomputedBasis` whose data set matches the observations.
    """
    upinn = query.mode == "upinn"
    if upinn and not spec.unknown_terms:
        raise ValueError(f"spec '{spec.name}' has no unknown terms")
    Q = len(query.observations)
    d = spec.solution_dim
    if isinstance(source, PrecomputedBasis):
        basis = source
    else:
        basis = precompute_basis(source, spec, online_points(spec, query.observations))
    targets = _targets(spec, basis, query.observations, query)

    ranges = query.param_ranges or spec.param_ranges
    mid = np.array([(lo + hi) / 2.0 for lo, hi in ranges])
    train_mask = np.array(spec.trainable, dtype=bool)
    est = np.tile(mid, (Q, 1))
    if query.known_params is not None:
        known = np.asarray(query.known_params, dtype=np.float64).reshape(Q, spec.param_dim)
        est[:, ~train_mask] = known[:, ~train_mask]
    if query.initial_guess is not None:
        est[:, train_mask] = np.broadcast_to(np.asarray(query.initial_guess, dtype=np.float64),
                                             (Q, int(train_mask.sum())))
    p_train = est[:, train_mask].copy()

    L = init_readout(basis.n_basis, Q, d)
    net = UnknownTermNet.init(Q, spec.unknown_terms, d, query.unknown_widths, seed=query.seed) if upinn else None
    trainables = L.arrays() + [p_train] + (net.arrays() if net is not None else [])
    lr = WeightSchedule.parse(query.lr)
    opt = Adam(trainables, lr)
    weights = {t: WeightSchedule.parse(w) for t, w in query.weights.items()}
    for t in TERMS:
        weights.setdefault(t, WeightSchedule(0.0))
    clamp = spec.name == "qho"

    history = []
    t0 = time.perf_counter()
    for e in range(query.epochs):
        est[:, train_mask] = p_train
        w = {t: s(e) for t, s in weights.items()}
        total, _, gw, gb, gp, gnet = _value_and_grad(basis, L, est, spec, w, targets, net, e + 1)
        history.append(total)
        opt.step([gw, gb, gp[:, train_mask]] + (gnet or []), epoch=e)
        if clamp:
            np.maximum(p_train, 0.0, out=p_train)
    ms = (time.perf_counter() - t0) * 1e3
    est[:, train_mask] = p_train

    w_final = {t: s(max(query.epochs - 1, 0)) for t, s in weights.items()}
    final, terms = online_loss(basis, L, est, spec, w_final, targets, unknown=net)
    _, per_q = online_loss(basis, L, est, spec, w_final, targets, unknown=net, per_readout=True)
    metrics = None
    if answer_key is not None:
        metrics = evaluate_metrics(est, answer_key, spec, net=net, observations=query.observations)
    return InverseResult(L, est, net, final, terms, per_q, metrics, ms, history)


def online_infer_upinn(source, query: InverseQuery, spec: ProblemSpec, answer_key=None) -> InverseResult:
    query.mode = "upinn"
    return online_infer(source, query, spec, answer_key)


def evaluate_metrics(estimates, answer_key, spec: ProblemSpec, net=None, observations=None):
    """Per-parameter MSE/MAE across queries; unknown-term MMSE/MMAE in UPINN mode.

    ``answer_key`` holds the generating parameter vectors ``[Q, P_true]``.
    For UPINN specs these are the full predator-prey parameters and the
    sub-networks are scored on the observed states.
    """
    key = np.asarray(answer_key, dtype=np.float64)
    est = np.asarray(estimates, dtype=np.float64)
    if key.shape[0] != est.shape[0]:
        raise ValueError(f"answer key has {key.shape[0]} rows for {est.shape[0]} queries")
    out = {}
    if spec.unknown_terms:
        names = spec.truth_params[0]
        idx = [names.index(nm) for nm in spec.param_names]
        err = est - key[:, idx]
    else:
        names = spec.param_names
        err = est - key
    for k, nm in enumerate(spec.param_names):
        if not spec.trainable[k]:
            continue
        out[f"{nm}_mse"] = float(np.mean(err[:, k] ** 2))
        out[f"{nm}_mae"] = float(np.mean(np.abs(err[:, k])))
    if spec.unknown_terms and net is not None and observations is not None:
        pts, vals = stack_observations(observations)
        pred = net.forward(vals)
        x, y = vals[..., 0], vals[..., 1]
        beta, delta = key[:, names.index("beta")], key[:, names.index("delta")]
        true = np.stack([beta * x * y, delta * x * y], axis=-1)
        diff = pred - true
        mse_q = (diff ** 2).mean(axis=(0, 2))
        mae_q = np.abs(diff).mean(axis=(0, 2))
        out["unknown_mmse"] = float(mse_q.mean())
        out["unknown_mmae"] = float(mae_q.mean())
        out["unknown_mse_per_query"] = mse_q.tolist()
        out["unknown_mae_per_query"] = mae_q.tolist()
    return out
