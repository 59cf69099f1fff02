"""Offline training of the shared basis network.

Each epoch takes one full-batch Adam step on ``(R, L)`` for the readout
averaged PINN loss, then one Adam step on the validation readout alone using
the basis derivatives already computed for the training step.  The state
with the best monitored loss is kept and written as a checkpoint.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import oracle
from .loss import TERMS, field_loss, readout_backward, readout_fields
from .network import (
    apply_readout_hd, compute_features, features_backward, forward, forward_basis_hd,
    history_digest, init_network, init_readout, save_checkpoint,
)
from .optim import Adam
from .problems import ProblemSpec, WeightSchedule, get_spec, sample_parameters


@dataclass
class OfflineConfig:
    spec: str = "dho"
    n_readouts: int = 10
    n_validation: int = 100
    epochs: int = 30000
    lr: object = 5e-5
    val_lr: float = 3e-2
    weights: dict | None = None
    patience: int = 2000
    seed_params: int = 0
    seed_init: int = 0
    seed_data: int = 0
    data_loss: bool | None = None
    n_data: int | None = None
    n_collocation: tuple | None = None
    param_values: list | None = None
    param_ranges: list | None = None
    ic_ranges: list | None = None
    checkpoint_on: str = "auto"
    ode_steps: int | None = None
    truth_grid: tuple = (400, 1500)

    def validate(self):
        if self.n_readouts < 1:
            raise ValueError("n_readouts must be >= 1")
        if self.n_validation < 0:
            raise ValueError("n_validation must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        lr = WeightSchedule.parse(self.lr)
        if lr.value < 0 or self.val_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.checkpoint_on not in ("auto", "val", "train", "last"):
            raise ValueError(f"unknown checkpoint_on '{self.checkpoint_on}'")
        if self.param_values is not None and len(self.param_values) != self.n_readouts:
            raise ValueError("param_values must list one vector per readout")
        return self


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    terms: dict = field(default_factory=lambda: {t: [] for t in TERMS})
    ms: list = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"] + [f"train_{t}" for t in TERMS] + ["ms"])
        for e in range(len(self)):
            vl = self.val_loss[e]
            w.writerow([e + 1, repr(self.train_loss[e]), "" if vl is None else repr(vl)]
                       + [repr(self.terms[t][e]) for t in TERMS] + [f"{self.ms[e]:.3f}"])
        return buf.getvalue()

    def digest(self):
        return history_digest(self.train_loss)


@dataclass
class ReadoutSet:
    """Parameters, point sets and targets for a group of readouts."""
    params: np.ndarray
    ics: np.ndarray | None
    points: dict
    targets: dict


@dataclass
class OfflineResult:
    R: object
    L: object
    L_val: object
    history: TrainingHistory
    checkpoint: Path | None
    train_set: ReadoutSet
    val_set: ReadoutSet | None
    weights: dict
    meta: dict


def default_weights(spec: ProblemSpec, data_loss: bool):
    w = dict(spec.loss_weights)
    if not data_loss:
        w["data"] = WeightSchedule(0.0)
    elif w["data"](0) == 0.0:
        w["data"] = WeightSchedule(1.0)
    return w


def weights_at(weights, epoch):
    return {t: s(epoch) for t, s in weights.items()}


def base_points(spec: ProblemSpec):
    pts = {"colloc": spec.collocation_points(), "ic": spec.ic_points()}
    bc = spec.bc_points()
    if bc is not None:
        pts["bc"] = bc
    return pts


def data_observations(spec, params, ics, n_data, seed, ode_steps=None, truth_grid=(400, 1500),
                      layout="even", t_points=None):
    """Truth observations per readout (noise-free)."""
    if spec.input_dim == 1:
        base = ode_steps or (3000 if spec.name == "dho" else 10000)
        steps = oracle.even_steps(base, n_data) if layout == "even" else base
        truth_params = params
        traj = oracle.solve_spec(spec, truth_params, ics, steps)
        comp = slice(0, 1) if spec.name == "dho" else None
        out = []
        for q in range(len(params)):
            sub = oracle.Trajectory(traj.times, traj.states[:, q])
            out.append(oracle.sample_observations(sub, n_data, layout, seed, component=comp))
        return out
    out = []
    for p in params:
        wf = oracle.qho_truth(float(p[0]), truth_grid[0], truth_grid[1], spec)
        out.append(oracle.sample_observations(wf, n_data, "random", seed))
    return out


def stack_observations(observations):
    pts = observations[0].points
    for obs in observations[1:]:
        if obs.points.shape != pts.shape or not np.allclose(obs.points, pts, rtol=0, atol=1e-12):
            raise ValueError("all readouts must share observation locations")
    return pts, np.stack([o.values for o in observations], axis=1)


def build_readout_set(spec, params, ics, data_loss, n_data, seed_data, cfg=None) -> ReadoutSet:
    points = base_points(spec)
    targets = {"ic": spec.ic_targets(ics, points["ic"])}
    if "bc" in points:
        targets["bc"] = spec.bc_targets(points["bc"])
    if data_loss:
        obs = data_observations(spec, params, ics, n_data, seed_data,
                                ode_steps=cfg.ode_steps if cfg else None,
                                truth_grid=cfg.truth_grid if cfg else (400, 1500))
        points["data"], vals = stack_observations(obs)
        targets["data"] = {"value": vals}
    return ReadoutSet(np.asarray(params, dtype=np.float64), ics, points, targets)


def _fields_full_network(spec, R, L, points):
    """Readout fields by running the full network ``L o R`` on each point set."""
    fields = {}
    for s, plist in spec.passes.items():
        if s not in points:
            continue
        fields[s] = {}
        for i, j, mapping in plist:
            if i is None:
                fields[s][mapping["re"]] = forward(R, L, points[s])
            else:
                hd = apply_readout_hd(forward_basis_hd(R, points[s], i, j), L)
                for ch, f in mapping.items():
                    fields[s][f] = getattr(hd, ch)
    return fields


def pinn_loss(spec, R, L, params, points, weights, targets, unknown=None, per_readout=False):
    """Weighted PINN loss of ``L o R`` evaluated directly; returns ``(total, terms)``."""
    fields = _fields_full_network(spec, R, L, points)
    total, terms, _ = field_loss(spec, fields, params, points, targets, weights,
                                 unknown=unknown, grad=False, per_readout=per_readout)
    return total, terms


def pinn_loss_and_grad(spec, R, L, params, points, weights, targets, epoch=None):
    """Training loss with exact gradients for the body and the readout.

    Returns ``(total, terms, grad_R, grad_weight, grad_bias, features)``; the
    features are handed back so the validation readout can reuse them.
    """
    features, tapes = compute_features(R, points, spec.passes, keep_tape=True)
    fields = readout_fields(features, L)
    total, terms, bars = field_loss(spec, fields, params, points, targets, weights, epoch=epoch)
    gw, gb, fbars = readout_backward(features, L, bars["fields"])
    gR = features_backward(R, spec.passes, tapes, fbars, R.zeros_like())
    return total, terms, gR, gw, gb, features


def validation_loss(spec, R, L_val, val_params, points, weights, targets, features=None):
    """Loss of the validation readout; reuses ``features`` when supplied."""
    if features is None:
        features = compute_features(R, points, spec.passes)
    fields = readout_fields(features, L_val)
    total, _, _ = field_loss(spec, fields, val_params, points, targets, weights, grad=False)
    return total


def _last_breakpoint(weights):
    last = 0
    for s in weights.values():
        for e, _ in s.steps:
            last = max(last, e)
        if s.ramp is not None:
            last = max(last, s.ramp[1])
    return last


def offline_train(cfg: OfflineConfig, spec: ProblemSpec | None = None, out_dir=None,
                  log=None) -> OfflineResult:
    cfg.validate()
    spec = spec or get_spec(cfg.spec)
    if spec.unknown_terms:
        # unknown terms only exist online; the basis is trained on the full model
        spec = get_spec("lv").with_overrides(n_collocation=spec.n_collocation)
    if cfg.n_collocation is not None:
        spec = spec.with_overrides(n_collocation=tuple(cfg.n_collocation))
    if cfg.param_ranges is not None:
        spec = spec.with_overrides(param_ranges=tuple(tuple(r) for r in cfg.param_ranges))
    if cfg.ic_ranges is not None:
        spec = spec.with_overrides(ic_ranges=tuple(tuple(r) for r in cfg.ic_ranges))
    data_loss = cfg.data_loss if cfg.data_loss is not None else spec.loss_weights["data"](0) > 0
    n_data = cfg.n_data or (10000 if spec.input_dim > 1 else spec.n_collocation[-1])
    weights = ({t: WeightSchedule.parse(w) for t, w in cfg.weights.items()}
               if cfg.weights else default_weights(spec, data_loss))
    for t in TERMS:
        weights.setdefault(t, WeightSchedule(0.0))

    n, m, d = cfg.n_readouts, cfg.n_validation, spec.solution_dim
    if cfg.param_values is not None:
        params = np.asarray(cfg.param_values, dtype=np.float64).reshape(n, spec.param_dim)
        _, ics = sample_parameters(spec, n, (cfg.seed_params, 0))
    else:
        params, ics = sample_parameters(spec, n, (cfg.seed_params, 0))
    train = build_readout_set(spec, params, ics, data_loss, n_data, (cfg.seed_data, 0), cfg)
    val = None
    if m > 0:
        vparams, vics = sample_parameters(spec, m, (cfg.seed_params, 1))
        val = build_readout_set(spec, vparams, vics, data_loss, n_data, (cfg.seed_data, 0), cfg)
        # validation readouts share every point set with training
        val.points = train.points

    R = init_network(spec.arch, cfg.seed_init)
    L = init_readout(spec.arch.n_basis, n, d, seed=(cfg.seed_init, 1))
    L_val = init_readout(spec.arch.n_basis, m, d) if m > 0 else None

    lr = WeightSchedule.parse(cfg.lr)
    opt = Adam(R.arrays() + L.arrays(), lr)
    opt_val = Adam(L_val.arrays(), cfg.val_lr) if m > 0 else None

    monitor = cfg.checkpoint_on
    if monitor == "auto":
        monitor = "val" if m > 0 else "train"
    track_from = _last_breakpoint(weights) if monitor == "train" else 0
    track_from = min(track_from, cfg.epochs - 1)

    hist = TrainingHistory()
    best = (np.inf, None)
    stale = 0
    for e in range(cfg.epochs):
        t0 = time.perf_counter()
        w = weights_at(weights, e)
        total, terms, gR, gw, gb, features = pinn_loss_and_grad(
            spec, R, L, train.params, train.points, w, train.targets, epoch=e + 1)

        vtotal = None
        if val is not None:
            vfields = readout_fields(features, L_val)
            vtotal, _, vbars = field_loss(spec, vfields, val.params, val.points, val.targets, w, epoch=e + 1)
            vgw, vgb, _ = readout_backward(features, L_val, vbars["fields"], need_feature_bars=False)

        watched = {"val": vtotal, "train": total, "last": -e}[monitor]
        if e >= track_from and watched < best[0]:
            best = (watched, (R.copy(), L.copy(), L_val.copy() if L_val is not None else None, e))
            stale = 0
        elif e >= track_from:
            stale += 1

        opt.step(gR.arrays() + [gw, gb], epoch=e)
        if opt_val is not None:
            opt_val.step([vgw, vgb], epoch=e)

        hist.train_loss.append(total)
        hist.val_loss.append(vtotal)
        for t in TERMS:
            hist.terms[t].append(float(terms.get(t, 0.0)))
        hist.ms.append((time.perf_counter() - t0) * 1e3)
        if log is not None and (e % max(1, cfg.epochs // 20) == 0 or e == cfg.epochs - 1):
            log(f"epoch {e + 1}/{cfg.epochs} train {total:.4e}" + (f" val {vtotal:.4e}" if vtotal is not None else ""))
        if cfg.patience and stale >= cfg.patience:
            break

    R, L, L_val, best_e = best[1]
    hist.best_epoch = best_e + 1
    meta = {
        "spec": spec.name,
        "arch": spec.arch.to_dict(),
        "n_readouts": n,
        "n_validation": m,
        "seeds": {"params": cfg.seed_params, "init": cfg.seed_init, "data": cfg.seed_data},
        "epoch": best_e + 1,
        "epochs_run": len(hist),
        "monitor": monitor,
        "best_loss": float(best[0]) if monitor != "last" else hist.train_loss[best_e],
        "train_loss": hist.train_loss[best_e],
        "val_loss": hist.val_loss[best_e],
        "history_sha256": hist.digest(),
        "n_collocation": list(spec.n_collocation),
        "param_ranges": [list(r) for r in spec.param_ranges],
        "ic_ranges": [list(r) for r in spec.ic_ranges],
        "train_params": train.params.tolist(),
        "val_params": val.params.tolist() if val is not None else None,
        "val_ics": val.ics.tolist() if val is not None and val.ics is not None else None,
        "weights": {t: s.to_config() for t, s in weights.items()},
    }
    path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{spec.name}_r{n}.ipbn"
        extra = {"L_val": L_val} if L_val is not None else None
        save_checkpoint(path, R, L, meta, readouts=extra)
        (out_dir / "history.csv").write_text(hist.to_csv(), encoding="utf-8")
    return OfflineResult(R, L, L_val, hist, path, train, val, weights, meta)
