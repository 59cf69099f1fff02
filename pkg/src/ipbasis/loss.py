"""PINN loss terms over readout fields, with adjoints.

Fields arrive in flat readout layout ``[n_points, n_readouts * d]``; each
term is a mean over its point set, readouts and components, so the total is
the readout average of the per-readout PINN losses.
"""
from __future__ import annotations

import numpy as np

from .network import DivergedTrainingError
from .problems import ProblemSpec

TERMS = ("pde", "ic", "bc", "data")
TARGET_SETS = {"ic": "ic", "bc": "bc", "data": "data"}


def _split(a, n, d):
    return a.reshape(a.shape[0], n, d)


def field_loss(spec: ProblemSpec, fields, params, coords, targets, weights,
               unknown=None, grad=True, per_readout=False, epoch=None):
    """Weighted PINN loss of readout fields.

    Returns ``(total, terms, bars)``.  ``terms`` holds unweighted term values
    (arrays over readouts when ``per_readout``); ``bars`` is ``None`` unless
    ``grad`` and then contains ``fields`` (flat layout), ``params`` and
    ``unknown`` adjoints.
    """
    params = np.asarray(params, dtype=np.float64)
    n, d = params.shape[0], spec.solution_dim
    terms = {}
    field_bars = {}
    param_bar = np.zeros_like(params)
    unknown_bar = None
    total = 0.0

    def add_bar(s, f, bar):
        flat = bar.reshape(bar.shape[0], n * d)
        if s not in field_bars:
            field_bars[s] = {}
        if f in field_bars[s]:
            field_bars[s][f] = field_bars[s][f] + flat
        else:
            field_bars[s][f] = flat

    if "colloc" in fields:
        cf = {f: _split(v, n, d) for f, v in fields["colloc"].items()}
        inp = spec.residual_input(cf, params, coords["colloc"], unknown)
        r = spec.residual(inp)
        sq = r * r
        terms["pde"] = sq.mean(axis=(0, 2)) if per_readout else float(sq.mean())
        w = float(weights.get("pde", 0.0))
        total += w * float(sq.mean())
        if grad and w != 0.0:
            rbar = (2.0 * w / r.size) * r
            parts = spec.partials(inp)
            rb = rbar[..., :, None]
            for f, pdv in parts.items():
                if f == "params":
                    param_bar += (rb * pdv).sum(axis=-2).reshape(-1, n, params.shape[1]).sum(axis=0)
                elif f == "unknown_terms":
                    unknown_bar = (rb * pdv).sum(axis=-2)
                else:
                    add_bar("colloc", f, np.broadcast_to((rb * pdv).sum(axis=-2), cf[f].shape))

    for term, s in TARGET_SETS.items():
        tgt = targets.get(s) if targets else None
        if not tgt or s not in fields:
            continue
        w = float(weights.get(term, 0.0))
        value = np.zeros(n) if per_readout else 0.0
        for f, target in tgt.items():
            pred = _split(fields[s][f], n, d)
            diff = pred - target
            sq = diff * diff
            value = value + (sq.mean(axis=(0, 2)) if per_readout else float(sq.mean()))
            total += w * float(sq.mean())
            if grad and w != 0.0:
                add_bar(s, f, (2.0 * w / diff.size) * diff)
        terms[term] = value

    for term, v in terms.items():
        if not np.all(np.isfinite(v)):
            raise DivergedTrainingError(epoch if epoch is not None else -1, term)
    if not np.isfinite(total):
        raise DivergedTrainingError(epoch if epoch is not None else -1, "total")
    bars = None
    if grad:
        bars = {"fields": field_bars, "params": param_bar, "unknown": unknown_bar}
    return total, terms, bars


def readout_fields(features, L):
    """Apply a readout to stored basis features; bias on values only."""
    out = {}
    for s, fs in features.items():
        out[s] = {}
        for f, v in fs.items():
            y = v @ L.weight
            if f == "value":
                y = y + L.bias
            out[s][f] = y
    return out


def readout_backward(features, L, field_bars, need_feature_bars=True):
    """Gradients of the readout and (optionally) adjoints of the features."""
    gw = np.zeros_like(L.weight)
    gb = np.zeros_like(L.bias)
    feature_bars = {}
    for s, fb in field_bars.items():
        feature_bars[s] = {}
        for f, bar in fb.items():
            gw += features[s][f].T @ bar
            if f == "value":
                gb += bar.sum(axis=0)
            if need_feature_bars:
                feature_bars[s][f] = bar @ L.weight.T
    return gw, gb, feature_bars
