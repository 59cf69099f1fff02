"""Timing of basis derivatives: one hyper-dual pass versus per-output reverse passes.

The reverse baseline mimics what a backpropagation framework does when every
network output needs its own input derivatives: a shared forward pass, then
for each output one backward sweep (first derivative) and one
reverse-over-reverse sweep through that backward computation (second
derivative).  Both paths are checked against each other before timing.
"""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .network import MlpParams, NetworkArch, forward_basis_hd, init_network


class BenchValidationError(RuntimeError):
    pass


@dataclass
class BenchReport:
    mode: str  # "forward-hd" or "reverse-per-output"
    n_readouts: int
    n_points: int
    reps: int
    median_s: float
    mean_s: float
    speedup: float


def forward_derivatives(R: MlpParams, x, i=0):
    hd = forward_basis_hd(R, x, i, i)
    return hd.re, hd.e1, hd.e12


def reverse_derivatives(R: MlpParams, x, i=0):
    """First and pure second derivatives w.r.t. input ``i``, one output at a time."""
    acts = [x]
    for w, b in zip(R.weights, R.biases):
        acts.append(np.tanh(acts[-1] @ w + b))
    n_out = acts[-1].shape[1]
    n_layers = len(R.weights)
    slopes = [None] + [1.0 - a * a for a in acts[1:]]
    d1 = np.empty_like(acts[-1])
    d2 = np.empty_like(acts[-1])
    for k in range(n_out):
        # backward sweep: gbar[l] is the adjoint of activation l for output k
        gbar = [None] * (n_layers + 1)
        zbar = [None] * (n_layers + 1)
        g = np.zeros_like(acts[-1])
        g[:, k] = 1.0
        gbar[n_layers] = g
        for l in range(n_layers, 0, -1):
            zbar[l] = gbar[l] * slopes[l]
            gbar[l - 1] = zbar[l] @ R.weights[l - 1].T
        d1[:, k] = gbar[0][:, i]
        # reverse over the backward sweep, seeded on d(out_k)/dx_i
        ghat = np.zeros_like(x)
        ghat[:, i] = 1.0
        ahat = [None] * (n_layers + 1)
        for l in range(1, n_layers + 1):
            zbar_hat = ghat @ R.weights[l - 1]
            ahat[l] = zbar_hat * gbar[l] * (-2.0 * acts[l])
            ghat = zbar_hat * slopes[l]
        # then back down through the forward graph
        acc = np.zeros_like(acts[-1])
        for l in range(n_layers, 0, -1):
            acc = acc + ahat[l]
            zhat = acc * slopes[l]
            acc = zhat @ R.weights[l - 1].T
        d2[:, k] = acc[:, i]
    return acts[-1], d1, d2


def _time(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def run_benchmark(input_dim=1, hidden_widths=(40, 40, 40, 40), n_basis=50, points=30, reps=7,
                  seed=0, tol=1e-8, input_index=0):
    """Validate both derivative paths, then time them; returns two reports."""
    if reps < 5:
        raise ValueError("benchmark needs at least 5 repetitions")
    R = init_network(NetworkArch(input_dim, tuple(hidden_widths), n_basis), seed)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(points, input_dim))
    f = forward_derivatives(R, x, input_index)
    r = reverse_derivatives(R, x, input_index)
    for name, a, b in zip(("value", "first", "second"), f, r):
        err = float(np.max(np.abs(a - b)))
        if not err <= tol:
            raise BenchValidationError(f"{name} derivatives disagree between modes (max |diff| {err:.3e})")
    tf = _time(lambda: forward_derivatives(R, x, input_index), reps)
    tr = _time(lambda: reverse_derivatives(R, x, input_index), reps)
    ratio = statistics.median(tr) / statistics.median(tf)
    return [
        BenchReport("forward-hd", n_basis, points, reps, statistics.median(tf), statistics.mean(tf), ratio),
        BenchReport("reverse-per-output", n_basis, points, reps, statistics.median(tr), statistics.mean(tr), 1.0),
    ]


def write_reports(path, reports):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(asdict(reports[0])), lineterminator="\n")
        w.writeheader()
        for rep in reports:
            w.writerow({k: (f"{v:.6e}" if isinstance(v, float) else v) for k, v in asdict(rep).items()})
