"""Dense tanh body ``R`` with linear readouts ``L``.

The body is a stack of affine+tanh layers whose final layer has width
``n_basis``; its outputs are the basis functions.  Readouts are plain linear
maps grouped in column blocks of width ``solution_dim``.

Gradients are produced by a fixed layerwise backward pass.  The hyper-dual
forward pass records a tape so that losses built from any of the four
channels can be backpropagated to the weights.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hyperdual import HyperDualBatch, hd_affine, hd_seed, tanh_derivatives

CHANNELS = ("re", "e1", "e2", "e12")


class ShapeMismatchError(ValueError):
    pass


class DivergedTrainingError(FloatingPointError):
    def __init__(self, epoch, term="total", detail=""):
        self.epoch = epoch
        self.term = term
        msg = f"non-finite loss term '{term}' at epoch {epoch}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError, ShapeMismatchError):
    pass


@dataclass(frozen=True)
class NetworkArch:
    input_dim: int
    hidden_widths: tuple
    n_basis: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.hidden_widths:
            raise ValueError("hidden_widths must be non-empty")
        if min((self.input_dim, self.n_basis) + self.hidden_widths) < 1:
            raise ValueError("all widths must be >= 1")

    @property
    def layer_sizes(self):
        return (self.input_dim,) + self.hidden_widths + (self.n_basis,)

    def param_shapes(self):
        sizes = self.layer_sizes
        shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            shapes.append((fan_in, fan_out))
            shapes.append((fan_out,))
        return shapes

    def to_dict(self):
        return {"input_dim": self.input_dim, "hidden_widths": list(self.hidden_widths),
                "n_basis": self.n_basis}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["input_dim"]), tuple(d["hidden_widths"]), int(d["n_basis"]))


@dataclass
class MlpParams:
    weights: list
    biases: list

    @property
    def arch(self) -> NetworkArch:
        sizes = [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]
        return NetworkArch(sizes[0], tuple(sizes[1:-1]), sizes[-1])

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])


@dataclass
class ReadoutLayer:
    weight: np.ndarray
    bias: np.ndarray
    n_readouts: int
    solution_dim: int

    def __post_init__(self):
        cols = self.n_readouts * self.solution_dim
        if self.weight.shape[1] != cols or self.bias.shape != (cols,):
            raise ShapeMismatchError(
                f"readout expects {cols} columns, got weight {self.weight.shape}, bias {self.bias.shape}"
            )

    @property
    def n_basis(self):
        return self.weight.shape[0]

    def arrays(self):
        return [self.weight, self.bias]

    def copy(self):
        return ReadoutLayer(self.weight.copy(), self.bias.copy(), self.n_readouts, self.solution_dim)

    def zeros_like(self):
        return ReadoutLayer(np.zeros_like(self.weight), np.zeros_like(self.bias),
                            self.n_readouts, self.solution_dim)

    def columns(self, i):
        d = self.solution_dim
        return slice(i * d, (i + 1) * d)


@dataclass
class GradientBuffer:
    R: MlpParams | None = None
    L: ReadoutLayer | None = None
    extra: dict = field(default_factory=dict)


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_network(arch: NetworkArch, seed) -> MlpParams:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights = [_glorot(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return MlpParams(weights, biases)


def init_readout(n_basis, n_readouts, solution_dim, seed=None) -> ReadoutLayer:
    """Glorot-uniform readout when ``seed`` is given, all zeros otherwise."""
    cols = n_readouts * solution_dim
    if seed is None:
        w = np.zeros((n_basis, cols))
    else:
        w = _glorot(np.random.default_rng(seed), n_basis, cols)
    return ReadoutLayer(w, np.zeros(cols), n_readouts, solution_dim)


def _check_input(R, x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != R.weights[0].shape[0]:
        raise ShapeMismatchError(f"input has {x.shape[1]} columns, network expects {R.weights[0].shape[0]}")
    return x


# --------------------------------------------------------------------------
# plain pass

def forward_basis(R: MlpParams, x, tape=None):
    a = _check_input(R, x)
    for w, b in zip(R.weights, R.biases):
        if tape is not None:
            tape.append(a)
        a = np.tanh(a @ w + b)
        if tape is not None:
            tape.append(a)
    return a


def forward(R: MlpParams, L: ReadoutLayer, x):
    basis = forward_basis(R, x)
    if basis.shape[1] != L.n_basis:
        raise ShapeMismatchError("readout width does not match basis width")
    return basis @ L.weight + L.bias


def backward_basis(R: MlpParams, tape, bar, grads: MlpParams):
    """Accumulate into ``grads`` the gradient for output adjoint ``bar``."""
    for k in range(len(R.weights) - 1, -1, -1):
        a_in, s = tape[2 * k], tape[2 * k + 1]
        zbar = bar * (1.0 - s * s)
        grads.weights[k] += a_in.T @ zbar
        grads.biases[k] += zbar.sum(axis=0)
        if k:
            bar = zbar @ R.weights[k].T


# --------------------------------------------------------------------------
# hyper-dual pass

def forward_basis_hd(R: MlpParams, x, i, j, tape=None, second=True) -> HyperDualBatch:
    """Value, d/dx_i, d/dx_j and d2/dx_i dx_j of every basis output.

    For a diagonal seed (``i == j``) both first-order channels are the same
    array and are propagated once.  With ``second=False`` the mixed channel
    is skipped and returned filled with NaN.
    """
    x = _check_input(R, x)
    seed = hd_seed(x, i, j)
    diag = i == j
    re, e1 = seed.re, seed.e1
    e2 = None if diag else seed.e2
    e12 = seed.e12 if second else None
    for k, (w, b) in enumerate(zip(R.weights, R.biases)):
        zre = re @ w + b
        z1 = e1 @ w
        z2 = z1 if diag else e2 @ w
        z12 = None
        if second:
            z12 = np.zeros_like(zre) if k == 0 else e12 @ w  # the seed has no mixed part
        s, d1, d2, d3 = tanh_derivatives(zre)
        if tape is not None:
            tape.append((re, e1, e2, e12, z1, z2, z12, d1, d2, d3))
        re = s
        if second:
            e12 = d1 * z12 + d2 * z1 * z2
        e1 = d1 * z1
        e2 = None if diag else d1 * z2
    return HyperDualBatch(re, e1, e1 if diag else e2, e12 if second else np.full_like(re, np.nan))


def backward_basis_hd(R: MlpParams, tape, bars, grads: MlpParams):
    """Backpropagate channel adjoints ``bars = (re, e1, e2, e12)`` (``None`` = 0).

    On a diagonal-seed tape the two first-order adjoints are summed and
    carried as one, which is exact because both channels hold equal values.
    """
    gre, g1, g2, g12 = bars
    diag = tape[0][2] is None
    second = tape[0][3] is not None
    zero = np.zeros(tape[-1][7].shape)
    gre = zero if gre is None else gre
    if diag:
        g1 = (zero if g1 is None else g1) + (zero if g2 is None else g2)
    else:
        g1 = zero if g1 is None else g1
        g2 = zero if g2 is None else g2
    if not second:
        if g12 is not None and np.any(g12):
            raise ValueError("mixed-channel adjoint given for a first-order pass")
        g12 = None
    elif g12 is None:
        g12 = zero
    for k in range(len(R.weights) - 1, -1, -1):
        a_re, a1, a2, a12, z1, z2, z12, d1, d2, d3 = tape[k]
        if second:
            t12 = d2 * g12
            if diag:
                zbar1 = d1 * g1 + 2.0 * t12 * z1
                zbarre = d1 * gre + d2 * (g1 * z1 + g12 * z12) + d3 * g12 * z1 * z1
            else:
                zbar1 = d1 * g1 + t12 * z2
                zbar2 = d1 * g2 + t12 * z1
                zbarre = d1 * gre + d2 * (g1 * z1 + g2 * z2 + g12 * z12) + d3 * g12 * z1 * z2
            zbar12 = d1 * g12
        else:
            zbar1 = d1 * g1
            if diag:
                zbarre = d1 * gre + d2 * g1 * z1
            else:
                zbar2 = d1 * g2
                zbarre = d1 * gre + d2 * (g1 * z1 + g2 * z2)
        gw = a_re.T @ zbarre + a1.T @ zbar1
        if not diag:
            gw += a2.T @ zbar2
        if second and k:
            gw += a12.T @ zbar12
        grads.weights[k] += gw
        grads.biases[k] += zbarre.sum(axis=0)
        if k:
            wt = R.weights[k].T
            gre, g1 = zbarre @ wt, zbar1 @ wt
            if not diag:
                g2 = zbar2 @ wt
            if second:
                g12 = zbar12 @ wt


def apply_readout_hd(basis: HyperDualBatch, L: ReadoutLayer) -> HyperDualBatch:
    """Readout on all channels; the bias only shifts the value channel."""
    if basis.shape[1] != L.n_basis:
        raise ShapeMismatchError(f"basis has {basis.shape[1]} outputs, readout expects {L.n_basis}")
    return hd_affine(basis, L.weight, L.bias)


# --------------------------------------------------------------------------
# feature passes
#
# A pass is ``(i, j, mapping)`` where ``mapping`` sends hyper-dual channel
# names to field names; ``i is None`` requests a plain value-only pass.

def compute_features(R: MlpParams, points: dict, passes: dict, keep_tape=False):
    """Run every requested pass; returns ``features[set][field] -> [N, n_basis]``."""
    features, tapes = {}, {}
    for name, plist in passes.items():
        if name not in points:
            continue
        x = points[name]
        feats, set_tapes = {}, []
        for i, j, mapping in plist:
            tape = [] if keep_tape else None
            if i is None:
                feats[mapping["re"]] = forward_basis(R, x, tape)
            else:
                hd = forward_basis_hd(R, x, i, j, tape, second="e12" in mapping)
                for ch, fname in mapping.items():
                    feats[fname] = getattr(hd, ch)
            set_tapes.append(tape)
        features[name] = feats
        tapes[name] = set_tapes
    return (features, tapes) if keep_tape else features


def features_backward(R: MlpParams, passes: dict, tapes: dict, feature_bars: dict, grads: MlpParams):
    for name, bars in feature_bars.items():
        for (i, j, mapping), tape in zip(passes[name], tapes[name]):
            chbars = [bars.get(mapping[ch]) if ch in mapping else None for ch in CHANNELS]
            if all(b is None for b in chbars):
                continue
            if i is None:
                backward_basis(R, tape, chbars[0], grads)
            else:
                backward_basis_hd(R, tape, chbars, grads)
    return grads


def backward(R: MlpParams, L: ReadoutLayer, points: dict, passes: dict, loss_fn, epoch=None):
    """Loss and exact gradients for a scalar built from readout fields.

    ``loss_fn(fields)`` receives ``fields[set][field] -> [N, n*d]`` and must
    return ``(loss, field_bars)`` with adjoints of the same layout.
    """
    features, tapes = compute_features(R, points, passes, keep_tape=True)
    fields = {s: {f: v @ L.weight + (L.bias if f == "value" else 0.0) for f, v in fs.items()}
              for s, fs in features.items()}
    loss, field_bars = loss_fn(fields)
    if not np.isfinite(loss):
        raise DivergedTrainingError(epoch if epoch is not None else -1)
    gL = L.zeros_like()
    feature_bars = {}
    for s, fb in field_bars.items():
        feature_bars[s] = {}
        for f, bar in fb.items():
            gL.weight += features[s][f].T @ bar
            if f == "value":
                gL.bias += bar.sum(axis=0)
            feature_bars[s][f] = bar @ L.weight.T
    gR = features_backward(R, passes, tapes, feature_bars, R.zeros_like())
    return loss, GradientBuffer(R=gR, L=gL)


# --------------------------------------------------------------------------
# checkpoints

MAGIC = b"IPBN"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    R: MlpParams
    L: ReadoutLayer | None
    meta: dict
    readouts: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.R, self.L, self.meta))


def history_digest(values) -> str:
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    return hashlib.sha256(arr.tobytes()).hexdigest()


def _readout_blocks(prefix, L):
    return [(f"{prefix}.weight", L.weight), (f"{prefix}.bias", L.bias)]


def save_checkpoint(path, R: MlpParams, L: ReadoutLayer | None = None, meta=None, readouts=None):
    """Write a versioned ``.ipbn`` container: JSON header then float64 blocks."""
    readouts = dict(readouts or {})
    blocks = []
    for k, (w, b) in enumerate(zip(R.weights, R.biases)):
        blocks += [(f"R.W{k}", w), (f"R.b{k}", b)]
    layers = {}
    if L is not None:
        readouts = {"L": L, **readouts}
    for name, layer in readouts.items():
        blocks += _readout_blocks(name, layer)
        layers[name] = {"n_readouts": layer.n_readouts, "solution_dim": layer.solution_dim}
    header = {
        "format": "ipbn",
        "version": FORMAT_VERSION,
        "arch": R.arch.to_dict(),
        "readouts": layers,
        "blocks": [{"name": n, "shape": list(a.shape)} for n, a in blocks],
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes)
        for _, arr in blocks:
            data = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(struct.pack("<Q", data.size))
            fh.write(data.tobytes())
    return Path(path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC or len(raw) < 16:
        raise CheckpointCorruptError(f"{path}: not an ipbn checkpoint")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        arch = NetworkArch.from_dict(header["arch"])
        declared = header["blocks"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointCorruptError(f"{path}: bad header ({exc})") from None

    expected = {}
    for k, shape in enumerate(arch.param_shapes()):
        expected[f"R.{'W' if k % 2 == 0 else 'b'}{k // 2}"] = tuple(shape)
    for name, info in header.get("readouts", {}).items():
        cols = info["n_readouts"] * info["solution_dim"]
        expected[f"{name}.weight"] = (arch.n_basis, cols)
        expected[f"{name}.bias"] = (cols,)
    if [b["name"] for b in declared] != list(expected):
        raise CheckpointShapeError(f"{path}: block list does not match architecture")

    arrays = {}
    pos = 16 + hlen
    for block in declared:
        shape = tuple(block["shape"])
        if shape != expected[block["name"]]:
            raise CheckpointShapeError(
                f"{path}: block {block['name']} has shape {shape}, arch implies {expected[block['name']]}"
            )
        if pos + 8 > len(raw):
            raise CheckpointCorruptError(f"{path}: truncated")
        (count,) = struct.unpack("<Q", raw[pos:pos + 8])
        pos += 8
        if count != int(np.prod(shape)) or pos + 8 * count > len(raw):
            raise CheckpointCorruptError(f"{path}: block {block['name']} length mismatch")
        arrays[block["name"]] = np.frombuffer(raw[pos:pos + 8 * count], dtype="<f8").astype(np.float64).reshape(shape)
        pos += 8 * count
    if pos != len(raw):
        raise CheckpointCorruptError(f"{path}: trailing bytes")

    n = len(arch.layer_sizes) - 1
    R = MlpParams([arrays[f"R.W{k}"] for k in range(n)], [arrays[f"R.b{k}"] for k in range(n)])
    readouts = {}
    for name, info in header.get("readouts", {}).items():
        readouts[name] = ReadoutLayer(arrays[f"{name}.weight"], arrays[f"{name}.bias"],
                                      info["n_readouts"], info["solution_dim"])
    L = readouts.pop("L", None)
    return Checkpoint(R, L, header.get("meta", {}), readouts)
