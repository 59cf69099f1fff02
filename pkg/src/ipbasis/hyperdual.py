"""Truncated second-order Taylor (hyper-dual) arithmetic.

A hyper-dual quantity carries four channels: the value ``re``, two
directional first derivatives ``e1`` and ``e2`` and the mixed second
derivative ``e12``.  Channels may be Python floats or numpy arrays of a
common shape; the same rules apply element-wise.  Products obey
``eps1**2 == eps2**2 == (eps1*eps2)**2 == 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

Real = Union[float, np.ndarray]


class InputDimensionError(IndexError):
    pass


@dataclass(frozen=True)
class HyperDual:
    re: Real
    e1: Real = 0.0
    e2: Real = 0.0
    e12: Real = 0.0

    def __add__(self, other):
        return hd_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return hd_sub(self, other)

    def __rsub__(self, other):
        return hd_sub(_coerce(other), self)

    def __mul__(self, other):
        if isinstance(other, HyperDual):
            return hd_mul(self, other)
        return hd_scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return hd_scale(self, -1.0)

    def astuple(self):
        return (self.re, self.e1, self.e2, self.e12)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(c)) for c in self.astuple())


# Scalar alias used where a single point is meant.
HyperDualScalar = HyperDual


class HyperDualBatch(HyperDual):
    """Four parallel real arrays of shape ``[n_points, n_outputs]``."""

    def __init__(self, re, e1, e2, e12):
        re, e1, e2, e12 = (np.asarray(c, dtype=np.float64) for c in (re, e1, e2, e12))
        if not (re.shape == e1.shape == e2.shape == e12.shape):
            raise ValueError(
                f"channel shapes differ: {re.shape}, {e1.shape}, {e2.shape}, {e12.shape}"
            )
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "e1", e1)
        object.__setattr__(self, "e2", e2)
        object.__setattr__(self, "e12", e12)

    @property
    def shape(self):
        return self.re.shape


def _coerce(a) -> HyperDual:
    return a if isinstance(a, HyperDual) else hd_lift(a)


def _wrap(like: HyperDual, re, e1, e2, e12) -> HyperDual:
    if isinstance(like, HyperDualBatch):
        return HyperDualBatch(re, e1, e2, e12)
    return HyperDual(re, e1, e2, e12)


def hd_lift(c: Real) -> HyperDual:
    """Constant with zero derivative channels."""
    z = np.zeros_like(c, dtype=np.float64) if isinstance(c, np.ndarray) else 0.0
    return HyperDual(c, z, z, z)


def hd_seed(x, i: int, j: int) -> HyperDualBatch:
    """Seed input vector(s) ``x`` with tangents ``e_i`` and ``e_j``.

    ``x`` may be a single vector ``[dim]`` or a batch ``[n_points, dim]``;
    the result always has a leading point axis.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dim = x.shape[1]
    for k in (i, j):
        if not 0 <= k < dim:
            raise InputDimensionError(f"seed index {k} out of range for input dim {dim}")
    e1 = np.zeros_like(x)
    e2 = np.zeros_like(x)
    e1[:, i] = 1.0
    e2[:, j] = 1.0
    return HyperDualBatch(x, e1, e2, np.zeros_like(x))


def hd_add(a, b) -> HyperDual:
    a, b = _coerce(a), _coerce(b)
    like = a if isinstance(a, HyperDualBatch) else b
    return _wrap(like, a.re + b.re, a.e1 + b.e1, a.e2 + b.e2, a.e12 + b.e12)


def hd_sub(a, b) -> HyperDual:
    a, b = _coerce(a), _coerce(b)
    like = a if isinstance(a, HyperDualBatch) else b
    return _wrap(like, a.re - b.re, a.e1 - b.e1, a.e2 - b.e2, a.e12 - b.e12)


def hd_mul(a, b) -> HyperDual:
    a, b = _coerce(a), _coerce(b)
    like = a if isinstance(a, HyperDualBatch) else b
    return _wrap(
        like,
        a.re * b.re,
        a.re * b.e1 + a.e1 * b.re,
        a.re * b.e2 + a.e2 * b.re,
        a.re * b.e12 + a.e1 * b.e2 + a.e2 * b.e1 + a.e12 * b.re,
    )


def hd_scale(a: HyperDual, s: Real) -> HyperDual:
    return _wrap(a, a.re * s, a.e1 * s, a.e2 * s, a.e12 * s)


def hd_square(a: HyperDual) -> HyperDual:
    return hd_mul(a, a)


def tanh_derivatives(z):
    """Return ``tanh(z)`` and its first three derivatives."""
    s = np.tanh(z)
    d1 = 1.0 - s * s
    d2 = -2.0 * s * d1
    d3 = -2.0 * d1 * d1 + 4.0 * s * s * d1
    return s, d1, d2, d3


def hd_tanh(a: HyperDual) -> HyperDual:
    s, d1, d2, _ = tanh_derivatives(a.re)
    return _wrap(a, s, d1 * a.e1, d1 * a.e2, d1 * a.e12 + d2 * a.e1 * a.e2)


def hd_affine(a: HyperDualBatch, weight: np.ndarray, bias: np.ndarray | None = None) -> HyperDualBatch:
    """``a @ weight + bias`` with the bias entering the value channel only."""
    re = a.re @ weight
    if bias is not None:
        re = re + bias
    return HyperDualBatch(re, a.e1 @ weight, a.e2 @ weight, a.e12 @ weight)


def hd_extract(batch: HyperDual):
    """Unpack into ``(values, d_i, d_j, d_ij)``."""
    return tuple(np.asarray(c, dtype=np.float64) for c in batch.astuple())


def validate(a: HyperDual) -> HyperDual:
    if not a.is_finite():
        raise FloatingPointError("non-finite hyper-dual channel")
    return a
