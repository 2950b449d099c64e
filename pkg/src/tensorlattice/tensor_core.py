"""Canonical (CP) third-order tensors on Cartesian grids.

A rank-R tensor is kept as three factor panels of shape ``(n_l, R)`` and a
weight vector of length R::

    T = sum_q  w_q * p_q^(1) (x) p_q^(2) (x) p_q^(3)

Every operation here works on the 1D panels only; nothing is materialized
unless :func:`dense_materialize` is asked to do so.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BoundsError, DimensionError, ResourceCapError, StructureError

DEFAULT_DENSE_CAP = 2**24


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1D grid of ``n`` cells (or nodes) of width ``h``.

    ``origin`` is the left edge of the first cell when ``midpoints`` is
    true, and the coordinate of the first node otherwise.
    """

    n: int
    h: float
    origin: float = 0.0
    midpoints: bool = True

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DimensionError(f"grid size must be a positive integer, got {self.n}")
        if not self.h > 0:
            raise DimensionError(f"mesh size must be positive, got {self.h}")

    @property
    def points(self):
        i = np.arange(self.n)
        if self.midpoints:
            return self.origin + (i + 0.5) * self.h
        return self.origin + i * self.h

    @property
    def edges(self):
        return self.origin + np.arange(self.n + 1) * self.h

    @property
    def length(self):
        return self.n * self.h


@dataclass(frozen=True)
class WindowSpec:
    shifts: tuple
    sizes: tuple

    def __post_init__(self):
        object.__setattr__(self, "shifts", tuple(int(s) for s in self.shifts))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.shifts) != 3 or len(self.sizes) != 3:
            raise DimensionError("window needs three shifts and three sizes")
        if any(s < 1 for s in self.sizes):
            raise DimensionError(f"window sizes must be positive, got {self.sizes}")

    def check(self, shape):
        for l, (s, m, n) in enumerate(zip(self.shifts, self.sizes, shape)):
            if s < 0 or s + m > n:
                raise BoundsError(
                    f"window [{s}, {s + m}) outside master grid of size {n} in direction {l + 1}"
                )


class CanonicalTensor3:
    """Immutable rank-R canonical tensor of order three."""

    __slots__ = ("factors", "weights")

    def __init__(self, factors: Sequence[np.ndarray], weights=None):
        if len(factors) != 3:
            raise DimensionError("a third-order tensor needs exactly three factor panels")
        panels = []
        for f in factors:
            f = np.asarray(f, dtype=np.float64)
            if f.ndim == 1:
                f = f[:, None]
            if f.ndim != 2:
                raise DimensionError("factor panels must be 2D arrays of shape (n, R)")
            panels.append(_frozen(f))
        ranks = {p.shape[1] for p in panels}
        if len(ranks) != 1:
            raise StructureError(f"factor panels disagree on the rank: {[p.shape[1] for p in panels]}")
        rank = ranks.pop()
        if weights is None:
            weights = np.ones(rank)
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != rank:
            raise StructureError(f"{weights.shape[0]} weights for rank {rank}")
        object.__setattr__(self, "factors", tuple(panels))
        object.__setattr__(self, "weights", _frozen(weights))

    def __setattr__(self, name, value):
        raise AttributeError("CanonicalTensor3 is immutable")

    @property
    def rank(self) -> int:
        return self.weights.shape[0]

    @property
    def shape(self) -> tuple:
        return tuple(p.shape[0] for p in self.factors)

    @classmethod
    def zeros(cls, shape):
        return cls([np.zeros((n, 0)) for n in shape], np.zeros(0))

    @classmethod
    def rank1(cls, u, v, w, weight=1.0):
        return cls([u, v, w], [weight])

    def scaled(self, c) -> "CanonicalTensor3":
        return CanonicalTensor3(self.factors, c * self.weights)

    def __add__(self, other):
        return tensor_sum([self, other])

    def __repr__(self):
        return f"CanonicalTensor3(shape={self.shape}, rank={self.rank})"


def tensor_sum(tensors: Sequence[CanonicalTensor3]) -> CanonicalTensor3:
    """Formal sum: panels and weights are concatenated, ranks add up."""
    tensors = list(tensors)
    if not tensors:
        raise StructureError("empty sum")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError(f"shape mismatch {t.shape} vs {shape}")
    factors = [np.concatenate([t.factors[l] for t in tensors], axis=1) for l in range(3)]
    return CanonicalTensor3(factors, np.concatenate([t.weights for t in tensors]))


def dense_materialize(t: CanonicalTensor3, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    size = int(np.prod(t.shape))
    if size > cap:
        raise ResourceCapError("dense materialization", size, cap)
    a, b, c = t.factors
    return np.einsum("q,iq,jq,kq->ijk", t.weights, a, b, c, optimize=True)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"grid shapes differ: {a.shape} vs {b.shape}")


def hadamard(a: CanonicalTensor3, b: CanonicalTensor3) -> CanonicalTensor3:
    """Pointwise product; column ``q*rank(b) + r`` is ``a_q * b_r``."""
    _same_shape(a, b)
    factors = [
        (fa[:, :, None] * fb[:, None, :]).reshape(fa.shape[0], -1)
        for fa, fb in zip(a.factors, b.factors)
    ]
    return CanonicalTensor3(factors, np.outer(a.weights, b.weights).reshape(-1))


def inner(a: CanonicalTensor3, b: CanonicalTensor3) -> float:
    """Frobenius inner product in O(R_a R_b (n1 + n2 + n3))."""
    _same_shape(a, b)
    if a.rank == 0 or b.rank == 0:
        return 0.0
    gram = np.ones((a.rank, b.rank))
    for fa, fb in zip(a.factors, b.factors):
        gram *= fa.T @ fb
    return float(a.weights @ gram @ b.weights)


def window(master: CanonicalTensor3, w: WindowSpec) -> CanonicalTensor3:
    w.check(master.shape)
    factors = [f[s:s + m] for f, s, m in zip(master.factors, w.shifts, w.sizes)]
    return CanonicalTensor3(factors, master.weights)


def _is_progression(s):
    if s.size < 3:
        return True
    d = np.diff(s)
    return bool(np.all(d == d[0]) and d[0] != 0)


def shifted_column_sum(panel: np.ndarray, shifts, size: int, method: str = "auto") -> np.ndarray:
    """Sum of the row-slices ``panel[s:s+size]`` over ``s`` in ``shifts``.

    For an arithmetic progression of shifts (the lattice case) the sum is
    taken from strided prefix sums in O(len(panel)) instead of
    O(len(shifts) * size).
    """
    shifts = np.sort(np.asarray(shifts, dtype=np.int64).reshape(-1))
    n = panel.shape[0]
    if shifts.size == 0:
        return np.zeros((size,) + panel.shape[1:])
    if shifts[0] < 0 or shifts[-1] + size > n:
        raise BoundsError(f"shifted slices [{shifts[0]}, {shifts[-1] + size}) leave a panel of length {n}")
    if method == "auto":
        method = "prefix" if shifts.size > 8 and _is_progression(shifts) else "direct"
    if method == "direct":
        out = np.zeros((size,) + panel.shape[1:])
        for s in shifts:
            out += panel[s:s + size]
        return out
    if not _is_progression(shifts):
        raise StructureError("prefix-sum accumulation needs equally spaced shifts")
    d = int(shifts[1] - shifts[0]) if shifts.size > 1 else 1
    lo, k = int(shifts[0]), shifts.size
    # rows lo + i + t*d for t < k; cumulate along residue classes mod d
    used = (k - 1) * d + size
    nrows = -(-used // d) * d
    csum = np.zeros((nrows,) + panel.shape[1:])
    csum[:used] = panel[lo:lo + used]
    folded = csum.reshape((nrows // d, d) + panel.shape[1:])
    np.cumsum(folded, axis=0, out=folded)
    out = csum[(k - 1) * d:(k - 1) * d + size].copy()
    if size > d:
        out[d:] -= csum[:size - d]
    return out


def directional_sum(master: CanonicalTensor3, shifts: Sequence, sizes: Sequence[int],
                    method: str = "auto") -> CanonicalTensor3:
    """Assembled sum of shifted windows of one master tensor.

    ``shifts[l]`` lists the window offsets in direction ``l``.  The result
    equals the sum over the Cartesian product of the per-direction offsets
    of the corresponding windows, yet keeps the rank of ``master``.
    """
    if len(shifts) != 3 or len(sizes) != 3:
        raise StructureError("need shifts and sizes for all three directions")
    factors = [
        shifted_column_sum(f, s, int(m), method=method)
        for f, s, m in zip(master.factors, shifts, sizes)
    ]
    return CanonicalTensor3(factors, master.weights)


def tile(t: CanonicalTensor3, reps: Sequence[int]) -> CanonicalTensor3:
    """Periodic replication of ``t`` ``reps[l]`` times along direction ``l``."""
    factors = [np.tile(f, (int(r), 1)) for f, r in zip(t.factors, reps)]
    return CanonicalTensor3(factors, t.weights)
