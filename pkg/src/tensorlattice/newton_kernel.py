"""Canonical grid representation of the Newton kernel ``1/|x|``.

The kernel is written as a Gaussian integral,

    1/z = 2/sqrt(pi) * int_0^inf exp(-z^2 t^2) dt,

discretized by a sinc (trapezoidal) rule after a change of variables.  Each
quadrature term is separable, so projecting onto piecewise-constant cell
functions gives a rank ``2M+1`` canonical tensor whose 1D factors are
exact Gaussian cell integrals.  Nucleus and lattice potentials are cut out
of one large *master* tensor by integer shifts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erf, erfc

from .errors import BoundsError, DimensionError, StructureError
from .tensor_core import (
    CanonicalTensor3,
    Grid1D,
    WindowSpec,
    directional_sum,
    tensor_sum,
    window,
)

SQRT_PI = np.sqrt(np.pi)


@dataclass(frozen=True)
class SincQuadrature:
    """Exponential sum ``sum_q w_q exp(-t_q^2 z^2)`` approximating ``1/z``."""

    M: int
    step: float
    nodes: np.ndarray
    weights: np.ndarray
    rule: str = "double_exponential"

    @property
    def rank(self) -> int:
        return self.nodes.shape[0]

    def evaluate(self, z):
        z = np.asarray(z, dtype=np.float64)
        return np.exp(-np.multiply.outer(z**2, self.nodes**2)) @ self.weights

    def max_relative_error(self, z):
        z = np.asarray(z, dtype=np.float64)
        return float(np.max(np.abs(self.evaluate(z) * z - 1.0)))


def build_sinc_quadrature(M: int, rule: str = "double_exponential", c: float | None = None) -> SincQuadrature:
    """Sinc quadrature for the Gaussian representation of ``1/z``.

    Parameters
    ----------
    M : int
        Half the number of terms; the rank is ``2M + 1``.
    rule : {"double_exponential", "exponential"}
        ``"exponential"`` substitutes ``t = exp(u)`` with step ``c/sqrt(M)``
        (default ``c = pi``).  ``"double_exponential"`` substitutes
        ``t = exp(u - exp(-u))`` with step ``c*log(M)/M`` (default ``c = 1``),
        which converges much faster near ``z = 1``.
    c : float, optional
        Step-size constant.

    Returns
    -------
    SincQuadrature
    """
    if int(M) != M or M < 1:
        raise DimensionError(f"M must be a positive integer, got {M}")
    M = int(M)
    q = np.arange(-M, M + 1, dtype=np.float64)
    if rule == "exponential":
        c = np.pi if c is None else float(c)
        h = c / np.sqrt(M)
        t = np.exp(q * h)
        w = 2.0 * h / SQRT_PI * t
    elif rule == "double_exponential":
        c = 1.0 if c is None else float(c)
        h = c * np.log(max(M, 2)) / M
        u = q * h
        t = np.exp(u - np.exp(-u))
        w = 2.0 * h / SQRT_PI * t * (1.0 + np.exp(-u))
    else:
        raise StructureError(f"unknown sinc rule {rule!r}")
    nodes = t.copy()
    weights = w.copy()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return SincQuadrature(M, float(h), nodes, weights, rule)


def gaussian_cell_integrals(edges: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Exact integrals of ``exp(-t^2 x^2)`` over consecutive cells.

    Returns an array of shape ``(len(edges) - 1, len(t))``.  Cells on one
    side of the origin use complementary error functions so far-field
    entries keep full relative accuracy.
    """
    a = np.multiply.outer(edges[:-1], t)
    b = np.multiply.outer(edges[1:], t)
    out = np.empty_like(a)
    right = edges[:-1] >= 0
    left = edges[1:] <= 0
    mid = ~(right | left)
    out[right] = erfc(a[right]) - erfc(b[right])
    out[left] = erfc(-b[left]) - erfc(-a[left])
    out[mid] = erf(b[mid]) - erf(a[mid])
    return out * (0.5 * SQRT_PI / t)


def newton_master_tensor(grids: Grid1D | Sequence[Grid1D], quad: SincQuadrature) -> CanonicalTensor3:
    """Master tensor of the Newton kernel on an origin-centred cell grid.

    Parameters
    ----------
    grids : Grid1D or sequence of three Grid1D
        Cell grids with an even number of cells.  Their origins are
        ignored; every grid is centred at zero.
    quad : SincQuadrature

    Returns
    -------
    CanonicalTensor3
        Rank ``2M+1``; entry ``i`` approximates ``int_{cell i} dx/|x|``.
    """
    if isinstance(grids, Grid1D):
        grids = (grids,) * 3
    if len(grids) != 3:
        raise DimensionError("need one grid per direction")
    factors = []
    for g in grids:
        if g.n % 2:
            raise DimensionError(f"master grid size must be even, got {g.n}")
        edges = (np.arange(g.n + 1) - g.n / 2) * g.h
        factors.append(gaussian_cell_integrals(edges, quad.nodes))
    return CanonicalTensor3(factors, quad.weights)


@dataclass(frozen=True)
class NucleiSet:
    """Nuclei of one unit cell, positions in cell-local coordinates."""

    positions: np.ndarray
    charges: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        z = np.atleast_1d(np.asarray(self.charges, dtype=np.float64))
        if pos.shape[1] != 3 or pos.shape[0] != z.shape[0]:
            raise DimensionError("need one 3D position per charge")
        if np.any(z <= 0):
            raise StructureError("nuclear charges must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "charges", z)

    @property
    def count(self) -> int:
        return self.charges.shape[0]

    def check_inside(self, b: float):
        if np.any(np.abs(self.positions) > b / 2 + 1e-12):
            raise BoundsError(f"nucleus outside the unit cell [-{b / 2}, {b / 2}]^3")


def snap_to_nodes(position, n: int, h: float):
    """Nearest grid node ``-b/2 + j*h`` of a cell-local position.

    Returns the integer node indices ``j`` (per direction) and the snap
    distance.
    """
    b = n * h
    x = np.asarray(position, dtype=np.float64)
    j = np.rint((x + b / 2) / h).astype(np.int64)
    j = np.clip(j, 0, n)
    dist = float(np.linalg.norm(x - (-b / 2 + j * h)))
    return j, dist


def _as3(v, name):
    v = tuple(int(x) for x in np.broadcast_to(np.asarray(v), (3,)))
    if any(x < 1 for x in v):
        raise DimensionError(f"{name} must be positive in every direction, got {v}")
    return v


def master_size_box(n: int, L: int, pad: int = 0) -> int:
    """Smallest master size covering every window of a padded box lattice."""
    return 2 * n * (L + pad)


def master_size_periodic(n: int, L: int) -> int:
    """Smallest master size covering every image shift of a periodic cell."""
    return 2 * n * (L // 2 + 1)


def nucleus_tensor(master: CanonicalTensor3, position, charge: float, n, h: float) -> CanonicalTensor3:
    """Potential of one nucleus on the unit-cell grid ``[-b/2, b/2]^3``.

    The position is snapped to the nearest grid node; the window is the
    corresponding integer shift of the master.
    """
    n = _as3(n, "n")
    shifts = []
    for l in range(3):
        j, _ = snap_to_nodes(np.asarray(position, dtype=float)[l], n[l], h)
        shifts.append(master.shape[l] // 2 - int(j))
    return window(master, WindowSpec(shifts, n)).scaled(charge)


def _image_offsets(L: int, periodic: bool) -> np.ndarray:
    if periodic:
        return np.arange(-(L // 2), L - L // 2)
    return np.arange(L)


def lattice_potential(master: CanonicalTensor3, nuclei: NucleiSet, L, n, h: float,
                      periodic=False, pad=0, method: str = "auto") -> CanonicalTensor3:
    """Lattice potential with a boundary model chosen per direction.

    In a periodic direction the images ``-floor(L/2) .. L-1-floor(L/2)``
    are accumulated onto the central cell (``n`` grid cells).  In an open
    direction the cells ``0 .. L-1`` are summed on a grid covering cells
    ``-pad .. L+pad-1``.  Rank stays ``M0*(2M+1)``.
    """
    n = _as3(n, "n")
    L = _as3(L, "L")
    periodic = tuple(bool(p) for p in np.broadcast_to(np.asarray(periodic), (3,)))
    pad = tuple(int(p) for p in np.broadcast_to(np.asarray(pad), (3,)))
    parts = []
    for pos, z in zip(nuclei.positions, nuclei.charges):
        shifts, sizes = [], []
        for l in range(3):
            j, _ = snap_to_nodes(pos[l], n[l], h)
            k = _image_offsets(L[l], periodic[l])
            p = 0 if periodic[l] else pad[l]
            base = master.shape[l] // 2 - p * n[l] - int(j)
            shifts.append(base - k * n[l])
            sizes.append(n[l] if periodic[l] else n[l] * (L[l] + 2 * p))
        for l, (s, m) in enumerate(zip(shifts, sizes)):
            if s.min() < 0 or s.max() + m > master.shape[l]:
                raise BoundsError(
                    f"master grid of size {master.shape[l]} too small for the lattice in direction {l + 1}"
                )
        parts.append(directional_sum(master, shifts, sizes, method=method).scaled(z))
    return tensor_sum(parts)


def lattice_potential_box(master: CanonicalTensor3, nuclei: NucleiSet, L, n, h: float,
                          pad=0, method: str = "auto") -> CanonicalTensor3:
    """Potential of an ``L1 x L2 x L3`` box lattice on its supercell grid.

    The grid covers cells ``-pad .. L+pad-1`` per direction, i.e.
    ``n*(L + 2*pad)`` cells of width ``h``; cell ``k`` spans
    ``[-b/2 + k*b, b/2 + k*b]``.  The rank is ``M0*(2M+1)`` for any ``L``.
    """
    return lattice_potential(master, nuclei, L, n, h, False, pad, method)


def lattice_potential_periodic_cell(master: CanonicalTensor3, nuclei: NucleiSet, L, n, h: float,
                                    method: str = "auto") -> CanonicalTensor3:
    """Periodic-model potential restricted to the central unit cell.

    Contributions of the ``L1*L2*L3`` cells with offsets
    ``-floor(L/2) .. L-1-floor(L/2)`` are accumulated onto the central
    cell grid.  Tiling the result gives the translation-invariant potential.
    """
    return lattice_potential(master, nuclei, L, n, h, True, 0, method)
