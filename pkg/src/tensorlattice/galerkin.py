"""Galerkin matrices of the core Hamiltonian in a separable Gaussian basis.

Geometry: unit cell ``k`` (integer multi-index) occupies
``[-b/2 + k*b, b/2 + k*b]`` per direction.  The basis of cell ``k`` is the
cell-0 basis translated by ``k*b``.  Every basis function is truncated to
the ``2W+1`` cells around its home cell (``W = L0 + 1``), which makes
translated samples exact index shifts.

Two discretizations coexist:

* the nuclear potential uses piecewise-constant cell samples on the
  ``n``-grid (``h = b/n``), contracted with the canonical potential tensor;
* kinetic and mass terms use piecewise-linear nodal interpolation on the
  ``nbar``-grid (``hbar = b/nbar``) with the 1D FEM tridiagonal forms.

All operators are built from per-direction 1D tables indexed by the cell
offset ``s``, so no 3D grid array is ever formed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ResourceCapError, StructureError
from .mbc import BlockCirculant, GeneratingBlockTensor, bc_to_dense
from .newton_kernel import (
    NucleiSet,
    build_sinc_quadrature,
    lattice_potential,
    newton_master_tensor,
)
from .tensor_core import CanonicalTensor3, Grid1D, hadamard, inner

DEFAULT_EPS_OV = 1e-8
DEFAULT_BOX_CAP = 8192


@dataclass(frozen=True)
class GtoBasis:
    """Separable Gaussians ``prod_l (x_l - c_l)^d_l exp(-alpha |x - c|^2)``."""

    centers: np.ndarray
    exponents: np.ndarray
    degrees: np.ndarray | None = None

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        a = np.atleast_1d(np.asarray(self.exponents, dtype=np.float64))
        if c.shape[1] != 3 or c.shape[0] != a.shape[0] or a.shape[0] < 1:
            raise DimensionError("need one 3D center per exponent and at least one function")
        if np.any(a <= 0):
            raise StructureError("Gaussian exponents must be positive")
        d = np.zeros(c.shape, dtype=int) if self.degrees is None else np.asarray(self.degrees, dtype=int)
        if d.shape != c.shape or np.any(d < 0):
            raise DimensionError("degrees must be nonnegative, one triple per function")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "exponents", a)
        object.__setattr__(self, "degrees", d)

    @property
    def m0(self) -> int:
        return self.exponents.shape[0]

    def factor(self, mu: int, l: int, x: np.ndarray) -> np.ndarray:
        """1D factor of function ``mu`` in direction ``l`` at points ``x``."""
        y = x - self.centers[mu, l]
        return y ** self.degrees[mu, l] * np.exp(-self.exponents[mu] * y * y)


@dataclass(frozen=True)
class Fem1D:
    """1D piecewise-linear FEM matrices on ``n`` nodes of spacing ``h``."""

    n: int
    h: float
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    periodic: bool = False


def fem_1d(nbar: int, h: float, periodic: bool = False) -> Fem1D:
    """Stiffness ``tridiag(-1,2,-1)/h`` and mass ``h/6 tridiag(1,4,1)``.

    With ``periodic=True`` the corner entries couple the last node to the
    first one, giving circulant matrices.
    """
    if nbar < 1 or not h > 0:
        raise DimensionError(f"need nbar >= 1 and h > 0, got {nbar}, {h}")

    def tri(diag, off):
        m = sp.diags([off, diag, off], [-1, 0, 1], shape=(nbar, nbar), format="lil")
        if periodic and nbar > 2:
            m[0, nbar - 1] = off
            m[nbar - 1, 0] = off
        return m.tocsr()

    return Fem1D(nbar, h, tri(2.0 / h, -1.0 / h), tri(4.0 * h / 6.0, h / 6.0), periodic)


def _tri_form(u, v, diag, off):
    """``u^T T v`` for the constant tridiagonal ``T`` on a line, batched."""
    return diag * np.sum(u * v, axis=-1) + off * (
        np.sum(u[..., 1:] * v[..., :-1], axis=-1) + np.sum(u[..., :-1] * v[..., 1:], axis=-1)
    )


def overlap_constant(basis: GtoBasis, b: float, eps: float = DEFAULT_EPS_OV, max_cells: int = 64,
                     samples_per_cell: int = 400) -> int:
    """Cell-overlap constant of a translated basis.

    Smallest ``L0`` such that, for every pair of functions and every
    direction, translating one of them by ``s`` cells with ``|s| > L0``
    makes the maximum of the product of their factors (times the unshifted
    factor-product maxima of the other two directions) fall below ``eps``.
    """
    m = basis.m0
    L0 = 0
    for l in range(3):
        lo = basis.centers[:, l].min() - 12.0 / np.sqrt(basis.exponents.min()) - b
        hi = basis.centers[:, l].max() + 12.0 / np.sqrt(basis.exponents.min()) + b
        x = np.linspace(lo, hi + max_cells * b, int((hi - lo) / b + max_cells + 1) * samples_per_cell)
        g = np.array([basis.factor(mu, l, x) for mu in range(m)])
        sup0 = {}
        for k in range(3):
            gk = np.array([basis.factor(mu, k, x) for mu in range(m)])
            sup0[k] = np.max(np.abs(gk[:, None, :] * gk[None, :, :]), axis=-1)
        others = np.ones((m, m))
        for k in range(3):
            if k != l:
                others = others * sup0[k]
        for s in range(1, max_cells):
            shift = int(round(s * b / (x[1] - x[0])))
            a = g[:, None, shift:] * g[None, :, :-shift]  # g_mu(x) g_nu(x - s b)
            sup = np.max(np.abs(a), axis=-1) * others
            sup = np.maximum(sup, sup.T)
            if np.max(sup) >= eps:
                L0 = max(L0, s)
    return L0


def _line_points(n_per_cell: int, b: float, W: int, midpoints: bool):
    h = b / n_per_cell
    i = np.arange((2 * W + 1) * n_per_cell)
    return -b / 2 - W * b + (i + (0.5 if midpoints else 0.0)) * h


def sample_line(basis: GtoBasis, l: int, n_per_cell: int, b: float, W: int, midpoints: bool) -> np.ndarray:
    """Samples of every basis factor on the ``2W+1`` cells around cell 0.

    Returns shape ``(m0, (2W+1)*n_per_cell)``.
    """
    x = _line_points(n_per_cell, b, W, midpoints)
    return np.array([basis.factor(mu, l, x) for mu in range(basis.m0)])


def _shifted(v: np.ndarray, shift: int) -> np.ndarray:
    """``out[..., j] = v[..., j - shift]`` with zero fill."""
    out = np.zeros_like(v)
    if shift >= 0:
        out[..., shift:] = v[..., : v.shape[-1] - shift]
    else:
        out[..., :shift] = v[..., -shift:]
    return out


def _sample_on_grid(basis, grids, b, k, W, midpoints):
    out = []
    for mu in range(basis.m0):
        factors = []
        for l, g in enumerate(grids):
            x = g.points - k[l] * b
            f = basis.factor(mu, l, x)
            if W is not None:
                f = np.where(np.abs(x) < (W + 0.5) * b - 1e-12 * b, f, 0.0)
            edge = max(abs(f[0]), abs(f[-1]))
            if edge > 1e-10 * max(np.max(np.abs(f)), 1e-300):
                warnings.warn(
                    f"basis function {mu} is truncated by the grid in direction {l + 1} "
                    f"(edge value {edge:.2e})",
                    RuntimeWarning,
                    stacklevel=3,
                )
            factors.append(f)
        out.append(CanonicalTensor3.rank1(*factors))
    return out


def sample_basis_pwc(basis: GtoBasis, grids: Sequence[Grid1D], b: float, k=(0, 0, 0),
                     window_cells: int | None = None) -> list:
    """Cell-midpoint samples of the basis translated to cell ``k``.

    ``grids`` are midpoint grids in global coordinates.  With
    ``window_cells = W`` each function is cut to its ``2W+1`` home cells.
    """
    return _sample_on_grid(basis, grids, b, k, window_cells, True)


def sample_basis_pwl(basis: GtoBasis, grids: Sequence[Grid1D], b: float, k=(0, 0, 0),
                     window_cells: int | None = None) -> list:
    """Nodal values (piecewise-linear interpolation coefficients)."""
    return _sample_on_grid(basis, grids, b, k, window_cells, False)


def _fems(fem):
    return (fem,) * 3 if isinstance(fem, Fem1D) else tuple(fem)


def _form(u, v, m):
    return float(u @ (m @ v))


def mass_block(Gk: CanonicalTensor3, Gm: CanonicalTensor3, fem) -> float:
    fems = _fems(fem)
    if Gk.shape != Gm.shape or Gk.shape != tuple(f.n for f in fems):
        raise DimensionError("nodal tensors and FEM grids disagree in size")
    out = 0.0
    for q in range(Gk.rank):
        for r in range(Gm.rank):
            out += Gk.weights[q] * Gm.weights[r] * np.prod(
                [_form(Gk.factors[l][:, q], Gm.factors[l][:, r], fems[l].mass) for l in range(3)]
            )
    return float(out)


def laplace_block(Gk: CanonicalTensor3, Gm: CanonicalTensor3, fem) -> float:
    """``<A3 Gk, Gm>`` with ``A3 = A(x)S(x)S + S(x)A(x)S + S(x)S(x)A``."""
    fems = _fems(fem)
    if Gk.shape != Gm.shape or Gk.shape != tuple(f.n for f in fems):
        raise DimensionError("nodal tensors and FEM grids disagree in size")
    out = 0.0
    for q in range(Gk.rank):
        for r in range(Gm.rank):
            u = [Gk.factors[l][:, q] for l in range(3)]
            v = [Gm.factors[l][:, r] for l in range(3)]
            s = [_form(u[l], v[l], fems[l].mass) for l in range(3)]
            a = [_form(u[l], v[l], fems[l].stiffness) for l in range(3)]
            term = a[0] * s[1] * s[2] + s[0] * a[1] * s[2] + s[0] * s[1] * a[2]
            out += Gk.weights[q] * Gm.weights[r] * term
    return float(out)


def nuclear_block(Gk: CanonicalTensor3, Gm: CanonicalTensor3, pot: CanonicalTensor3) -> float:
    """``<Gk * Gm, P>`` by 1D contractions."""
    return inner(hadamard(Gk, Gm), pot)


@dataclass
class AssembledOperator:
    """Galerkin matrix in box (dense) or periodic (generating blocks) form.

    ``terms`` holds the separable per-level factorization of the periodic
    generating tensor: ``terms[r][l]`` has shape ``(L_l, m0, m0)``.
    """

    which: str
    representation: str
    payload: object
    rank: int
    L0: int
    terms: list | None = None

    @property
    def dense(self) -> np.ndarray:
        if self.representation == "box_dense_blocks":
            return self.payload
        return bc_to_dense(BlockCirculant(self.payload))


@dataclass
class LatticeSystem:
    """Geometry, basis and discretization of a lattice of unit cells."""

    b: float
    L: tuple
    nuclei: NucleiSet
    basis: GtoBasis
    n: int = 16
    nbar: int = 16
    M: int = 30
    eps_ov: float = DEFAULT_EPS_OV
    rule: str = "double_exponential"
    L0_override: int | None = None
    dense_cap: int = DEFAULT_BOX_CAP
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.L = tuple(int(x) for x in np.broadcast_to(np.asarray(self.L), (3,)))
        if any(x < 1 for x in self.L):
            raise DimensionError(f"lattice sizes must be positive, got {self.L}")
        if self.n < 1 or self.nbar < 1 or not self.b > 0:
            raise DimensionError("need n, nbar >= 1 and b > 0")
        self.nuclei.check_inside(self.b)

    @property
    def m0(self) -> int:
        return self.basis.m0

    @property
    def Nb(self) -> int:
        return self.m0 * int(np.prod(self.L))

    @property
    def active(self) -> tuple:
        return tuple(L > 1 for L in self.L)

    @cached_property
    def L0(self) -> int:
        if self.L0_override is not None:
            return int(self.L0_override)
        return overlap_constant(self.basis, self.b, self.eps_ov)

    @property
    def W(self) -> int:
        return self.L0 + 1

    @property
    def h(self) -> float:
        return self.b / self.n

    @property
    def hbar(self) -> float:
        return self.b / self.nbar

    def offsets(self, l: int) -> np.ndarray:
        r = self.L0 if self.active[l] else 0
        return np.arange(-r, r + 1)

    @cached_property
    def quadrature(self):
        return build_sinc_quadrature(self.M, rule=self.rule)

    def pwc_samples(self, l):
        return sample_line(self.basis, l, self.n, self.b, self.W, True)

    def pwl_samples(self, l):
        return sample_line(self.basis, l, self.nbar, self.b, self.W, False)

    @cached_property
    def line_forms(self) -> dict:
        """1D mass and stiffness forms ``F[mu, nu, s + L0]`` per direction.

        ``F[mu, nu, s]`` pairs function ``mu`` of cell 0 with function
        ``nu`` of cell ``s``.
        """
        L0, hb, nb = self.L0, self.hbar, self.nbar
        out = {"mass": [], "stiff": []}
        for l in range(3):
            g = self.pwl_samples(l)
            line = np.zeros((self.m0, (2 * self.W + 2 * L0 + 1) * nb))
            u = line.copy()
            u[:, L0 * nb: L0 * nb + g.shape[1]] = g
            S = np.zeros((self.m0, self.m0, 2 * L0 + 1))
            A = np.zeros_like(S)
            for i, s in enumerate(range(-L0, L0 + 1)):
                v = line.copy()
                v[:, (L0 + s) * nb: (L0 + s) * nb + g.shape[1]] = g
                S[:, :, i] = _tri_form(u[:, None, :], v[None, :, :], 4.0 * hb / 6.0, hb / 6.0)
                A[:, :, i] = _tri_form(u[:, None, :], v[None, :, :], 2.0 / hb, -1.0 / hb)
            out["mass"].append(S)
            out["stiff"].append(A)
        return out

    def master_for(self, periodic: Sequence[bool]):
        """Master tensor large enough for the requested boundary model."""
        sizes = []
        for l in range(3):
            if periodic[l]:
                sizes.append(2 * self.n * (self.L[l] // 2 + 1))
            else:
                sizes.append(2 * self.n * (self.L[l] + self.W))
        key = ("master", tuple(sizes))
        if key not in self._cache:
            grids = [Grid1D(s, self.h) for s in sizes]
            self._cache[key] = newton_master_tensor(grids, self.quadrature)
        return self._cache[key]

    def potential(self, boundary: str) -> CanonicalTensor3:
        """Lattice potential tensor for ``boundary`` in {"box", "periodic"}.

        Box: cells ``-W .. L+W-1`` per direction.  Periodic: the central
        cell in active directions; inactive directions stay open and padded.
        """
        key = ("pot", boundary)
        if key not in self._cache:
            periodic = tuple(a and boundary == "periodic" for a in self.active)
            master = self.master_for(periodic)
            self._cache[key] = lattice_potential(
                master, self.nuclei, self.L, self.n, self.h, periodic=periodic, pad=self.W
            )
        return self._cache[key]


def _nuclear_tables(system: LatticeSystem, boundary: str):
    """``X[l]`` of shape ``(K_l, R, m0, m0, S_l)``: 1D potential moments.

    ``K_l`` is the number of home cells (``L_l`` for open directions and 1
    for periodic ones, by translation invariance).
    """
    pot = system.potential(boundary)
    n, W = system.n, system.W
    w = (2 * W + 1) * n
    tables = []
    for l in range(3):
        g = system.pwc_samples(l)
        offs = system.offsets(l)
        prods = np.stack([g[:, None, :] * _shifted(g, s * n)[None, :, :] for s in offs], axis=-2)
        col = pot.factors[l]
        if system.active[l] and boundary == "periodic":
            col = np.tile(col, (2 * W + 1, 1))
            homes = 1
        else:
            homes = system.L[l]
        views = sliding_window_view(col, w, axis=0)[: homes * n: n]  # (K, R, w)
        tables.append(np.einsum("krw,absw->krabs", views, prods, optimize=True))
    return tables, pot.weights


def _block_factor_terms(system: LatticeSystem, which: str):
    """Per-direction factors ``T[r][l][mu, nu, s]`` (home-cell independent).

    Only valid for translation-invariant operators (mass, laplace) and for
    periodic nuclear tables.
    """
    lf = system.line_forms
    sel = [system.offsets(l) + system.L0 for l in range(3)]
    S = [lf["mass"][l][:, :, sel[l]] for l in range(3)]
    A = [lf["stiff"][l][:, :, sel[l]] for l in range(3)]
    if which == "mass":
        return [S]
    if which == "laplace":
        return [[A[0], S[1], S[2]], [S[0], A[1], S[2]], [S[0], S[1], A[2]]]
    raise StructureError(f"unknown operator {which!r}")


def _combine(factors, offsets_index):
    out = 1.0
    for f, i in zip(factors, offsets_index):
        out = out * f[..., i]
    return out


def _check_cap(N, cap):
    if N > cap:
        raise ResourceCapError("box matrix", N, cap)


def assemble_box(system: LatticeSystem, which: str) -> AssembledOperator:
    """Dense box Galerkin matrix; cell-major ordering ``(k1, k2, k3, mu)``.

    ``which`` is one of ``"mass"``, ``"laplace"``, ``"nuclear"``.  Only
    block pairs with cell separation at most ``L0`` are filled.
    """
    L, m = system.L, system.m0
    N = system.Nb
    _check_cap(N, system.dense_cap)
    offs = [system.offsets(l) for l in range(3)]
    out = np.zeros(L + (m,) + L + (m,))
    if which == "nuclear":
        X, wts = _nuclear_tables(system, "box")
        rank = wts.shape[0]
    else:
        terms = _block_factor_terms(system, which)
        rank = len(terms)
    for i0, s0 in enumerate(offs[0]):
        for i1, s1 in enumerate(offs[1]):
            for i2, s2 in enumerate(offs[2]):
                s = (s0, s1, s2)
                src = tuple(slice(max(0, -sl), Ll - max(0, sl)) for sl, Ll in zip(s, L))
                dst = tuple(slice(max(0, sl), Ll - max(0, -sl)) for sl, Ll in zip(s, L))
                if any(a.start >= a.stop for a in src):
                    continue
                idx = (i0, i1, i2)
                if which == "nuclear":
                    # blk[k, mu, nu] = sum_r w_r prod_l X_l[k_l, r, mu, nu, s_l]
                    x0 = X[0][src[0], :, :, :, i0]
                    x1 = X[1][src[1], :, :, :, i1]
                    x2 = X[2][src[2], :, :, :, i2]
                    blk = np.einsum("r,arij,brij,crij->abcij", wts, x0, x1, x2, optimize=True)
                else:
                    blk = sum(_combine(t, idx) for t in terms)
                    blk = np.broadcast_to(blk, tuple(a.stop - a.start for a in src) + (m, m))
                # rows: home cell k (mu); cols: cell k + s (nu)
                _place_band(out, src, dst, blk)
    return AssembledOperator(which, "box_dense_blocks", out.reshape(N, N), rank, system.L0)


def _place_band(out, src, dst, blk):
    """Write ``blk[a, b, c]`` into block (k, k + s) for every home cell."""
    ka = np.arange(src[0].start, src[0].stop)
    kb = np.arange(src[1].start, src[1].stop)
    kc = np.arange(src[2].start, src[2].stop)
    da = ka + (dst[0].start - src[0].start)
    db = kb + (dst[1].start - src[1].start)
    dc = kc + (dst[2].start - src[2].start)
    A, B, C = np.meshgrid(np.arange(ka.size), np.arange(kb.size), np.arange(kc.size), indexing="ij")
    out[ka[A], kb[B], kc[C], :, da[A], db[B], dc[C], :] = blk[A, B, C]


def periodic_terms(system: LatticeSystem, which: str) -> list:
    """Separable per-level sequences of the periodic generating tensor.

    ``terms[r][l]`` has shape ``(L_l, m0, m0)``; the generating block at
    lattice index ``delta`` is ``sum_r prod_l terms[r][l][delta_l]``
    (entrywise).  Block ``delta`` sits at block position ``(i, i - delta)``,
    so it equals the cell-offset form at ``s = -delta``.
    """
    L, m = system.L, system.m0
    for l in range(3):
        if system.active[l] and L[l] <= 2 * system.L0:
            raise StructureError(
                f"periodic assembly needs L > 2*L0 in every active direction "
                f"(direction {l + 1}: L={L[l]}, L0={system.L0})"
            )
    if which == "nuclear":
        X, wts = _nuclear_tables(system, "periodic")
        factors = []
        for r in range(wts.shape[0]):
            factors.append([X[l][0, r] * (wts[r] if l == 0 else 1.0) for l in range(3)])
    else:
        factors = _block_factor_terms(system, which)
    terms = []
    for fac in factors:
        row = []
        for l in range(3):
            seq = np.zeros((L[l], m, m))
            for i, s in enumerate(system.offsets(l)):
                seq[(-s) % L[l]] = fac[l][:, :, i]
            row.append(seq)
        terms.append(row)
    return terms


def assemble_periodic(system: LatticeSystem, which: str) -> AssembledOperator:
    """Generating blocks of the symmetric block-circulant periodic matrix."""
    terms = periodic_terms(system, which)
    L, m = system.L, system.m0
    gen = GeneratingBlockTensor(L, m)
    offs = [system.offsets(l) for l in range(3)]
    for s0 in offs[0]:
        for s1 in offs[1]:
            for s2 in offs[2]:
                delta = ((-s0) % L[0], (-s1) % L[1], (-s2) % L[2])
                blk = sum(t[0][delta[0]] * t[1][delta[1]] * t[2][delta[2]] for t in terms)
                gen[delta] = blk
    bound = int(np.prod([len(o) for o in offs]))
    if gen.nnz_blocks > bound:
        raise StructureError(f"{gen.nnz_blocks} generating blocks exceed the band bound {bound}")
    rank = {"mass": 1, "laplace": 3}.get(which, len(terms))
    return AssembledOperator(which, "periodic_generating_blocks", gen, rank, system.L0, terms)


def box_block_row_counts(op: AssembledOperator, m0: int) -> np.ndarray:
    """Number of nonzero ``m0 x m0`` blocks in each block row."""
    A = op.dense
    nb = A.shape[0] // m0
    blocks = np.abs(A.reshape(nb, m0, nb, m0)).max(axis=(1, 3)) > 0
    return blocks.sum(axis=1)


def box_circulant_defect(system: LatticeSystem, which: str = "nuclear"):
    """Box matrix minus the dense periodic (block circulant) matrix.

    Returns ``(D, ||D||_F / ||box||_F)``.
    """
    box = assemble_box(system, which).dense
    per = assemble_periodic(system, which).dense
    D = box - per
    return D, float(np.linalg.norm(D) / np.linalg.norm(box))


def hamiltonian_box(system: LatticeSystem):
    """Dense ``H = A/2 - V`` and ``S`` of the box model."""
    A = assemble_box(system, "laplace").dense
    V = assemble_box(system, "nuclear").dense
    S = assemble_box(system, "mass").dense
    return 0.5 * A - V, S


def hamiltonian_periodic(system: LatticeSystem):
    """Generating operators ``(laplace, nuclear, mass)`` of the periodic model."""
    return (
        assemble_periodic(system, "laplace"),
        assemble_periodic(system, "nuclear"),
        assemble_periodic(system, "mass"),
    )
