"""Multilevel block circulant and symmetric block Toeplitz matrices.

A d-level block circulant with lattice sizes ``L = (L_1, ..., L_d)`` and
block size ``m0`` is stored through its generating blocks ``A_k``::

    A = sum_k  P_{L_1}^{k_1} (x) ... (x) P_{L_d}^{k_d} (x) A_k

with ``P_L`` the downward cyclic shift.  It is block-diagonalized by the
unitary d-dimensional DFT ``F = F_{L_1} (x) ... (x) F_{L_d}``::

    A = (F^* (x) I) bdiag(Abar_j) (F (x) I),   Abar_j = sum_k omega^<j,k> A_k

with ``omega = exp(-2 pi i / L)`` per level.  Note the block sums are
unnormalized while ``F`` carries the ``1/sqrt(L)`` factors.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.fft

from .errors import DimensionError, NumericalError, ResourceCapError, StructureError

DEFAULT_DENSE_CAP = 4096
IMAG_TOL = 1e-10


def cyclic_shift(L: int) -> np.ndarray:
    """Cycling permutation ``P[a, b] = 1`` iff ``a = b + 1 (mod L)``."""
    return np.roll(np.eye(L), 1, axis=0)


def fourier_matrix(L: int) -> np.ndarray:
    """Unitary DFT matrix with entries ``omega^(j l) / sqrt(L)``."""
    j = np.arange(L)
    return np.exp(-2j * np.pi * np.outer(j, j) / L) / np.sqrt(L)


def _kron_all(mats):
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


class GeneratingBlockTensor:
    """Sparse map from lattice multi-index ``k`` to an ``m0 x m0`` block.

    Indices are taken modulo ``dims``, so signed offsets may be used as
    keys.  Unstored blocks are zero.
    """

    def __init__(self, dims: Sequence[int], block_size: int, blocks: Mapping | None = None):
        dims = tuple(int(L) for L in dims)
        if not 1 <= len(dims) <= 3 or any(L < 1 for L in dims):
            raise DimensionError(f"need 1 to 3 positive lattice sizes, got {dims}")
        self.dims = dims
        self.block_size = int(block_size)
        self.blocks: dict = {}
        for k, a in (blocks or {}).items():
            self[k] = a

    def _key(self, k):
        k = (k,) if np.isscalar(k) else tuple(k)
        if len(k) != len(self.dims):
            raise DimensionError(f"index {k} has wrong length for dims {self.dims}")
        return tuple(int(x) % L for x, L in zip(k, self.dims))

    def __setitem__(self, k, a):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim == 0 and self.block_size == 1:
            a = a.reshape(1, 1)
        if a.shape != (self.block_size, self.block_size):
            raise DimensionError(f"block has shape {a.shape}, expected {(self.block_size,) * 2}")
        key = self._key(k)
        if key in self.blocks:
            raise StructureError(f"block {key} assigned twice (aliasing of signed offsets)")
        self.blocks[key] = a.copy()

    def __getitem__(self, k):
        return self.blocks.get(self._key(k), np.zeros((self.block_size,) * 2))

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def nnz_blocks(self) -> int:
        return len(self.blocks)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims)) * self.block_size

    @classmethod
    def from_array(cls, arr: np.ndarray, drop_zeros: bool = True):
        """Build from a dense ``(L_1, ..., L_d, m0, m0)`` array."""
        arr = np.asarray(arr, dtype=np.float64)
        dims, m = arr.shape[:-2], arr.shape[-1]
        gen = cls(dims, m)
        for k in itertools.product(*(range(L) for L in dims)):
            if not drop_zeros or np.any(arr[k]):
                gen[k] = arr[k]
        return gen

    def to_array(self) -> np.ndarray:
        arr = np.zeros(self.dims + (self.block_size,) * 2)
        for k, a in self.blocks.items():
            arr[k] = a
        return arr

    def symmetry_defect(self) -> float:
        """Relative size of ``max_k |A_k^T - A_{-k}|``."""
        arr = self.to_array()
        axes = tuple(range(self.d))
        flipped = np.roll(np.flip(arr, axis=axes), 1, axis=axes)
        scale = max(float(np.max(np.abs(arr))), np.finfo(float).tiny)
        return float(np.max(np.abs(np.swapaxes(arr, -1, -2) - flipped))) / scale

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        return self.symmetry_defect() <= tol


@dataclass
class BlockCirculant:
    gen: GeneratingBlockTensor

    @property
    def dims(self):
        return self.gen.dims

    @property
    def block_size(self):
        return self.gen.block_size

    @property
    def shape(self):
        return (self.gen.size, self.gen.size)


@dataclass
class BlockDiagonalForm:
    """Diagonal blocks ``Abar_j`` stored as a ``(L_1, ..., L_d, m0, m0)`` array."""

    dims: tuple
    blocks: np.ndarray

    @property
    def block_size(self):
        return self.blocks.shape[-1]

    def flat_blocks(self) -> np.ndarray:
        return self.blocks.reshape((-1,) + self.blocks.shape[-2:])

    def hermitian_defect(self) -> float:
        b = self.blocks
        scale = max(float(np.max(np.abs(b))), np.finfo(float).tiny)
        return float(np.max(np.abs(b - np.conj(np.swapaxes(b, -1, -2))))) / scale

    def reconstruct_dense(self, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        """``(F^* (x) I) bdiag(blocks) (F (x) I)`` as a dense matrix."""
        m = self.block_size
        size = int(np.prod(self.dims)) * m
        if size > cap:
            raise ResourceCapError("dense reconstruction", size, cap)
        F = np.kron(_kron_all([fourier_matrix(L) for L in self.dims]), np.eye(m))
        D = np.zeros((size, size), dtype=complex)
        for j, blk in enumerate(self.flat_blocks()):
            D[j * m:(j + 1) * m, j * m:(j + 1) * m] = blk
        return F.conj().T @ D @ F


def bc_to_dense(A: BlockCirculant, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Dense expansion; block ``(i, j)`` equals ``A_{(i - j) mod L}``."""
    size = A.gen.size
    if size > cap:
        raise ResourceCapError("block circulant expansion", size, cap)
    dims, m = A.dims, A.block_size
    arr = A.gen.to_array()
    idx = np.indices(dims).reshape(len(dims), -1)
    diff = tuple((idx[l][:, None] - idx[l][None, :]) % dims[l] for l in range(len(dims)))
    blocks = arr[diff]  # (K, K, m, m)
    return blocks.transpose(0, 2, 1, 3).reshape(size, size)


def bc_block_diagonalize(A: BlockCirculant) -> BlockDiagonalForm:
    axes = tuple(range(A.gen.d))
    return BlockDiagonalForm(A.dims, scipy.fft.fftn(A.gen.to_array(), axes=axes))


@dataclass
class FactorizedBlockDiagonal:
    """Block-diagonal form kept as a sum of separable per-level factors.

    ``terms[r][l]`` is the 1D-transformed sequence of level ``l`` for term
    ``r``, shape ``(L_l, m0, m0)``.  Block ``j`` is
    ``sum_r prod_l terms[r][l][j_l]`` (entrywise products).
    """

    dims: tuple
    terms: list

    @property
    def block_size(self):
        return self.terms[0][0].shape[-1]

    @property
    def rank(self):
        return len(self.terms)

    def block(self, j) -> np.ndarray:
        out = 0
        for term in self.terms:
            out = out + np.prod([f[jl] for f, jl in zip(term, j)], axis=0)
        return out

    def materialize(self) -> BlockDiagonalForm:
        d, m = len(self.dims), self.block_size
        out = np.zeros(self.dims + (m, m), dtype=complex)
        for term in self.terms:
            prod = 1
            for l, f in enumerate(term):
                shape = [1] * d + [m, m]
                shape[l] = self.dims[l]
                prod = prod * f.reshape(shape)
            out += prod
        return BlockDiagonalForm(self.dims, out)


def factorized_block_diagonalize(terms: Sequence[Sequence[np.ndarray]]) -> FactorizedBlockDiagonal:
    """Block-diagonalize a separable generating tensor with 1D FFTs only.

    Parameters
    ----------
    terms : list of per-level sequences
        ``terms[r][l]`` has shape ``(L_l, m0, m0)``; the generating blocks
        are ``A_k = sum_r  terms[r][0][k_1] * ... * terms[r][d-1][k_d]``
        (entrywise products).

    Returns
    -------
    FactorizedBlockDiagonal
        Transformed factors; call ``materialize`` for the full block set.
    """
    if not terms:
        raise StructureError("need at least one separable term")
    d = len(terms[0])
    out = []
    dims = None
    m = None
    for term in terms:
        if len(term) != d:
            raise StructureError("all separable terms need the same number of levels")
        row = []
        for f in term:
            f = np.asarray(f, dtype=np.float64)
            if f.ndim != 3 or f.shape[1] != f.shape[2]:
                raise StructureError(f"level sequence must have shape (L, m0, m0), got {f.shape}")
            if m is None:
                m = f.shape[1]
            if f.shape[1] != m:
                raise StructureError(f"inconsistent block size {f.shape[1]} vs {m}")
            row.append(scipy.fft.fft(f, axis=0))
        tdims = tuple(f.shape[0] for f in row)
        if dims is None:
            dims = tdims
        if tdims != dims:
            raise StructureError(f"inconsistent lattice sizes {tdims} vs {dims}")
        out.append(row)
    return FactorizedBlockDiagonal(dims, out)


def expand_separable(terms, dims=None) -> GeneratingBlockTensor:
    """Generating tensor ``sum_r prod_l terms[r][l][k_l]`` (for checks)."""
    arr = 0
    for term in terms:
        d = len(term)
        prod = 1
        for l, f in enumerate(term):
            f = np.asarray(f, dtype=np.float64)
            shape = [1] * d + list(f.shape[1:])
            shape[l] = f.shape[0]
            prod = prod * f.reshape(shape)
        arr = arr + prod
    return GeneratingBlockTensor.from_array(arr)


@dataclass
class KPointSpectrum:
    """Eigenvalues per k-point, in lexicographic k order, ascending within.

    ``values`` has shape ``(prod(dims), m0)``; ``vectors`` (optional) has
    shape ``(prod(dims), m0, m0)`` with eigenvector ``m`` of k-point ``j``
    in ``vectors[j, :, m]``.
    """

    dims: tuple
    values: np.ndarray
    vectors: np.ndarray | None = None
    path: str = "fft"

    @property
    def block_size(self):
        return self.values.shape[1]

    @property
    def kpoints(self) -> np.ndarray:
        return np.array(list(itertools.product(*(range(L) for L in self.dims))), dtype=int)

    def all_values(self) -> np.ndarray:
        """Flat eigenvalues in the global (k-point, then ascending) order."""
        return self.values.reshape(-1)

    def sorted_values(self) -> np.ndarray:
        return np.sort(self.all_values())


def _hermitian_part(blocks, what="block"):
    scale = max(float(np.max(np.abs(blocks))), np.finfo(float).tiny)
    defect = float(np.max(np.abs(blocks - np.conj(np.swapaxes(blocks, -1, -2))))) / scale
    if defect > IMAG_TOL:
        raise NumericalError(f"{what} not Hermitian (relative defect {defect:.3e})")
    return 0.5 * (blocks + np.conj(np.swapaxes(blocks, -1, -2)))


def bc_eigensolve(A: BlockCirculant, symmetric: bool = True, vectors: bool = False) -> KPointSpectrum:
    """Spectrum of a block circulant as the union of block spectra."""
    bd = bc_block_diagonalize(A)
    blocks = bd.flat_blocks()
    if symmetric:
        defect = A.gen.symmetry_defect()
        if defect > 1e-12:
            raise StructureError(f"generating blocks violate A_k^T = A_(L-k) (defect {defect:.3e})")
        blocks = _hermitian_part(blocks)
        if vectors:
            w, u = np.linalg.eigh(blocks)
        else:
            w, u = np.linalg.eigvalsh(blocks), None
    else:
        w, u = np.linalg.eig(blocks)
        order = np.argsort(w.real, axis=1, kind="stable")
        w = np.take_along_axis(w, order, axis=1)
        u = np.take_along_axis(u, order[:, None, :], axis=2) if vectors else None
    return KPointSpectrum(A.dims, w, u, path="fft")


def kpoint_eigenvectors(spec: KPointSpectrum) -> np.ndarray:
    """Full-space eigenvectors ``U_{j,m} = (F^* (x) I) Ubar_{j,m}``.

    Returns an array of shape ``(N, K*m0)`` whose rows follow the global
    eigenvalue order of :meth:`KPointSpectrum.all_values`.
    """
    if spec.vectors is None:
        raise StructureError("spectrum carries no eigenvectors")
    dims, m = spec.dims, spec.block_size
    K = int(np.prod(dims))
    j = spec.kpoints / np.asarray(dims)  # (K, d)
    a = spec.kpoints  # cell indices, same lattice
    phase = np.exp(2j * np.pi * (j @ a.T)) / np.sqrt(K)  # (K_j, K_a)
    # U[j, m, a, :] = phase[j, a] * u[j, :, m]
    U = phase[:, None, :, None] * np.swapaxes(spec.vectors, 1, 2)[:, :, None, :]
    return U.reshape(K * m, K * m)


def bc_matvec(A: BlockCirculant, x: np.ndarray) -> np.ndarray:
    dims, m = A.dims, A.block_size
    x = np.asarray(x)
    if x.shape[0] != A.gen.size:
        raise DimensionError(f"vector length {x.shape[0]} does not match matrix size {A.gen.size}")
    axes = tuple(range(len(dims)))
    xh = scipy.fft.fftn(x.reshape(dims + (m,)), axes=axes, norm="ortho")
    blocks = bc_block_diagonalize(A).blocks
    yh = np.einsum("...ab,...b->...a", blocks, xh)
    y = scipy.fft.ifftn(yh, axes=axes, norm="ortho").reshape(-1)
    return y.real if np.isrealobj(x) else y


@dataclass
class SymBlockToeplitz:
    """Symmetric multilevel block Toeplitz matrix.

    ``gen`` has shape ``(L_1, ..., L_d, m0, m0)`` and holds the blocks for
    nonnegative offsets.  A signed offset with a negative component is
    mapped back by negating that component and all later ones and
    transposing, which gives ``B(-delta) = B(delta)^T``.
    """

    gen: np.ndarray

    def __post_init__(self):
        self.gen = np.asarray(self.gen, dtype=np.float64)
        if self.gen.ndim < 3 or self.gen.ndim > 5 or self.gen.shape[-1] != self.gen.shape[-2]:
            raise DimensionError(f"generator must have shape (L..., m0, m0), got {self.gen.shape}")
        a0 = self.gen[(0,) * len(self.dims)]
        if np.max(np.abs(a0 - a0.T)) > 1e-12 * max(np.max(np.abs(a0)), 1.0):
            raise StructureError("zero-offset block of a symmetric Toeplitz matrix must be symmetric")

    @property
    def dims(self):
        return self.gen.shape[:-2]

    @property
    def block_size(self):
        return self.gen.shape[-1]

    @property
    def size(self):
        return int(np.prod(self.dims)) * self.block_size

    def block(self, delta) -> np.ndarray:
        delta = list(delta)
        for l, v in enumerate(delta):
            if v < 0:
                flipped = delta[:l] + [-x for x in delta[l:]]
                return self.block(flipped).T
        return self.gen[tuple(delta)]

    def to_dense(self, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        if self.size > cap:
            raise ResourceCapError("Toeplitz expansion", self.size, cap)
        m = self.block_size
        cells = list(itertools.product(*(range(L) for L in self.dims)))
        out = np.zeros((self.size, self.size))
        for a, i in enumerate(cells):
            for b, j in enumerate(cells):
                out[a * m:(a + 1) * m, b * m:(b + 1) * m] = self.block(np.subtract(i, j))
        return out


def toeplitz_embed(T: SymBlockToeplitz) -> BlockCirculant:
    """Symmetric block circulant of size ``2L`` per level containing ``T``."""
    dims = T.dims
    big = tuple(2 * L for L in dims)
    gen = GeneratingBlockTensor(big, T.block_size)
    for c in itertools.product(*(range(B) for B in big)):
        if any(cl == L for cl, L in zip(c, dims)):
            continue
        delta = [cl if cl < L else cl - 2 * L for cl, L in zip(c, dims)]
        blk = T.block(delta)
        if np.any(blk):
            gen[c] = blk
    return BlockCirculant(gen)


def toeplitz_matvec(T: SymBlockToeplitz, x: np.ndarray, embedded: BlockCirculant | None = None) -> np.ndarray:
    dims, m = T.dims, T.block_size
    x = np.asarray(x)
    if x.shape[0] != T.size:
        raise DimensionError(f"vector length {x.shape[0]} does not match matrix size {T.size}")
    C = embedded if embedded is not None else toeplitz_embed(T)
    xp = np.zeros(tuple(2 * L for L in dims) + (m,), dtype=x.dtype)
    xp[tuple(slice(0, L) for L in dims)] = x.reshape(dims + (m,))
    y = bc_matvec(C, xp.reshape(-1)).reshape(C.dims + (m,))
    return y[tuple(slice(0, L) for L in dims)].reshape(-1)
