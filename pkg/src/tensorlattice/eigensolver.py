"""Generalized eigenproblems ``H C = S C Lambda`` for box and periodic lattices.

The box model is solved densely.  The periodic model is block-diagonalized
by the lattice FFT and every k-point pencil ``(Hbar_j, Sbar_j)`` of size
``m0`` is reduced by a Cholesky factorization of ``Sbar_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DefinitenessError, NumericalError, ResourceCapError, StructureError
from .galerkin import AssembledOperator
from .mbc import (
    BlockCirculant,
    GeneratingBlockTensor,
    KPointSpectrum,
    bc_block_diagonalize,
    expand_separable,
    factorized_block_diagonalize,
    kpoint_eigenvectors,
)

DEFAULT_DENSE_CAP = 4096
IMAG_TOL = 1e-10


@dataclass
class DenseSpectrum:
    values: np.ndarray
    vectors: np.ndarray | None = None


@dataclass
class BandStructure:
    """``bands[m, j]`` is the m-th eigenvalue at k-point ``j``."""

    bands: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.stack([self.bands.min(axis=1), self.bands.max(axis=1)], axis=1)

    @property
    def count(self) -> int:
        return self.bands.shape[0]


def solve_box_dense(H: np.ndarray, S: np.ndarray, vectors: bool = True, cap: int = DEFAULT_DENSE_CAP,
                    driver: str = "gvd") -> DenseSpectrum:
    """All eigenpairs of the symmetric-definite pencil ``(H, S)``.

    Eigenvectors are S-orthonormal.  Raises :class:`DefinitenessError` if
    ``S`` is not positive definite.
    """
    N = H.shape[0]
    if N > cap:
        raise ResourceCapError("dense generalized eigensolver", N, cap)
    try:
        if vectors:
            w, v = scipy.linalg.eigh(H, S, driver=driver)
        else:
            w, v = scipy.linalg.eigh(H, S, eigvals_only=True, driver=driver), None
    except np.linalg.LinAlgError as exc:
        raise DefinitenessError(f"mass matrix is not positive definite: {exc}") from exc
    return DenseSpectrum(w, v)


def _gen_of(op) -> GeneratingBlockTensor:
    if isinstance(op, AssembledOperator):
        if op.representation != "periodic_generating_blocks":
            raise StructureError("periodic solver needs generating-block operators")
        return op.payload
    if isinstance(op, BlockCirculant):
        return op.gen
    return op


def _check_hermitian(blocks, what):
    scale = max(float(np.max(np.abs(blocks))), np.finfo(float).tiny)
    defect = float(np.max(np.abs(blocks - np.conj(np.swapaxes(blocks, -1, -2))))) / scale
    if defect > IMAG_TOL:
        raise NumericalError(f"{what} blocks are not Hermitian (relative defect {defect:.2e})")
    return 0.5 * (blocks + np.conj(np.swapaxes(blocks, -1, -2)))


def solve_kpoint_pencils(Hb: np.ndarray, Sb: np.ndarray, vectors: bool = False):
    """Batched Hermitian-definite pencils via Cholesky reduction.

    ``Hb`` and ``Sb`` have shape ``(K, m0, m0)``.  Returns eigenvalues of
    shape ``(K, m0)`` and, if requested, S-orthonormal eigenvectors.
    """
    Hb = _check_hermitian(Hb, "Hamiltonian")
    Sb = _check_hermitian(Sb, "mass")
    try:
        C = np.linalg.cholesky(Sb)
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvalsh(Sb)[:, 0]
        j = int(np.argmin(lam))
        raise DefinitenessError(
            f"mass block at k-point {j} is not positive definite (min eigenvalue {lam[j]:.3e})"
        ) from None
    X = np.linalg.solve(C, Hb)
    Y = np.linalg.solve(C, np.conj(np.swapaxes(X, -1, -2)))
    Y = 0.5 * (Y + np.conj(np.swapaxes(Y, -1, -2)))
    if not vectors:
        return np.linalg.eigvalsh(Y), None
    w, z = np.linalg.eigh(Y)
    u = np.linalg.solve(np.conj(np.swapaxes(C, -1, -2)), z)
    return w, u


def solve_periodic(H, S, vectors: bool = False) -> KPointSpectrum:
    """k-point spectrum of a block circulant pencil.

    Parameters
    ----------
    H, S
        Generating-block operators (or tensors) of the Hamiltonian and
        the mass matrix.  Use :func:`periodic_hamiltonian` to combine the
        kinetic and nuclear parts.
    """
    gH, gS = _gen_of(H), _gen_of(S)
    if gH.dims != gS.dims or gH.block_size != gS.block_size:
        raise StructureError("Hamiltonian and mass generators disagree in lattice or block size")
    Hb = bc_block_diagonalize(BlockCirculant(gH)).flat_blocks()
    Sb = bc_block_diagonalize(BlockCirculant(gS)).flat_blocks()
    w, u = solve_kpoint_pencils(Hb, Sb, vectors)
    return KPointSpectrum(gH.dims, w, u, path="fft")


def periodic_hamiltonian(laplace: AssembledOperator, nuclear: AssembledOperator) -> GeneratingBlockTensor:
    """Generating blocks of ``H = A/2 - V``."""
    gA, gV = _gen_of(laplace), _gen_of(nuclear)
    out = GeneratingBlockTensor(gA.dims, gA.block_size)
    for k in set(gA.blocks) | set(gV.blocks):
        out[k] = 0.5 * gA[k] - gV[k]
    return out


def factorization_residual(op: AssembledOperator) -> float:
    """Relative mismatch between the stored blocks and their separable form."""
    if op.terms is None:
        raise StructureError(f"{op.which} operator carries no separable factorization")
    expanded = expand_separable(op.terms).to_array()
    stored = op.payload.to_array()
    return float(np.linalg.norm(expanded - stored) / max(np.linalg.norm(stored), np.finfo(float).tiny))


def hamiltonian_terms(laplace: AssembledOperator, nuclear: AssembledOperator) -> list:
    """Separable terms of ``A/2 - V`` (weights folded into level 1)."""
    terms = [[0.5 * t[0]] + list(t[1:]) for t in laplace.terms]
    terms += [[-t[0]] + list(t[1:]) for t in nuclear.terms]
    return terms


def factorized_pencil(laplace: AssembledOperator, nuclear: AssembledOperator, mass: AssembledOperator,
                      check: bool = True, tol: float = 1e-10):
    """1D-FFT factorized k-space blocks of the Hamiltonian and mass."""
    if check:
        for op in (laplace, nuclear, mass):
            res = factorization_residual(op)
            if res > tol:
                raise StructureError(f"{op.which} factorization residual {res:.2e} exceeds {tol:.0e}")
    fh = factorized_block_diagonalize(hamiltonian_terms(laplace, nuclear))
    fs = factorized_block_diagonalize(mass.terms)
    return fh, fs


def solve_periodic_factorized(laplace: AssembledOperator, nuclear: AssembledOperator,
                              mass: AssembledOperator, vectors: bool = False,
                              check: bool = True) -> KPointSpectrum:
    """Periodic spectrum from separable coefficient tensors and 1D FFTs."""
    fh, fs = factorized_pencil(laplace, nuclear, mass, check=check)
    Hb = fh.materialize().flat_blocks()
    Sb = fs.materialize().flat_blocks()
    w, u = solve_kpoint_pencils(Hb, Sb, vectors)
    return KPointSpectrum(fh.dims, w, u, path="fft-factorized")


def reconstruct_eigenvectors(spec: KPointSpectrum) -> np.ndarray:
    """Full-space eigenvectors as columns, in the global eigenvalue order."""
    return kpoint_eigenvectors(spec).T


def spectral_bands(spec: KPointSpectrum) -> BandStructure:
    return BandStructure(np.asarray(spec.values).T.copy())


def average_energy_per_cell(values: np.ndarray, ncells: int, n_occ: int = 1) -> float:
    """Sum of the lowest ``n_occ * ncells`` eigenvalues divided by ``ncells``."""
    values = np.sort(np.asarray(values).reshape(-1))
    k = n_occ * ncells
    if k > values.size:
        raise StructureError(f"{k} occupied levels requested but only {values.size} eigenvalues")
    return float(values[:k].sum() / ncells)
