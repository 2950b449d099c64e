"""
Block circulant matrices and the FFT
====================================

A block circulant matrix is fixed by its generating blocks.  The lattice
FFT turns it into a block-diagonal matrix, so its spectrum is the union of
the spectra of small blocks.
"""

import numpy as np

from tensorlattice.mbc import (
    BlockCirculant,
    GeneratingBlockTensor,
    SymBlockToeplitz,
    bc_block_diagonalize,
    bc_eigensolve,
    bc_matvec,
    bc_to_dense,
    toeplitz_embed,
)

rng = np.random.default_rng(0)

# A one-level scalar circulant: first column (2, 1, 0, 1)
A = BlockCirculant(GeneratingBlockTensor((4,), 1, {(0,): [[2.0]], (1,): [[1.0]], (3,): [[1.0]]}))
print(bc_to_dense(A))
print("blocks:", bc_block_diagonalize(A).flat_blocks().ravel().real)

# Two levels with 3x3 blocks.  Symmetry needs A_k^T = A_{-k}.
dims, m = (4, 3), 3
gen = GeneratingBlockTensor(dims, m)
for k in [(0, 0), (1, 0), (0, 1), (1, 1)]:
    B = rng.standard_normal((m, m))
    if k == (0, 0):
        gen[k] = B + B.T
    else:
        gen[k] = B
        gen[tuple(-x for x in k)] = B.T
A = BlockCirculant(gen)

# k-point spectra against one dense eigensolve of the 36x36 matrix
spec = bc_eigensolve(A)
dense = np.linalg.eigvalsh(bc_to_dense(A))
print("k-points:", len(spec.kpoints), "eigenvalues per k-point:", spec.block_size)
print("max deviation from dense:", np.max(np.abs(spec.sorted_values() - dense)))

# Matrix-vector products never form the matrix
x = rng.standard_normal(A.gen.size)
print("matvec error:", np.linalg.norm(bc_matvec(A, x) - bc_to_dense(A) @ x))

# A symmetric Toeplitz matrix sits inside a circulant twice its size
T = SymBlockToeplitz(np.array([2.0, 1.0, 0.5])[:, None, None])
C = toeplitz_embed(T)
print(T.to_dense())
print("embedding generator:", C.gen.to_array().ravel())
