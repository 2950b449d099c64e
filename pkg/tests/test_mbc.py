import itertools

import numpy as np
import scipy.linalg
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_symmetric_gen
from tensorlattice.errors import DimensionError, ResourceCapError, StructureError
from tensorlattice.mbc import (
    BlockCirculant,
    GeneratingBlockTensor,
    SymBlockToeplitz,
    bc_block_diagonalize,
    bc_eigensolve,
    bc_matvec,
    bc_to_dense,
    cyclic_shift,
    expand_separable,
    factorized_block_diagonalize,
    fourier_matrix,
    kpoint_eigenvectors,
    toeplitz_embed,
    toeplitz_matvec,
)


def kron_oracle(gen):
    """sum_k P^k1 (x) ... (x) A_k, built from explicit permutation powers."""
    out = 0
    for k in itertools.product(*(range(L) for L in gen.dims)):
        term = np.ones((1, 1))
        for kl, L in zip(k, gen.dims):
            term = np.kron(term, np.linalg.matrix_power(cyclic_shift(L), kl))
        out = out + np.kron(term, gen[k])
    return out


def unitary_reconstruction(bd):
    F = np.ones((1, 1))
    for L in bd.dims:
        F = np.kron(F, fourier_matrix(L))
    m = bd.block_size
    I = np.eye(m)
    D = scipy.linalg.block_diag(*bd.flat_blocks())
    return np.kron(F.conj().T, I) @ D @ np.kron(F, I)


def scalar_gen(values):
    v = np.asarray(values, dtype=float)
    return GeneratingBlockTensor.from_array(v[..., None, None])


def test_cyclic_shift_and_fourier():
    P = cyclic_shift(3)
    assert np.array_equal(P @ np.array([1, 2, 3]), [3, 1, 2])
    F = fourier_matrix(5)
    assert np.allclose(F @ F.conj().T, np.eye(5))
    # F diagonalizes P with eigenvalues omega^j
    w = np.exp(-2j * np.pi * np.arange(5) / 5)
    assert np.allclose(F @ cyclic_shift(5) @ F.conj().T, np.diag(w))


def test_generating_tensor_keys():
    g = GeneratingBlockTensor((4,), 2)
    g[-1] = np.eye(2)
    assert np.array_equal(g[3], np.eye(2))
    assert np.array_equal(g[1], np.zeros((2, 2)))
    with pytest.raises(StructureError):
        g[3] = np.eye(2)
    with pytest.raises(DimensionError):
        g[0] = np.eye(3)
    with pytest.raises(DimensionError):
        GeneratingBlockTensor((2, 2, 2, 2), 1)


def test_dense_l2():
    assert np.array_equal(bc_to_dense(BlockCirculant(scalar_gen([2, 1]))), [[2, 1], [1, 2]])


def test_dense_l3_columns():
    a, b, c = 1.0, 5.0, 7.0
    D = bc_to_dense(BlockCirculant(scalar_gen([a, b, c])))
    assert np.array_equal(D[:, 0], [a, b, c])
    assert np.array_equal(D[:, 1], [c, a, b])
    assert np.array_equal(D[:, 2], [b, c, a])


def test_dense_kron_oracle_2d(rng):
    g = GeneratingBlockTensor.from_array(rng.standard_normal((2, 2, 1, 1)))
    assert np.allclose(bc_to_dense(BlockCirculant(g)), kron_oracle(g), atol=1e-15)


def test_dense_kron_oracle_3d_blocks(rng):
    g = GeneratingBlockTensor.from_array(rng.standard_normal((3, 2, 2, 2, 2)))
    assert np.allclose(bc_to_dense(BlockCirculant(g)), kron_oracle(g), atol=1e-14)


def test_dense_cap():
    g = GeneratingBlockTensor((64, 64), 2)
    with pytest.raises(ResourceCapError):
        bc_to_dense(BlockCirculant(g))


def test_block_diagonalize_l2():
    bd = bc_block_diagonalize(BlockCirculant(scalar_gen([2, 1])))
    assert np.allclose(bd.flat_blocks().ravel(), [3, 1])


def test_block_diagonalize_2x2():
    bd = bc_block_diagonalize(BlockCirculant(scalar_gen([[4, 1], [2, 1]])))
    assert np.allclose(bd.flat_blocks().ravel(), [8, 4, 2, 2])


def test_block_diagonalize_322_reconstruction(rng):
    g = random_symmetric_gen(rng, (3, 2, 2), 2)
    A = BlockCirculant(g)
    D = bc_to_dense(A)
    R = unitary_reconstruction(bc_block_diagonalize(A))
    assert np.linalg.norm(R - D) <= 1e-12 * np.linalg.norm(D)
    assert bc_block_diagonalize(A).hermitian_defect() <= 1e-13


@settings(max_examples=40, deadline=None)
@given(dims=st.lists(st.integers(1, 4), min_size=1, max_size=3), m=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_reconstruction_identity(dims, m, seed):
    rng = np.random.default_rng(seed)
    g = GeneratingBlockTensor.from_array(rng.standard_normal(tuple(dims) + (m, m)))
    A = BlockCirculant(g)
    D = bc_to_dense(A)
    bd = bc_block_diagonalize(A)
    assert np.linalg.norm(bd.reconstruct_dense() - D) <= 1e-12 * np.linalg.norm(D)
    assert np.linalg.norm(unitary_reconstruction(bd) - D) <= 1e-12 * np.linalg.norm(D)


def test_eigensolve_l4():
    spec = bc_eigensolve(BlockCirculant(scalar_gen([2, 1, 0, 1])))
    assert np.allclose(spec.sorted_values(), [0, 2, 2, 4], atol=1e-14)


def test_eigensolve_identity():
    g = GeneratingBlockTensor((3, 2), 2)
    g[0, 0] = np.eye(2)
    assert np.allclose(bc_eigensolve(BlockCirculant(g)).all_values(), 1.0)


def test_eigensolve_dense_oracle(rng):
    A = BlockCirculant(random_symmetric_gen(rng, (4, 1, 1), 3))
    ref = np.linalg.eigvalsh(bc_to_dense(A))
    got = bc_eigensolve(A).sorted_values()
    assert np.max(np.abs(got - ref)) <= 1e-11 * np.max(np.abs(ref))


def test_eigensolve_rejects_nonsymmetric(rng):
    g = GeneratingBlockTensor.from_array(rng.standard_normal((4, 2, 2)))
    with pytest.raises(StructureError):
        bc_eigensolve(BlockCirculant(g))
    spec = bc_eigensolve(BlockCirculant(g), symmetric=False)
    ref = np.linalg.eigvals(bc_to_dense(BlockCirculant(g)))
    assert np.allclose(np.sort_complex(spec.all_values()), np.sort_complex(ref), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(dims=st.lists(st.integers(1, 4), min_size=1, max_size=3), m=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_spectrum_union_and_hermitian_blocks(dims, m, seed):
    rng = np.random.default_rng(seed)
    A = BlockCirculant(random_symmetric_gen(rng, dims, m))
    bd = bc_block_diagonalize(A)
    assert bd.hermitian_defect() <= 1e-13
    spec = bc_eigensolve(A)
    assert np.max(np.abs(np.imag(spec.all_values()))) <= 1e-12
    ref = np.linalg.eigvalsh(bc_to_dense(A))
    assert np.allclose(spec.sorted_values(), ref, rtol=0, atol=1e-10 * np.max(np.abs(ref)))


def test_even_l_corollary_formula(rng):
    # Abar_j = A_0 + sum_{0<k<L/2} (w^jk A_k + w^-jk A_k^T) + (-1)^j A_{L/2}
    L, m = 6, 3
    g = random_symmetric_gen(rng, (L,), m)
    bd = bc_block_diagonalize(BlockCirculant(g)).flat_blocks()
    w = np.exp(-2j * np.pi / L)
    for j in range(L):
        ref = g[0] + (-1) ** j * g[L // 2]
        for k in range(1, L // 2):
            ref = ref + w ** (j * k) * g[k] + w ** (-j * k) * g[k].T
        assert np.allclose(bd[j], ref, atol=1e-13)


def test_kpoint_eigenvectors(rng):
    A = BlockCirculant(random_symmetric_gen(rng, (3, 2), 2))
    spec = bc_eigensolve(A, vectors=True)
    U = kpoint_eigenvectors(spec).T
    D = bc_to_dense(A)
    assert np.allclose(D @ U, U * spec.all_values()[None, :], atol=1e-12)
    assert np.allclose(U.conj().T @ U, np.eye(U.shape[0]), atol=1e-12)


def test_kpoint_eigenvectors_need_vectors(rng):
    spec = bc_eigensolve(BlockCirculant(random_symmetric_gen(rng, (3,), 1)))
    with pytest.raises(StructureError):
        kpoint_eigenvectors(spec)


def test_factorized_identity():
    e = np.zeros((3, 2, 2))
    e[0] = np.eye(2)
    e2 = np.zeros((2, 2, 2))
    e2[0] = np.ones((2, 2))
    f = factorized_block_diagonalize([[e, e2, e2]]).materialize()
    assert np.allclose(f.flat_blocks(), np.eye(2))


@pytest.mark.parametrize("rank", [1, 3])
def test_factorized_matches_full(rng, rank):
    dims, m = (3, 2, 2), 2
    terms = [[rng.standard_normal((L, m, m)) for L in dims] for _ in range(rank)]
    fact = factorized_block_diagonalize(terms)
    full = bc_block_diagonalize(BlockCirculant(expand_separable(terms)))
    assert np.max(np.abs(fact.materialize().blocks - full.blocks)) <= 1e-12 * np.max(np.abs(full.blocks))
    assert np.allclose(fact.block((2, 1, 0)), full.blocks[2, 1, 0])


def test_factorized_inconsistent():
    with pytest.raises(StructureError):
        factorized_block_diagonalize([[np.zeros((3, 2, 2)), np.zeros((2, 3, 3))]])
    with pytest.raises(StructureError):
        factorized_block_diagonalize([[np.zeros((3, 2, 2))], [np.zeros((4, 2, 2))]])


def test_matvec_identity_and_rowsums(rng):
    g = GeneratingBlockTensor((2, 3), 2)
    g[0, 0] = np.eye(2)
    x = rng.standard_normal(12)
    assert np.allclose(bc_matvec(BlockCirculant(g), x), x)
    assert np.allclose(bc_matvec(BlockCirculant(scalar_gen([2, 1])), np.ones(2)), [3, 3])
    with pytest.raises(DimensionError):
        bc_matvec(BlockCirculant(g), np.ones(5))


def test_matvec_dense_3d(rng):
    g = GeneratingBlockTensor.from_array(rng.standard_normal((3, 4, 2, 2, 2)))
    A = BlockCirculant(g)
    x = rng.standard_normal(g.size)
    ref = bc_to_dense(A) @ x
    assert np.linalg.norm(bc_matvec(A, x) - ref) <= 1e-12 * np.linalg.norm(ref)


def toeplitz_dense_oracle(gen):
    """1-level block (i, j) = A_{i-j} if i >= j else A_{j-i}^T."""
    L, m = gen.shape[0], gen.shape[1]
    out = np.zeros((L * m, L * m))
    for i in range(L):
        for j in range(L):
            blk = gen[i - j] if i >= j else gen[j - i].T
            out[i * m:(i + 1) * m, j * m:(j + 1) * m] = blk
    return out


def random_toeplitz_gen(rng, dims, m):
    g = rng.standard_normal(tuple(dims) + (m, m))
    z = (0,) * len(dims)
    g[z] = g[z] + g[z].T
    return g


def test_toeplitz_embed_small():
    T = SymBlockToeplitz(np.array([2.0, 1.0])[:, None, None])
    C = toeplitz_embed(T)
    assert np.allclose(C.gen.to_array().ravel(), [2, 1, 0, 1])
    assert np.array_equal(bc_to_dense(C)[:2, :2], [[2, 1], [1, 2]])


def test_toeplitz_dense_convention(rng):
    g = random_toeplitz_gen(rng, (5,), 2)
    assert np.array_equal(SymBlockToeplitz(g).to_dense(), toeplitz_dense_oracle(g))


def test_toeplitz_requires_symmetric_zero_block(rng):
    with pytest.raises(StructureError):
        SymBlockToeplitz(rng.standard_normal((3, 2, 2)))


def test_toeplitz_matvec_l8(rng):
    T = SymBlockToeplitz(random_toeplitz_gen(rng, (8,), 2))
    x = rng.standard_normal(16)
    ref = toeplitz_dense_oracle(T.gen) @ x
    assert np.linalg.norm(toeplitz_matvec(T, x) - ref) <= 1e-12 * np.linalg.norm(ref)


@settings(max_examples=30, deadline=None)
@given(dims=st.lists(st.integers(1, 4), min_size=1, max_size=3), m=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_toeplitz_embedding_principal_submatrix(dims, m, seed):
    rng = np.random.default_rng(seed)
    T = SymBlockToeplitz(random_toeplitz_gen(rng, dims, m))
    C = toeplitz_embed(T)
    assert C.gen.is_symmetric()
    D = bc_to_dense(C).reshape(tuple(2 * L for L in dims) + (m,) + tuple(2 * L for L in dims) + (m,))
    sl = tuple(slice(0, L) for L in dims)
    sub = D[sl + (slice(None),) + sl + (slice(None),)].reshape(T.size, T.size)
    dense = T.to_dense()
    assert np.array_equal(sub, dense)
    assert np.allclose(dense, dense.T)
    x = rng.standard_normal(T.size)
    assert np.allclose(toeplitz_matvec(T, x, C), dense @ x, atol=1e-12 * max(1, np.abs(dense).sum()))


def test_toeplitz_embedding_spectrum_interlaces(rng):
    # a principal submatrix interlaces the spectrum of its embedding
    T = SymBlockToeplitz(random_toeplitz_gen(rng, (6,), 2))
    lt = np.linalg.eigvalsh(T.to_dense())
    lc = np.linalg.eigvalsh(bc_to_dense(toeplitz_embed(T)))
    n, N = lt.size, lc.size
    for i in range(n):
        assert lc[i] - 1e-12 <= lt[i] <= lc[i + N - n] + 1e-12


def test_circulant_compatible_toeplitz_spectrum_not_preserved():
    # [[2,1],[1,2]] has spectrum {1,3}; its embedding gen [2,1,0,1] has {0,2,2,4}
    T = SymBlockToeplitz(np.array([2.0, 1.0])[:, None, None])
    lt = np.linalg.eigvalsh(T.to_dense())
    lc = np.linalg.eigvalsh(bc_to_dense(toeplitz_embed(T)))
    assert np.allclose(lt, [1, 3]) and np.allclose(lc, [0, 2, 2, 4])
