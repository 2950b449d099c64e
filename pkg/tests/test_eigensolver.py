import time

import numpy as np
import pytest
import scipy.linalg

from conftest import chain_system, random_symmetric_gen
from tensorlattice.errors import DefinitenessError, ResourceCapError, StructureError
from tensorlattice.eigensolver import (
    average_energy_per_cell,
    factorization_residual,
    factorized_pencil,
    hamiltonian_terms,
    periodic_hamiltonian,
    reconstruct_eigenvectors,
    solve_box_dense,
    solve_kpoint_pencils,
    solve_periodic,
    solve_periodic_factorized,
    spectral_bands,
)
from tensorlattice.galerkin import GtoBasis, LatticeSystem, hamiltonian_box, hamiltonian_periodic
from tensorlattice.mbc import BlockCirculant, GeneratingBlockTensor, bc_block_diagonalize, bc_to_dense
from tensorlattice.newton_kernel import NucleiSet


def random_spd(rng, n):
    X = rng.standard_normal((n, n))
    return X @ X.T + n * np.eye(n)


def shift_invert_oracle(H, S, sigma=-50.0):
    """lambda = sigma + 1/mu with mu the eigenvalues of (H - sigma S)^-1 S."""
    Sh = scipy.linalg.cholesky(S, lower=True)
    mu = np.linalg.eigvals(Sh.T @ scipy.linalg.solve(H - sigma * S, Sh))
    return np.sort(sigma + 1.0 / mu.real)


def spd_pencil_gens(rng, dims, m):
    H = random_symmetric_gen(rng, dims, m)
    S = random_symmetric_gen(rng, dims, m)
    # make every Sbar_j positive definite by a dominant zero block
    arr = S.to_array()
    z = (0,) * len(dims)
    arr[z] += (np.abs(arr).sum() + 1.0) * np.eye(m)
    return H, GeneratingBlockTensor.from_array(arr)


def small_system(L, m0=2, **kw):
    centers = [[-0.5, 0, 0], [0.5, 0.25, 0], [0, -0.3, 0.2]][:m0]
    kw.setdefault("n", 4)
    kw.setdefault("nbar", 4)
    kw.setdefault("M", 10)
    return LatticeSystem(b=4.0, L=L, nuclei=NucleiSet([[-0.5, 0, 0], [0.5, 0, 0]], [1.0, 1.0]),
                         basis=GtoBasis(centers, [1.0, 2.0, 1.5][:m0]), **kw)


# dense box path


def test_dense_identity_pencil(rng):
    S = random_spd(rng, 6)
    assert np.allclose(solve_box_dense(S, S).values, 1.0)


def test_dense_scalar_pencil():
    s = small_system((1, 1, 1), m0=1)
    H, S = hamiltonian_box(s)
    assert H.shape == (1, 1)
    assert np.isclose(solve_box_dense(H, S).values[0], H[0, 0] / S[0, 0], rtol=1e-15)


def test_dense_vs_shift_invert(rng):
    for n in (5, 20, 40):
        H = rng.standard_normal((n, n))
        H = H + H.T
        S = random_spd(rng, n)
        spec = solve_box_dense(H, S)
        ref = shift_invert_oracle(H, S)
        assert np.max(np.abs(spec.values - ref)) <= 1e-11 * np.max(np.abs(ref))
        C = spec.vectors
        assert np.max(np.abs(C.T @ S @ C - np.eye(n))) <= 1e-10


def test_dense_indefinite_mass(rng):
    H = np.eye(3)
    S = np.diag([1.0, -1.0, 1.0])
    with pytest.raises(DefinitenessError):
        solve_box_dense(H, S)


def test_dense_cap():
    with pytest.raises(ResourceCapError):
        solve_box_dense(np.eye(10), np.eye(10), cap=8)


# periodic FFT path


def test_periodic_scalar_formula(rng):
    H, S = spd_pencil_gens(rng, (5,), 1)
    spec = solve_periodic(H, S)
    hb = bc_block_diagonalize(BlockCirculant(H)).flat_blocks()[:, 0, 0]
    sb = bc_block_diagonalize(BlockCirculant(S)).flat_blocks()[:, 0, 0]
    assert np.allclose(spec.values[:, 0], (hb / sb).real, rtol=1e-13)


@pytest.mark.parametrize("dims,m", [((4, 1, 1), 2), ((2, 2, 2), 3), ((3, 4), 2)])
def test_periodic_vs_dense_pencil(rng, dims, m):
    H, S = spd_pencil_gens(rng, dims, m)
    spec = solve_periodic(H, S)
    ref = solve_box_dense(bc_to_dense(BlockCirculant(H)), bc_to_dense(BlockCirculant(S)), vectors=False).values
    assert spec.values.shape == (int(np.prod(dims)), m)
    assert np.max(np.abs(spec.sorted_values() - ref)) <= 1e-10 * np.max(np.abs(ref))


def test_periodic_kpoint_residuals(rng):
    H, S = spd_pencil_gens(rng, (3, 2), 3)
    spec = solve_periodic(H, S, vectors=True)
    Hb = bc_block_diagonalize(BlockCirculant(H)).flat_blocks()
    Sb = bc_block_diagonalize(BlockCirculant(S)).flat_blocks()
    for j in range(6):
        u, w = spec.vectors[j], spec.values[j]
        r = Hb[j] @ u - Sb[j] @ u * w
        assert np.linalg.norm(r) <= 1e-9 * np.linalg.norm(Hb[j])


def test_periodic_definiteness_names_kpoint():
    H = GeneratingBlockTensor((4,), 1, {0: [[1.0]]})
    S = GeneratingBlockTensor((4,), 1, {0: [[1.0]], 1: [[0.5]], 3: [[0.5]]})
    # Sbar_j = 1 + cos(pi j / 2) vanishes at j = 2
    with pytest.raises(DefinitenessError, match="k-point 2"):
        solve_periodic(H, S)


def test_kpoint_pencil_mismatched_generators(rng):
    H, S = spd_pencil_gens(rng, (4,), 2)
    with pytest.raises(StructureError):
        solve_periodic(H, GeneratingBlockTensor((5,), 2, {0: np.eye(2)}))


def test_periodic_system_vs_dense():
    s = chain_system((8, 1, 1), n=8, nbar=8, M=10)
    lap, nuc, mass = hamiltonian_periodic(s)
    H = periodic_hamiltonian(lap, nuc)
    spec = solve_periodic(H, mass)
    ref = solve_box_dense(bc_to_dense(BlockCirculant(H)), mass.dense, vectors=False).values
    assert np.max(np.abs(spec.sorted_values() - ref)) <= 1e-10 * np.max(np.abs(ref))


# factorized path


def test_factorized_mass_only():
    s = small_system((5, 1, 1))
    lap, nuc, mass = hamiltonian_periodic(s)
    fh, fs = factorized_pencil(lap, nuc, mass)
    Sb = fs.materialize().flat_blocks()
    w, _ = solve_kpoint_pencils(Sb, Sb)
    assert np.allclose(w, 1.0, atol=1e-12)


def test_factorized_matches_general_3d():
    s = small_system((4, 4, 4), L0_override=1)
    lap, nuc, mass = hamiltonian_periodic(s)
    for op in (lap, nuc, mass):
        assert factorization_residual(op) <= 1e-12
    a = solve_periodic(periodic_hamiltonian(lap, nuc), mass).sorted_values()
    b = solve_periodic_factorized(lap, nuc, mass).sorted_values()
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(a))


def test_factorized_matches_general_442():
    # L = 2 needs L0 = 0 for an unaliased periodic band
    s = small_system((4, 4, 2), L0_override=0)
    lap, nuc, mass = hamiltonian_periodic(s)
    a = solve_periodic(periodic_hamiltonian(lap, nuc), mass).sorted_values()
    b = solve_periodic_factorized(lap, nuc, mass).sorted_values()
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(a))


def test_factorized_rejects_stale_terms():
    s = small_system((5, 1, 1))
    lap, nuc, mass = hamiltonian_periodic(s)
    mass.terms[0][0] = mass.terms[0][0] * 1.01
    with pytest.raises(StructureError, match="residual"):
        solve_periodic_factorized(lap, nuc, mass)
    lap.terms = None
    with pytest.raises(StructureError):
        factorization_residual(lap)


def test_factorized_construction_time_2d():
    from tensorlattice.mbc import factorized_block_diagonalize

    rng = np.random.default_rng(3)
    m = 4

    def run(L):
        terms = [[rng.standard_normal((L, m, m)), rng.standard_normal((L, m, m)), np.ones((1, m, m))]
                 for _ in range(5)]
        factorized_block_diagonalize(terms)
        ts = []
        for _ in range(5):
            t0 = time.perf_counter()
            factorized_block_diagonalize(terms)
            ts.append(time.perf_counter() - t0)
        return np.median(ts)

    assert run(64) / run(16) <= 8


# eigenvectors and bands


def test_reconstruct_single_cell(rng):
    H, S = spd_pencil_gens(rng, (1,), 3)
    spec = solve_periodic(H, S, vectors=True)
    assert np.allclose(reconstruct_eigenvectors(spec), spec.vectors[0])


def test_reconstruct_constant_kzero():
    H = GeneratingBlockTensor((6,), 1, {k: [[1.0]] for k in range(6)})
    S = GeneratingBlockTensor((6,), 1, {0: [[1.0]]})
    spec = solve_periodic(H, S, vectors=True)
    U = reconstruct_eigenvectors(spec)
    top = np.argmax(spec.all_values())
    assert np.isclose(spec.all_values()[top], 6.0)
    v = U[:, top]
    assert np.allclose(v / v[0], 1.0)


def test_reconstruct_residual_chain():
    s = small_system((8, 1, 1))
    lap, nuc, mass = hamiltonian_periodic(s)
    Hg = periodic_hamiltonian(lap, nuc)
    spec = solve_periodic(Hg, mass, vectors=True)
    U = reconstruct_eigenvectors(spec)
    Hd, Sd = bc_to_dense(BlockCirculant(Hg)), mass.dense
    R = Hd @ U - Sd @ U * spec.all_values()[None, :]
    assert np.linalg.norm(R) <= 1e-8 * np.linalg.norm(Hd)
    assert np.max(np.abs(U.conj().T @ Sd @ U - np.eye(U.shape[0]))) <= 1e-9


def test_bands_bookkeeping(rng):
    H, S = spd_pencil_gens(rng, (5,), 1)
    spec = solve_periodic(H, S)
    bands = spectral_bands(spec)
    assert bands.count == 1 and np.array_equal(bands.bands[0], spec.values[:, 0])
    H, S = spd_pencil_gens(rng, (3, 2), 3)
    spec = solve_periodic(H, S)
    bands = spectral_bands(spec)
    assert bands.bands.shape == (3, 6)
    dense = solve_box_dense(bc_to_dense(BlockCirculant(H)), bc_to_dense(BlockCirculant(S)), vectors=False).values
    lo, hi = bands.edges[:, 0].min(), bands.edges[:, 1].max()
    assert lo <= dense.min() + 1e-12 and hi >= dense.max() - 1e-12
    assert np.all(np.diff(bands.edges[:, 0]) >= 0)


# energy


def test_energy_trivial():
    assert average_energy_per_cell(np.array([3.0, -1.0, 2.0]), 1, n_occ=2) == 1.0
    assert average_energy_per_cell(np.full(12, 0.7), 4, n_occ=3) == pytest.approx(3 * 0.7)
    with pytest.raises(StructureError):
        average_energy_per_cell(np.ones(4), 2, n_occ=3)


@pytest.mark.slow
def test_energy_relaxation_periodic_chain():
    E = []
    for L in (8, 16, 32, 64, 128):
        s = chain_system((L, 1, 1), n=32, nbar=32, M=30)
        lap, nuc, mass = hamiltonian_periodic(s)
        spec = solve_periodic(periodic_hamiltonian(lap, nuc), mass)
        E.append(average_energy_per_cell(spec.all_values(), L))
    d = np.abs(np.diff(E))
    assert np.all(np.diff(d) < 0)
