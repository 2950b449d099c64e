"""
Spectrum of a Gaussian chain
============================

Four Gaussians per cell, two unit charges per cell, repeated along x.
The periodic model is solved per k-point; the open box is solved densely.
"""

from tensorlattice.eigensolver import (
    average_energy_per_cell,
    periodic_hamiltonian,
    solve_box_dense,
    solve_periodic,
    spectral_bands,
)
from tensorlattice.galerkin import (
    GtoBasis,
    LatticeSystem,
    box_circulant_defect,
    hamiltonian_box,
    hamiltonian_periodic,
)
from tensorlattice.newton_kernel import NucleiSet

basis = GtoBasis([[-0.5, 0, 0], [0.5, 0, 0], [-0.5, 0, 0], [0.5, 0, 0]], [0.5, 0.5, 1.5, 1.5])
nuclei = NucleiSet([[-0.5, 0, 0], [0.5, 0, 0]], [1.0, 1.0])


def chain(L):
    return LatticeSystem(b=4.0, L=(L, 1, 1), nuclei=nuclei, basis=basis, n=16, nbar=16, M=30)


s = chain(32)
print("N_b =", s.Nb, " overlap constant L0 =", s.L0)

# Periodic model: 32 small 4x4 pencils
lap, nuc, mass = hamiltonian_periodic(s)
spec = solve_periodic(periodic_hamiltonian(lap, nuc), mass)
bands = spectral_bands(spec)
for m, (lo, hi) in enumerate(bands.edges):
    print(f"band {m}: [{lo:+.4f}, {hi:+.4f}]")

# Box model: one dense 128x128 pencil
H, S = hamiltonian_box(s)
box = solve_box_dense(H, S, vectors=False).values
print("lowest box / periodic:", box[0], spec.sorted_values()[0])

# The boundary defect of the nuclear matrix shrinks relative to the matrix
for L in (8, 16, 32):
    print(f"L={L:2d} relative nuclear defect {box_circulant_defect(chain(L))[1]:.4f}")

# Energy per cell, one occupied level per cell.  The unscreened lattice sum
# grows like log L, so both columns drift; only their gap is meaningful.
for L in (8, 16, 32, 64):
    c = chain(L)
    lap, nuc, mass = hamiltonian_periodic(c)
    Ep = average_energy_per_cell(solve_periodic(periodic_hamiltonian(lap, nuc), mass).all_values(), L)
    Eb = average_energy_per_cell(solve_box_dense(*hamiltonian_box(c), vectors=False).values, L)
    print(f"L={L:2d} E_periodic={Ep:+.5f} E_box={Eb:+.5f}")
