"""
A canonical tensor for 1/|x|
============================

Sinc quadrature writes 1/z as a short sum of Gaussians.  On a grid every
Gaussian is separable, so the whole kernel is a rank-(2M+1) tensor with
1D factors only.
"""

import numpy as np

from tensorlattice.newton_kernel import (
    NucleiSet,
    build_sinc_quadrature,
    lattice_potential_box,
    master_size_box,
    newton_master_tensor,
)
from tensorlattice.tensor_core import Grid1D

# Convergence of the exponential sum at a few distances
z = np.array([0.5, 1.0, 2.0, 5.0])
for M in (10, 20, 30, 40):
    q = build_sinc_quadrature(M)
    print(f"M={M:2d} rank={q.rank:3d} max rel. error={q.max_relative_error(z):.1e}")

# Master tensor with h = 0.25; entries are cell integrals of 1/|x|
b, n = 8.0, 32
h = b / n
master = newton_master_tensor(Grid1D(2 * n, h), build_sinc_quadrature(40))
a, bb, c = master.factors
i = (n + 4, n, n)
entry = master.weights @ (a[i[0]] * bb[i[1]] * c[i[2]])
rho = h * np.sqrt(4.5**2 + 0.5)
print("cell average / (1/rho):", entry / h**3 * rho)

# A chain of 512 cells has the same rank as a single nucleus pair
nuclei = NucleiSet([[-0.5, 0, 0], [0.5, 0, 0]], [1.0, 1.0])
b, n = 4.0, 8
h = b / n
q = build_sinc_quadrature(30)
for L in (1, 64, 512):
    big = newton_master_tensor([Grid1D(master_size_box(n, L), h), Grid1D(2 * n, h), Grid1D(2 * n, h)], q)
    pot = lattice_potential_box(big, nuclei, (L, 1, 1), n, h)
    print(f"L={L:4d} grid={pot.shape} rank={pot.rank}")
