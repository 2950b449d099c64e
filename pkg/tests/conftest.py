import numpy as np
import pytest

from tensorlattice.galerkin import GtoBasis, LatticeSystem
from tensorlattice.mbc import GeneratingBlockTensor
from tensorlattice.newton_kernel import NucleiSet
from tensorlattice.tensor_core import CanonicalTensor3


def random_cp(rng, shape, rank):
    return CanonicalTensor3([rng.standard_normal((n, rank)) for n in shape], rng.standard_normal(rank))


def random_symmetric_gen(rng, dims, m, spd_shift=0.0):
    """Random generating tensor with A_k^T = A_{-k}; optional diagonal boost."""
    a = rng.standard_normal(tuple(dims) + (m, m))
    axes = tuple(range(len(dims)))
    flipped = np.roll(np.flip(a, axis=axes), 1, axis=axes)
    a = 0.5 * (a + np.swapaxes(flipped, -1, -2))
    if spd_shift:
        a[(0,) * len(dims)] += spd_shift * np.eye(m)
    return GeneratingBlockTensor.from_array(a)


def chain_system(L, n=8, nbar=8, M=20, b=4.0, m0=4, **kw):
    centers = [[-0.5, 0, 0], [0.5, 0, 0], [-0.5, 0, 0], [0.5, 0, 0]][:m0]
    exps = [0.5, 0.5, 1.5, 1.5][:m0]
    return LatticeSystem(
        b=b, L=L, nuclei=NucleiSet([[-0.5, 0, 0], [0.5, 0, 0]], [1.0, 1.0]),
        basis=GtoBasis(centers, exps), n=n, nbar=nbar, M=M, **kw,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok, detail = results[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}: {detail}")
