"""Tensor-structured Galerkin matrices and FFT eigensolvers for lattice systems."""

from .errors import (
    BoundsError,
    ConfigError,
    DefinitenessError,
    DimensionError,
    NumericalError,
    ResourceCapError,
    StructureError,
    TensorLatticeError,
)
from .tensor_core import CanonicalTensor3, Grid1D, WindowSpec, dense_materialize, hadamard, inner, window
from .newton_kernel import NucleiSet, SincQuadrature, build_sinc_quadrature, newton_master_tensor
from .mbc import BlockCirculant, GeneratingBlockTensor, KPointSpectrum, SymBlockToeplitz
from .galerkin import GtoBasis, LatticeSystem, assemble_box, assemble_periodic
from .eigensolver import solve_box_dense, solve_periodic, solve_periodic_factorized

__all__ = [name for name in dir() if not name.startswith("_")]
