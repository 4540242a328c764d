"""Numerics for the fractional heat operator and its inverse potential problem."""

from __future__ import annotations

from .core import (Ball, Field, Geometry, GridConfig, Rect, RegionMasks, SpectralField,
                   dft_forward, dft_inverse, inner, make_masks, read_fhf, sobolev_norm,
                   write_csv, write_fhf)
from .dnmap import DNRecord, alessandrini, dn_adjoint_apply, dn_apply
from .errors import (ConfigError, DomainError, EmptyMask, ExtrapolationError, FracalderonError,
                     GeometryError, HermitianViolation, NonConvergence, QuadratureError)
from .extension import bessel_k, extend, neumann_trace, trace_constant
from .forward import Potential, SolverOptions, solve_adjoint, solve_dirichlet
from .inverse import recover_potential, runge_control, tikhonov_reconstruct
from .operator import apply_kernel, apply_ls, apply_symbol, duality_check

__version__ = "0.1.0"
