"""Dirichlet-to-Neumann map, its adjoint and the Alessandrini identity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Field, RegionMasks, inner
from .errors import GeometryError
from .forward import (ForwardSolution, Potential, SolverOptions, restricted_matrix,
                      solve_dirichlet)
from .operator import apply_ls, symbol


@dataclass(frozen=True, eq=False)
class DNRecord:
    input: Field
    output: Field             # restricted to the output window
    exterior_output: Field    # L^s u (or L^s_* u) on every node outside omega_T
    solution: ForwardSolution

    @property
    def solution_diag(self) -> dict:
        sol = self.solution
        return {"interior_residual": sol.interior_residual,
                "krylov_iters": sol.krylov_iters, "krylov_relres": sol.krylov_relres}


def _require_support(f: Field, window: np.ndarray, name: str):
    if np.any(f.values[~window] != 0):
        raise GeometryError(f"datum must be supported on the {name}")


def _record(datum: Field, sol: ForwardSolution, s: float, masks: RegionMasks,
            out_window: np.ndarray, adjoint: bool) -> DNRecord:
    lu = apply_ls(sol.u, s, adjoint=adjoint)
    return DNRecord(datum, lu.masked(out_window), lu.masked(~masks.omega_T), sol)


def dn_apply(f: Field, Q: Potential, s: float, masks: RegionMasks,
             opts: SolverOptions = SolverOptions()) -> DNRecord:
    """``Lambda_Q f = L^s u_f`` observed on the measurement window."""
    _require_support(f, masks.control_window, "control window")
    sol = solve_dirichlet(f, None, Q, s, masks, opts)
    return _record(f, sol, s, masks, masks.measure_window, adjoint=False)


def dn_adjoint_apply(g: Field, Q: Potential, s: float, masks: RegionMasks,
                     opts: SolverOptions = SolverOptions()) -> DNRecord:
    """``Lambda_Q^* g = L^s_* u_g`` observed on the control window."""
    _require_support(g, masks.measure_window, "measurement window")
    sol = solve_dirichlet(g, None, Q, s, masks, opts, adjoint=True)
    return _record(g, sol, s, masks, masks.control_window, adjoint=True)


def dn_pairing(record: DNRecord, g: Field) -> float:
    """``<Lambda f, g>`` for any datum ``g`` supported off omega_T."""
    return inner(record.exterior_output, g)


@dataclass(frozen=True)
class AlessandriniResult:
    lhs: float
    rhs: float
    residual: float


def alessandrini(Q1: Potential, Q2: Potential, f1: Field, f2: Field, s: float,
                 masks: RegionMasks, opts: SolverOptions = SolverOptions(),
                 eps: float = 1e-300) -> AlessandriniResult:
    """Both sides of ``<(Lambda_1 - Lambda_2) f1, f2> = ((Q1 - Q2) u1, u2)_{omega_T}``.

    The left side comes from two forward solves with the same datum; the
    right side uses the Q1 forward solution and the Q2 adjoint solution.
    """
    r1 = dn_apply(f1, Q1, s, masks, opts)
    r2 = dn_apply(f1, Q2, s, masks, opts)
    lhs = dn_pairing(r1, f2) - dn_pairing(r2, f2)
    u2 = dn_adjoint_apply(f2, Q2, s, masks, opts).solution.u
    dq = Field(masks.grid, (Q1 - Q2).values)
    rhs = inner(dq * r1.solution.u, u2, masks.omega_T)
    return AlessandriniResult(lhs, rhs, abs(lhs - rhs) / (abs(lhs) + abs(rhs) + eps))


def alessandrini_dense(Q1: Potential, Q2: Potential, f1: Field, f2: Field, s: float,
                       masks: RegionMasks) -> tuple[float, float]:
    """Dense-factorization oracle for both sides of the identity (small grids only)."""
    grid = masks.grid
    om = masks.omega_T
    sym_f = symbol(grid, s, "forward")
    sym_a = symbol(grid, s, "adjoint")

    def lop(values, sym):
        return np.fft.ifftn(np.fft.fftn(values) * sym).real

    def solve(Q, datum, adjoint):
        A = restricted_matrix(Q, s, masks, adjoint)
        rhs = -lop(datum.values, sym_a if adjoint else sym_f)[om]
        u = datum.values.copy()
        u[om] = np.linalg.solve(A, rhs)
        return u

    u1 = solve(Q1, f1, False)
    u1b = solve(Q2, f1, False)
    u2 = solve(Q2, f2, True)
    dv = grid.cell_volume
    lhs = float(np.sum((lop(u1, sym_f) - lop(u1b, sym_f)) * f2.values) * dv)
    rhs = float(np.sum(((Q1 - Q2).values * u1 * u2)[om]) * dv)
    return lhs, rhs
