"""Matrix-free solver for the exterior/initial value problem of ``L^s + Q``.

The unknowns are the node values on ``omega_T``.  Given exterior data ``f``
(vanishing on ``omega_T`` and in the past buffer) and a source ``F`` the
solver finds ``v`` on ``omega_T`` with

    P (L^s (f + v) + Q (f + v)) = P F,

where ``P`` restricts to ``omega_T``.  The adjoint problem replaces ``L^s``
by ``L^s_*`` and the past buffer by the future buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, gmres

from .core import Field, RegionMasks, dft_forward, inner
from .errors import GeometryError, NonConvergence
from .operator import apply_ls, symbol


@dataclass(frozen=True, eq=False)
class Potential:
    """Bounded potential on ``omega_T``, stored over the full grid (zero elsewhere)."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        vals = np.where(self.mask, np.asarray(self.values, dtype=float), 0.0)
        if not np.all(np.isfinite(vals)):
            raise ValueError("potential must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def bound(self) -> float:
        return float(np.max(np.abs(self.values)))

    @classmethod
    def zero(cls, masks: RegionMasks) -> "Potential":
        return cls(np.zeros(masks.grid.shape), masks.omega_T)

    @classmethod
    def constant(cls, masks: RegionMasks, c: float) -> "Potential":
        return cls(np.full(masks.grid.shape, float(c)), masks.omega_T)

    @classmethod
    def bump(cls, masks: RegionMasks, center, width: float, amplitude: float) -> "Potential":
        """Gaussian ``amplitude * exp(-|(t,x) - center|^2 / (2 width^2))`` on ``omega_T``."""
        coords = masks.grid.coords()
        center = np.broadcast_to(np.asarray(center, dtype=float), (len(coords),))
        r2 = sum((c - c0) ** 2 for c, c0 in zip(coords, center))
        return cls(amplitude * np.exp(-r2 / (2 * width**2)), masks.omega_T)

    @classmethod
    def from_field(cls, masks: RegionMasks, field: Field) -> "Potential":
        return cls(field.values, masks.omega_T)

    def __sub__(self, other: "Potential") -> "Potential":
        return Potential(self.values - other.values, self.mask)

    def __add__(self, other: "Potential") -> "Potential":
        return Potential(self.values + other.values, self.mask)

    def __neg__(self) -> "Potential":
        return Potential(-self.values, self.mask)

    def scaled(self, c: float) -> "Potential":
        return Potential(c * self.values, self.mask)

    def as_field(self, grid) -> Field:
        return Field(grid, self.values)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iters: int = 2000
    restart: int = 50
    preconditioner: str | None = None  # None or "symbol"

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    u: Field
    interior_residual: float
    krylov_iters: int
    krylov_relres: float
    adjoint: bool = False


class RestrictedOperator(LinearOperator):
    """``v -> P (L^s E v + Q E v)`` on ``omega_T`` node vectors (``E`` extends by zero)."""

    def __init__(self, Q: Potential, s: float, masks: RegionMasks, adjoint: bool = False):
        self.masks = masks
        self.s = s
        self.adjoint = adjoint
        self.grid = masks.grid
        self.mask = masks.omega_T
        self.sym = symbol(self.grid, s, "adjoint" if adjoint else "forward")
        self.q = Q.values[self.mask]
        n = int(self.mask.sum())
        super().__init__(dtype=float, shape=(n, n))

    def extend(self, v: np.ndarray) -> np.ndarray:
        full = np.zeros(self.grid.shape)
        full[self.mask] = v
        return full

    def apply_full(self, values: np.ndarray) -> np.ndarray:
        """``L^s`` (or ``L^s_*``) on a full-grid array."""
        axes = tuple(range(values.ndim))
        return np.fft.ifftn(np.fft.fftn(values, axes=axes) * self.sym, axes=axes).real

    def _matvec(self, v):
        v = np.asarray(v).reshape(-1)
        return self.apply_full(self.extend(v))[self.mask] + self.q * v

    def _rmatvec(self, w):
        return RestrictedOperator.transpose_of(self)._matvec(w)

    @staticmethod
    def transpose_of(op: "RestrictedOperator") -> "RestrictedOperator":
        """Restricted operator of the opposite variant (the exact transpose)."""
        t = RestrictedOperator.__new__(RestrictedOperator)
        t.masks, t.s, t.adjoint, t.grid, t.mask = op.masks, op.s, not op.adjoint, op.grid, op.mask
        t.sym = symbol(op.grid, op.s, "adjoint" if t.adjoint else "forward")
        t.q = op.q
        LinearOperator.__init__(t, dtype=float, shape=op.shape)
        return t


def _symbol_preconditioner(op: RestrictedOperator) -> LinearOperator:
    inv = np.where(op.sym == 0, 1.0, 1.0 / np.where(op.sym == 0, 1.0, op.sym))

    def mv(v):
        full = op.extend(np.asarray(v).reshape(-1))
        return np.fft.ifftn(np.fft.fftn(full) * inv).real[op.mask]

    return LinearOperator(op.shape, matvec=mv, dtype=float)


def krylov_solve(op: LinearOperator, b: np.ndarray, opts: SolverOptions,
                 x0: np.ndarray | None = None, raise_on_fail: bool = True):
    """Restarted GMRES; returns ``(x, iterations, true relative residual)``."""
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(op.shape[1]), 0, 0.0
    M = _symbol_preconditioner(op) if opts.preconditioner == "symbol" else None
    count = [0]

    def cb(_):
        count[0] += 1

    x = np.zeros(op.shape[1]) if x0 is None else np.asarray(x0, dtype=float)
    relres = float(np.linalg.norm(b - op @ x)) / bnorm
    restart = min(opts.restart, op.shape[0])
    while count[0] < opts.max_iters and relres > opts.tol:
        # scipy counts maxiter in restart cycles, so shrink the cycle to honour the cap
        budget = opts.max_iters - count[0]
        cycle = min(restart, budget)
        x, _ = gmres(op, b, x0=x, rtol=0.5 * opts.tol, atol=0.0, restart=cycle,
                     maxiter=max(1, budget // cycle), M=M,
                     callback=cb, callback_type="pr_norm")
        new = float(np.linalg.norm(b - op @ x)) / bnorm
        if new >= relres and count[0] > 0 and new > opts.tol:
            relres = new
            break
        relres = new
    if relres > opts.tol and raise_on_fail:
        raise NonConvergence(
            f"GMRES stopped at relative residual {relres:.3e} after {count[0]} iterations "
            "(restricted operator may be near-singular)", count[0], relres)
    return x, count[0], relres


def _check_support(f: Field, masks: RegionMasks, adjoint: bool):
    buffer = masks.future_buffer if adjoint else masks.past_buffer
    bad = (masks.omega_T | buffer) & (f.values != 0)
    if bad.any():
        where = "omega_T or the future buffer" if adjoint else "omega_T or the past buffer"
        raise GeometryError(f"exterior datum is nonzero on {int(bad.sum())} nodes of {where}")


def solve_dirichlet(f: Field | None, F: Field | None, Q: Potential, s: float,
                    masks: RegionMasks, opts: SolverOptions = SolverOptions(),
                    adjoint: bool = False) -> ForwardSolution:
    """Solve ``(L^s + Q) u = F`` on omega_T with ``u = f`` elsewhere.

    With ``adjoint=True`` the adjoint operator is used and ``f`` must vanish
    in the future buffer instead of the past buffer.
    """
    grid = masks.grid
    f = Field.zeros(grid) if f is None else f
    _check_support(f, masks, adjoint)
    op = RestrictedOperator(Q, s, masks, adjoint)
    ls_f = op.apply_full(f.values)
    Fi = np.zeros(op.shape[0]) if F is None else F.values[masks.omega_T]
    b = Fi - ls_f[masks.omega_T]
    v, iters, relres = krylov_solve(op, b, opts)
    u = f.values.copy()
    u[masks.omega_T] = v
    resid = op.apply_full(u)[masks.omega_T] + Q.values[masks.omega_T] * v - Fi
    scale = float(np.max(np.abs(Fi)) + np.max(np.abs(ls_f[masks.omega_T])))
    interior = float(np.max(np.abs(resid))) / scale if scale > 0 else 0.0
    return ForwardSolution(Field(grid, u), interior, iters, relres, adjoint)


def solve_adjoint(g: Field | None, F: Field | None, Q: Potential, s: float,
                  masks: RegionMasks, opts: SolverOptions = SolverOptions()) -> ForwardSolution:
    return solve_dirichlet(g, F, Q, s, masks, opts, adjoint=True)


def bilinear_form(u: Field, w: Field, Q: Potential, s: float, masks: RegionMasks) -> float:
    """``(L^{s/2} u, L^{s/2}_* w) + (Q u, w)_{omega_T}``."""
    first = inner(apply_ls(u, s, fraction=0.5), apply_ls(w, s, adjoint=True, fraction=0.5))
    return first + inner(Field(u.grid, Q.values) * u, w, masks.omega_T)


def bilinear_form_direct(u: Field, w: Field, Q: Potential, s: float, masks: RegionMasks) -> float:
    """Same value through ``<L^s u, w> + (Q u, w)_{omega_T}``."""
    return inner(apply_ls(u, s), w) + inner(Field(u.grid, Q.values) * u, w, masks.omega_T)


def coercivity_check(v: Field, s: float) -> tuple[float, float]:
    """``(B_0(v, v), cos(s pi / 2) * sum |lambda|^s |v_hat|^2)``."""
    g = v.grid
    lhs = inner(apply_ls(v, s, fraction=0.5), apply_ls(v, s, adjoint=True, fraction=0.5))
    coeffs = dft_forward(v).coeffs
    rhs = math.cos(s * math.pi / 2) * float(np.sum(g.lam_abs**s * np.abs(coeffs) ** 2))
    return lhs, rhs


def restricted_matrix(Q: Potential, s: float, masks: RegionMasks, adjoint: bool = False) -> np.ndarray:
    """Dense matrix of the restricted operator (for small grids and oracles)."""
    op = RestrictedOperator(Q, s, masks, adjoint)
    n = op.shape[0]
    cols = np.zeros((n,) + masks.grid.shape)
    idx = np.flatnonzero(masks.omega_T)
    cols.reshape(n, -1)[np.arange(n), idx] = 1.0
    axes = tuple(range(1, cols.ndim))
    out = np.fft.ifftn(np.fft.fftn(cols, axes=axes) * op.sym, axes=axes).real
    A = out[(slice(None),) + tuple(np.nonzero(masks.omega_T))].T.copy()
    A[np.diag_indices(n)] += op.q
    return A


def eigenvalue_probe(Q: Potential, s: float, masks: RegionMasks,
                     opts: SolverOptions = SolverOptions(), seed: int = 0,
                     eig_tol: float = 1e-10) -> float:
    """Smallest singular value of the restricted operator ``A``.

    Inverse iteration on the normal operator, accelerated by Lanczos: the
    dominant eigenvector of ``(A^T A)^{-1}`` is computed with ARPACK, each
    application being two GMRES solves (``A^T y = x`` then ``A z = y``).
    Inner solves that stall near a singular operator still contribute
    their best iterate.  Returns ``||A x||`` for the unit eigenvector ``x``.
    """
    A = RestrictedOperator(Q, s, masks)
    At = RestrictedOperator.transpose_of(A)
    n = A.shape[0]
    # GMRES terminates in n steps in exact arithmetic; more only burns time near Sigma
    inner_opts = SolverOptions(tol=max(opts.tol, 1e-12), max_iters=min(opts.max_iters, 3 * n + 50),
                               restart=opts.restart, preconditioner=opts.preconditioner)

    def inv_normal(x):
        y, *_ = krylov_solve(At, np.asarray(x).reshape(-1), inner_opts, raise_on_fail=False)
        z, *_ = krylov_solve(A, y, inner_opts, raise_on_fail=False)
        return z

    v0 = np.random.default_rng(seed).standard_normal(n)
    if n <= 2:
        dense = np.column_stack([inv_normal(e) for e in np.eye(n)])
        _, vecs = np.linalg.eigh(0.5 * (dense + dense.T))
        x = vecs[:, -1]
    else:
        op = LinearOperator((n, n), matvec=inv_normal, dtype=float)
        try:
            _, vecs = eigsh(op, k=1, which="LM", v0=v0, tol=eig_tol,
                            ncv=min(n, 24), maxiter=max(100, opts.max_iters))
        except ArpackNoConvergence as exc:
            raise NonConvergence("Lanczos iteration for the smallest singular value "
                                 "did not converge") from exc
        x = vecs[:, 0]
    return float(np.linalg.norm(A @ x) / np.linalg.norm(x))
