"""Constructive inversion: Tikhonov reconstruction, potential recovery, Runge control."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, lsqr

from .core import Field, RegionMasks
from .dnmap import AlessandriniResult, alessandrini
from .errors import EmptyMask
from .forward import Potential, SolverOptions, solve_dirichlet
from .operator import apply_ls, symbol

DEFAULT_ALPHAS = tuple(np.geomspace(1e-2, 1e-8, 7))
RECOVERY_ALPHAS = tuple(np.geomspace(1e-2, 1e-12, 11))


def _check_alphas(alphas) -> np.ndarray:
    a = np.asarray(alphas, dtype=float)
    if a.ndim != 1 or a.size == 0 or np.any(a <= 0) or np.any(np.diff(a) >= 0):
        raise ValueError("alphas must be positive and strictly decreasing")
    return a


class WindowObservation:
    """``v -> (L^s E v)|_M`` for ``v`` on omega_T, with the weighted misfit.

    The misfit weight is ``W = P_M C E_M`` where ``C`` is the Fourier
    multiplier ``(1 + |lambda|)^{-s}``.  Writing ``W = (C^{1/2} E_M)^T
    (C^{1/2} E_M)`` lets the least-squares solver work with ``B = C^{1/2}
    E_M L`` and never form the normal equations.
    """

    def __init__(self, s: float, masks: RegionMasks):
        g = masks.grid
        self.grid = g
        self.masks = masks
        self.src = masks.omega_T
        self.dst = masks.measure_window
        self.sym = symbol(g, s, "forward")
        self.sym_t = symbol(g, s, "adjoint")  # real transpose of the forward multiplier
        self.half_weight = (1.0 + g.lam_abs) ** (-s / 2)
        self.n = int(self.src.sum())

    def _mult(self, values: np.ndarray, sym: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(np.fft.fftn(values) * sym).real

    def L(self, v: np.ndarray) -> np.ndarray:
        full = np.zeros(self.grid.shape)
        full[self.src] = v
        return self._mult(full, self.sym)[self.dst]

    def LT(self, r: np.ndarray) -> np.ndarray:
        full = np.zeros(self.grid.shape)
        full[self.dst] = r
        return self._mult(full, self.sym_t)[self.src]

    def whiten(self, r: np.ndarray) -> np.ndarray:
        """``C^{1/2} E_M r`` flattened over the full grid."""
        full = np.zeros(self.grid.shape)
        full[self.dst] = r
        return self._mult(full, self.half_weight).ravel()

    def whiten_T(self, y: np.ndarray) -> np.ndarray:
        return self._mult(y.reshape(self.grid.shape), self.half_weight)[self.dst]

    def W(self, r: np.ndarray) -> np.ndarray:
        return self.whiten_T(self.whiten(r))

    def misfit(self, v: np.ndarray, h: np.ndarray) -> float:
        r = self.L(v) - h
        return math.sqrt(max(float(r @ self.W(r)), 0.0) * self.grid.cell_volume)

    def normal_gradient(self, v: np.ndarray, h: np.ndarray, alpha: float) -> float:
        """``||(L^T W L + alpha) v - L^T W h|| / ||L^T W h||``."""
        rhs = self.LT(self.W(h))
        g = self.LT(self.W(self.L(v))) + alpha * v - rhs
        scale = np.linalg.norm(rhs)
        return float(np.linalg.norm(g) / scale) if scale > 0 else float(np.linalg.norm(g))

    def stacked(self, alpha: float) -> LinearOperator:
        m = self.grid.size
        sa = math.sqrt(alpha)
        return LinearOperator(
            (m + self.n, self.n),
            matvec=lambda v: np.concatenate([self.whiten(self.L(v)), sa * v]),
            rmatvec=lambda y: self.LT(self.whiten_T(y[:m])) + sa * y[m:],
            dtype=float)


@dataclass(frozen=True, eq=False)
class TikhonovPath:
    alphas: np.ndarray
    reconstructions: list[Field]
    data_residuals: np.ndarray
    solution_errors: np.ndarray | None
    gradient_norms: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray

    def best(self) -> int:
        """Index of the smallest solution error (requires ground truth)."""
        if self.solution_errors is None:
            raise ValueError("no ground truth was supplied")
        return int(np.nanargmin(self.solution_errors))


def tikhonov_reconstruct(h: Field, s: float, alphas=DEFAULT_ALPHAS, masks: RegionMasks = None,
                         opts: SolverOptions = SolverOptions(), truth: Field | None = None,
                         max_iters: int | None = None) -> TikhonovPath:
    """Minimize ``||L v - h||_W^2 + alpha ||v||^2`` over ``v`` on omega_T for each alpha.

    Each alpha is solved by LSQR on ``[C^{1/2} E_M L; sqrt(alpha) I]``,
    warm-started from the previous alpha; a step counts as converged when
    the relative normal-equation gradient is at most ``opts.tol``.
    """
    if masks is None:
        raise ValueError("masks are required")
    a = _check_alphas(alphas)
    hv = np.asarray(h.values)
    if not np.all(np.isfinite(hv)):
        raise ValueError("h must be finite")
    obs = WindowObservation(s, masks)
    hm = hv[obs.dst]
    n = obs.n
    limit = max_iters if max_iters is not None else max(opts.max_iters, 40 * n)
    x = np.zeros(n)
    recs, res, errs, grads, conv, its = [], [], [], [], [], []
    tvals = truth.values[obs.src] if truth is not None else None
    tnorm = np.linalg.norm(tvals) if tvals is not None else 0.0
    rhs = np.concatenate([obs.whiten(hm), np.zeros(n)])
    for alpha in a:
        if not np.any(hm):
            x, it, grad = np.zeros(n), 0, 0.0
        else:
            sol = lsqr(obs.stacked(alpha), rhs, atol=1e-15, btol=1e-15, conlim=1e30,
                       iter_lim=limit, x0=x)
            x, it = sol[0], int(sol[2])
            grad = obs.normal_gradient(x, hm, alpha)
        full = np.zeros(masks.grid.shape)
        full[obs.src] = x
        recs.append(Field(masks.grid, full))
        res.append(obs.misfit(x, hm))
        grads.append(grad)
        conv.append(grad <= opts.tol)
        its.append(it)
        if tvals is not None:
            errs.append(np.linalg.norm(x - tvals) / tnorm if tnorm > 0 else np.linalg.norm(x))
    return TikhonovPath(a, recs, np.array(res), np.array(errs) if tvals is not None else None,
                        np.array(grads), np.array(conv), np.array(its))


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    q_hat: Potential
    mask_kept: np.ndarray
    coverage: float
    u_hat: Field
    path: TikhonovPath | None = None
    alpha: float = float("nan")

    def error(self, truth: Potential) -> float:
        """Relative L^2 error of ``q_hat`` on the kept nodes."""
        k = self.mask_kept
        num = np.linalg.norm((self.q_hat.values - truth.values)[k])
        den = np.linalg.norm(truth.values[k])
        return float(num / den) if den > 0 else float(num)


def potential_quotient(u: Field, s: float, masks: RegionMasks, eps_mask: float = 1e-2) -> RecoveryResult:
    """``q = -(L^s u) / u`` on omega_T nodes where ``|u| > eps_mask * max |u|``."""
    om = masks.omega_T
    mag = np.abs(u.values) * om
    peak = float(mag.max())
    keep = (mag > eps_mask * peak) & om if peak > 0 else np.zeros_like(om)
    if not keep.any():
        raise EmptyMask("no omega_T node has |u| above the mask threshold")
    lu = apply_ls(u, s).values
    q = np.zeros(masks.grid.shape)
    q[keep] = -lu[keep] / u.values[keep]
    coverage = float(keep.sum() / om.sum())
    return RecoveryResult(Potential(q, keep), keep, coverage, u)


def recover_potential(f: Field, measured: Field, s: float, masks: RegionMasks,
                      opts: SolverOptions = SolverOptions(), eps_mask: float = 1e-2,
                      alphas=RECOVERY_ALPHAS, truth_u: Field | None = None) -> RecoveryResult:
    """Single-measurement recovery: Tikhonov for the interior part, then the quotient.

    The reconstruction at the last (smallest) alpha is used.
    """
    if not np.any(f.values):
        raise EmptyMask("datum f is identically zero")
    h = measured - apply_ls(f, s).masked(masks.measure_window)
    h = h.masked(masks.measure_window)
    truth = truth_u.masked(masks.omega_T) if truth_u is not None else None
    path = tikhonov_reconstruct(h, s, alphas, masks, opts, truth=truth)
    u_hat = f + path.reconstructions[-1]
    res = potential_quotient(u_hat, s, masks, eps_mask)
    return RecoveryResult(res.q_hat, res.mask_kept, res.coverage, u_hat, path, float(path.alphas[-1]))


# --- Runge approximation ---------------------------------------------------------

_LEVELS = 8  # lattice points per axis


def _bit_reverse_rank(n: int) -> np.ndarray:
    """Rank of each index ``0..n-1`` in bit-reversed order (coarse points first)."""
    bits = int(math.log2(n))
    order = [int(format(i, f"0{bits}b")[::-1], 2) for i in range(n)]
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)
    return rank


def runge_basis(window: np.ndarray, masks: RegionMasks, K: int) -> list[Field]:
    """First ``K`` bumps of a nested hierarchy tiling the window's bounding box.

    Gaussian bumps sit on an ``8^(n+1)`` lattice; points are ordered so that
    every prefix of length ``2^(j (n+1))`` is a full sub-lattice, hence the
    bases for ``K = 4, 16, 64`` (n=1) are nested.
    """
    g = masks.grid
    coords = g.coords()
    idx = np.nonzero(window)
    axes_vals = [g.t] + [g.x] * g.n_space_dims
    lo = [axes_vals[a][idx[a]].min() for a in range(len(idx))]
    hi = [axes_vals[a][idx[a]].max() for a in range(len(idx))]
    dim = len(idx)
    total = _LEVELS ** dim
    if not 0 < K <= min(total, int(window.sum())):
        raise ValueError(f"K must lie in [1, {min(total, int(window.sum()))}]")
    rank = _bit_reverse_rank(_LEVELS)
    level = np.ceil(np.log2(rank + 1)).astype(int)
    pts = list(np.ndindex(*([_LEVELS] * dim)))
    pts.sort(key=lambda p: (max(level[i] for i in p), tuple(rank[i] for i in p)))
    out = []
    for p in pts[:K]:
        r2 = np.zeros(g.shape)
        for a, i in enumerate(p):
            h = (hi[a] - lo[a]) / _LEVELS
            c = lo[a] + (i + 0.5) * h
            width = max(0.6 * h, 1.0 * (g.dt if a == 0 else g.dx))
            r2 = r2 + ((coords[a] - c) / width) ** 2
        out.append(Field(g, np.where(window, np.exp(-0.5 * r2), 0.0)))
    return out


@dataclass(frozen=True, eq=False)
class RungeResult:
    f_star: Field
    approx_error: float
    coefficients: np.ndarray
    u_star: Field


def _solve_many(data: list[Field], Q: Potential, s: float, masks: RegionMasks,
                opts: SolverOptions, adjoint: bool, threads: int) -> list[Field]:
    def one(f):
        return solve_dirichlet(f, None, Q, s, masks, opts, adjoint=adjoint).u
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, data))
    return [one(f) for f in data]


def runge_control(g: Field, K: int, reg: float, Q: Potential, s: float, masks: RegionMasks,
                  opts: SolverOptions = SolverOptions(), adjoint: bool = False,
                  threads: int = 1) -> RungeResult:
    """Exterior control whose solution best matches ``g`` on omega_T.

    Controls live on the control window (forward problem) or on the
    measurement window (``adjoint=True``).  Returns the control, the
    relative L^2(omega_T) error, the coefficients and the solution.
    """
    window = masks.measure_window if adjoint else masks.control_window
    basis = runge_basis(window, masks, K)
    sols = _solve_many(basis, Q, s, masks, opts, adjoint, threads)
    om = masks.omega_T
    dv = masks.grid.cell_volume
    U = np.column_stack([u.values[om] for u in sols])
    target = g.values[om]
    A = np.vstack([math.sqrt(dv) * U, math.sqrt(reg) * np.eye(K)])
    b = np.concatenate([math.sqrt(dv) * target, np.zeros(K)])
    c, *_ = np.linalg.lstsq(A, b, rcond=None)
    f_star = sum((ck * bk.values for ck, bk in zip(c, basis)), np.zeros(masks.grid.shape))
    u_star = sum((ck * uk.values for ck, uk in zip(c, sols)), np.zeros(masks.grid.shape))
    tn = np.linalg.norm(target)
    err = np.linalg.norm(U @ c - target)
    return RungeResult(Field(masks.grid, f_star), float(err / tn if tn > 0 else err), c,
                       Field(masks.grid, u_star))


@dataclass(frozen=True)
class GapReport:
    lhs: float
    rhs: float
    identity_rhs: float
    control_error_forward: float
    control_error_adjoint: float


def potential_gap_functional(Q1: Potential, Q2: Potential, g: Field, K: int, s: float,
                             masks: RegionMasks, opts: SolverOptions = SolverOptions(),
                             reg: float = 1e-12, threads: int = 1) -> GapReport:
    """Compare ``<(Lambda_1 - Lambda_2) f1, f2>`` with ``sum (Q1 - Q2) g`` over omega_T.

    ``f1`` steers the Q1 solution towards ``g``; ``f2`` steers the Q2
    adjoint solution towards 1.  ``identity_rhs`` is the exact interior
    pairing of the two constructed solutions.
    """
    r1 = runge_control(g, K, reg, Q1, s, masks, opts, threads=threads)
    one = Field(masks.grid, masks.omega_T.astype(float))
    r2 = runge_control(one, K, reg, Q2, s, masks, opts, adjoint=True, threads=threads)
    al: AlessandriniResult = alessandrini(Q1, Q2, r1.f_star, r2.f_star, s, masks, opts)
    dv = masks.grid.cell_volume
    rhs = float(np.sum(((Q1 - Q2).values * g.values)[masks.omega_T]) * dv)
    return GapReport(al.lhs, rhs, al.rhs, r1.approx_error, r2.approx_error)
