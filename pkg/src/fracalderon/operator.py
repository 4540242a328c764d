"""The fractional heat operator ``(d_t - Laplacian)^s`` and its adjoint.

Two independent evaluation routes are provided:

* :func:`apply_symbol` multiplies Fourier coefficients by ``(i rho + |xi|^2)^s``
  (or the conjugate symbol for the adjoint) on the periodic grid;
* :func:`apply_kernel` integrates the causal heat-kernel representation
  over past times only, treating the field as held at its boundary values
  outside the box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import signal, special

from .core import Field, GridConfig, dft_forward, dft_inverse, inner, sobolev_norm
from .errors import DomainError, QuadratureError

Variant = Literal["forward", "adjoint"]


@dataclass(frozen=True)
class SymbolSpec:
    s: float
    variant: Variant = "forward"
    power_fraction: float = 1.0

    @property
    def exponent(self) -> float:
        return self.s * self.power_fraction


def symbol(grid: GridConfig, exponent: float, variant: Variant = "forward") -> np.ndarray:
    """Principal power ``(|xi|^2 +- i rho)^exponent`` on the frequency lattice.

    At the temporal Nyquist index the lattice frequency is its own mirror
    image, so the modulus ``|lambda|^exponent`` is used there to keep the
    operator real; it is still multiplicative in the exponent and
    self-adjoint at those modes.  The zero frequency maps to 0.
    """
    lam = grid.lam if variant == "forward" else np.conj(grid.lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        sym = np.where(lam == 0, 0.0, np.power(lam, exponent))
    nyq = grid.N_t // 2
    sym[nyq] = np.abs(lam[nyq]) ** exponent
    return sym


def apply_symbol(field: Field, spec: SymbolSpec) -> Field:
    e = spec.exponent
    if not 0 < e < 1 + 1e-12:
        raise ValueError(f"s * power_fraction must lie in (0, 1], got {e}")
    coeffs = dft_forward(field)
    out = coeffs.coeffs * symbol(field.grid, e, spec.variant)
    return dft_inverse(type(coeffs)(field.grid, out))


def apply_ls(field: Field, s: float, adjoint: bool = False, fraction: float = 1.0) -> Field:
    """Shorthand for ``apply_symbol`` with the forward or adjoint variant."""
    return apply_symbol(field, SymbolSpec(s, "adjoint" if adjoint else "forward", fraction))


def time_reflect(field: Field) -> Field:
    """``u(t, x) -> u(-t, x)`` on the periodic time lattice."""
    v = np.roll(np.flip(field.values, axis=0), 1, axis=0)
    return Field(field.grid, v)


# --- heat kernel representation -------------------------------------------------


def kernel_value(s: float, n: int, tau, z) -> np.ndarray:
    """Kernel ``exp(-|z|^2/4tau) / ((4 pi)^{n/2} |Gamma(-s)| tau^{n/2+1+s})``.

    ``z`` may be an array whose last axis has length ``n`` (or a scalar
    for ``n = 1``).
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("tau must be positive")
    if not 0 < s < 1:
        raise DomainError("s must lie in (0, 1)")
    z = np.asarray(z, dtype=float)
    r2 = z**2 if (n == 1 and (z.ndim == 0 or z.shape[-1] != 1)) else np.sum(z**2, axis=-1)
    norm = (4 * math.pi) ** (n / 2) * abs(special.gamma(-s))
    return np.exp(-r2 / (4 * tau)) / (norm * tau ** (n / 2 + 1 + s))


@dataclass(frozen=True)
class KernelQuadrature:
    """Log-spaced quadrature in the lag ``tau`` plus spatial/temporal sampling rules."""

    tau_nodes: np.ndarray
    weights: np.ndarray
    z_cutoff: float = 6.0
    interpolation: Literal["linear", "cubic"] = "cubic"
    min_radius_cells: int = 16

    @classmethod
    def default(cls, grid: GridConfig, n_tau: int = 64, tau_min: float | None = None,
                tau_max: float | None = None, **kw) -> "KernelQuadrature":
        tau_min = grid.dt / 8 if tau_min is None else tau_min
        tau_max = 8 * grid.L_t if tau_max is None else tau_max
        logt = np.linspace(math.log(tau_min), math.log(tau_max), n_tau)
        h = logt[1] - logt[0]
        tau = np.exp(logt)
        w = h * tau
        w[0] *= 0.5
        w[-1] *= 0.5
        return cls(tau, w, **kw)

    @property
    def tau_min(self) -> float:
        return float(self.tau_nodes[0])

    @property
    def tau_max(self) -> float:
        return float(self.tau_nodes[-1])


def lattice_heat_weights(tau: float, dx: float, radius: int) -> np.ndarray:
    """Weights ``w_j`` with ``sum_j w_j u(x - j dx) = (G_tau * u)(x)`` for band-limited ``u``.

    ``w_j = (dx/pi) int_0^{pi/dx} exp(-tau k^2) cos(k j dx) dk``; for
    ``sqrt(tau) >> dx`` this is the sampled Gaussian ``G_tau(j dx) dx``.
    Truncated to ``|j| <= radius`` and renormalized to unit sum.
    """
    j = np.arange(-radius, radius + 1)
    if tau > 16 * dx * dx:
        # Nyquist cutoff is immaterial here: exp(-tau (pi/dx)^2) < 1e-68
        vals = np.exp(-((j * dx) ** 2) / (4 * tau))
        return vals / vals.sum()
    nodes, wq = np.polynomial.legendre.leggauss(2 * radius + 64)
    kmax = math.pi / dx
    k = 0.5 * kmax * (nodes + 1)
    wk = 0.5 * kmax * wq
    vals = (np.exp(-tau * k**2) * wk) @ np.cos(np.outer(k, j * dx))
    vals *= dx / math.pi
    return vals / vals.sum()


def _heat_smooth(values: np.ndarray, tau: float, dx: float, quad: KernelQuadrature) -> np.ndarray:
    """Apply the spatial heat semigroup slice by slice (edge-extended outside the box)."""
    radius = max(int(math.ceil(quad.z_cutoff * math.sqrt(tau) / dx)), quad.min_radius_cells)
    w = lattice_heat_weights(tau, dx, radius)
    out = values
    for ax in range(1, values.ndim):
        pad = [(0, 0)] * values.ndim
        pad[ax] = (radius, radius)
        padded = np.pad(out, pad, mode="edge")
        kshape = [1] * values.ndim
        kshape[ax] = -1
        out = signal.fftconvolve(padded, w.reshape(kshape), mode="valid", axes=ax)
    return out


def _lag_sample(values: np.ndarray, tau: float, dt: float, rule: str) -> np.ndarray:
    """Sample ``values`` at ``t_j - tau`` for every node ``j`` from earlier nodes only.

    Indices before the first node are clamped (held boundary values).
    """
    nt = values.shape[0]
    k = int(math.floor(tau / dt))
    theta = tau / dt - k
    upper = np.arange(nt) - k

    def take(offset):
        return values[np.clip(upper - offset, 0, nt - 1)]

    if rule == "linear":
        return (1 - theta) * take(0) + theta * take(1)
    x = -theta
    l0 = (x + 1) * (x + 2) * (x + 3) / 6
    l1 = -x * (x + 2) * (x + 3) / 2
    l2 = x * (x + 1) * (x + 3) / 2
    l3 = -x * (x + 1) * (x + 2) / 6
    return l0 * take(0) + l1 * take(1) + l2 * take(2) + l3 * take(3)


def _near_field(values: np.ndarray, dt: float, dx: float) -> np.ndarray:
    """Causal estimate of ``(d_t - Laplacian) u`` used for lags below ``tau_min``."""
    prev1 = np.concatenate([values[:1], values[:-1]])
    prev2 = np.concatenate([values[:1], prev1[:-1]])
    dudt = (3 * values - 4 * prev1 + prev2) / (2 * dt)
    lap = np.zeros_like(values)
    c = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12 * dx * dx)
    for ax in range(1, values.ndim):
        pad = [(0, 0)] * values.ndim
        pad[ax] = (2, 2)
        p = np.pad(values, pad, mode="edge")
        n = values.shape[ax]
        lap += sum(ci * np.take(p, np.arange(i, i + n), axis=ax) for i, ci in enumerate(c))
    return dudt - lap


def apply_kernel(field: Field, s: float, quad: KernelQuadrature | None = None) -> Field:
    """Approximate ``L^s u`` from the heat-kernel integral using past samples only."""
    g = field.grid
    quad = KernelQuadrature.default(g) if quad is None else quad
    if not quad.tau_min < g.dt:
        raise QuadratureError(f"tau_min={quad.tau_min:g} must be below dt={g.dt:g}")
    if np.any(quad.weights <= 0):
        raise QuadratureError("quadrature weights must be positive")
    # the operator annihilates constants, so shifting by one sample is exact
    # and keeps constant fields at exactly zero
    u = field.values - field.values.flat[0]
    gam = abs(special.gamma(-s))
    out = np.zeros_like(u)
    for tau, w in zip(quad.tau_nodes, quad.weights):
        smoothed = _heat_smooth(u, tau, g.dx, quad)
        out += (w * tau ** (-1 - s)) * (u - _lag_sample(smoothed, tau, g.dt, quad.interpolation))
    # lags beyond tau_max: past sample frozen at its tau_max value
    far = _lag_sample(_heat_smooth(u, quad.tau_max, g.dx, quad), quad.tau_max, g.dt,
                      quad.interpolation)
    out += (u - far) * quad.tau_max ** (-s) / s
    # lags below tau_min: u - e^{-tau L} u = tau L u - tau^2 L^2 u / 2 + ...
    lu = _near_field(u, g.dt, g.dx)
    l2u = _near_field(lu, g.dt, g.dx)
    tm = quad.tau_min
    out += lu * tm ** (1 - s) / (1 - s) - l2u * tm ** (2 - s) / (2 * (2 - s))
    return Field(g, out / gam)


# --- identities -------------------------------------------------------------------


def duality_check(u: Field, w: Field, s: float) -> tuple[float, float, float]:
    """Normalized residuals of the three pairing identities.

    1. ``<L^s u, w> - <u, L^s_* w>``
    2. ``<L^{s/2} L^{s/2} u - L^s u, w>``
    3. ``<L^s u, w> - (L^{s/2} u, L^{s/2}_* w)``
    """
    scale = u.norm() * w.norm()
    if scale == 0.0:
        return 0.0, 0.0, 0.0
    ls_u = apply_ls(u, s)
    half_u = apply_ls(u, s, fraction=0.5)
    lhs = inner(ls_u, w)
    r1 = abs(lhs - inner(u, apply_ls(w, s, adjoint=True)))
    r2 = abs(inner(apply_ls(half_u, s, fraction=0.5) - ls_u, w))
    r3 = abs(lhs - inner(half_u, apply_ls(w, s, adjoint=True, fraction=0.5)))
    return r1 / scale, r2 / scale, r3 / scale


def mapping_bound_check(u: Field, s: float) -> float:
    """``||L^s u||_{H^-s} / ||u||_{H^s}``; at most 1 on the lattice."""
    denom = sobolev_norm(u, s)
    if denom == 0.0:
        raise ValueError("u must be nonzero")
    return sobolev_norm(apply_ls(u, s), -s) / denom
