"""Periodic space-time grids, fields, transforms, Sobolev norms and region masks.

Everything downstream works on a uniform periodic lattice over the box
``[-L_t, L_t) x [-L_x, L_x)^n``.  Fields store node samples with the time
axis first; spectral fields store coefficients in the native FFT ordering.

The transform is unitary up to the cell volume: with
``c = fftn(u) * sqrt(dV / N)`` the Riemann sum ``sum |u|^2 dV`` equals
``sum |c|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .errors import GeometryError, HermitianViolation

NORMALIZATION_TAG = "unitary-riemann"
FHF_MAGIC = "FHF1"


@dataclass(frozen=True)
class GridConfig:
    """Uniform periodic lattice in time and ``n_space_dims`` space axes."""

    n_space_dims: int = 1
    L_t: float = 2.0
    L_x: float = 2.0
    N_t: int = 128
    N_x: int = 128

    def __post_init__(self):
        if self.n_space_dims not in (1, 2):
            raise ValueError("n_space_dims must be 1 or 2")
        if not (self.L_t > 0 and self.L_x > 0):
            raise ValueError("half periods must be positive")
        for name in ("N_t", "N_x"):
            n = getattr(self, name)
            if n < 8 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 8, got {n}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N_t,) + (self.N_x,) * self.n_space_dims

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dt(self) -> float:
        return 2.0 * self.L_t / self.N_t

    @property
    def dx(self) -> float:
        return 2.0 * self.L_x / self.N_x

    @property
    def cell_volume(self) -> float:
        return self.dt * self.dx**self.n_space_dims

    @property
    def t(self) -> np.ndarray:
        return -self.L_t + self.dt * np.arange(self.N_t)

    @property
    def x(self) -> np.ndarray:
        return -self.L_x + self.dx * np.arange(self.N_x)

    def coords(self) -> list[np.ndarray]:
        """Broadcastable node coordinates ``[t, x1, ...]``."""
        axes = [self.t] + [self.x] * self.n_space_dims
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    @property
    def rho(self) -> np.ndarray:
        """Temporal frequencies ``pi k / L_t`` in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.N_t, d=self.dt)

    @property
    def xi(self) -> np.ndarray:
        """Spatial frequencies ``pi m / L_x`` per axis in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.N_x, d=self.dx)

    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        """Broadcastable ``(rho, |xi|^2)`` over the frequency lattice."""
        d = self.n_space_dims
        rho = self.rho.reshape((-1,) + (1,) * d)
        xi2 = np.zeros((1,) + (self.N_x,) * d)
        for ax in range(d):
            shape = [1] * (d + 1)
            shape[ax + 1] = -1
            xi2 = xi2 + (self.xi**2).reshape(shape)
        return rho, xi2

    @cached_property
    def lam(self) -> np.ndarray:
        """Complex frequency ``|xi|^2 + i rho`` over the full lattice."""
        rho, xi2 = self.frequencies()
        return xi2 + 1j * rho

    @cached_property
    def lam_abs(self) -> np.ndarray:
        """``sqrt(rho^2 + |xi|^4)`` over the full lattice."""
        return np.abs(self.lam)

    def refine(self, factor: int = 2) -> "GridConfig":
        return GridConfig(self.n_space_dims, self.L_t, self.L_x,
                          self.N_t * factor, self.N_x * factor)


@dataclass(frozen=True, eq=False)
class Field:
    """Real node samples of a space-time function, time axis first."""

    grid: GridConfig
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: GridConfig) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: GridConfig, fn: Callable[..., np.ndarray]) -> "Field":
        coords = grid.coords()
        return cls(grid, np.broadcast_to(fn(*coords), grid.shape))

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    def masked(self, mask: np.ndarray) -> "Field":
        return Field(self.grid, np.where(mask, self.values, 0.0))

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values + _vals(other))

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values - _vals(other))

    def __mul__(self, other) -> "Field":
        return Field(self.grid, self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def norm(self) -> float:
        """Discrete L2 norm (Riemann sum over the box)."""
        return float(np.sqrt(np.sum(self.values**2) * self.grid.cell_volume))


def _vals(other):
    return other.values if isinstance(other, Field) else other


def inner(u: Field, w: Field, mask: np.ndarray | None = None) -> float:
    """Riemann-sum L2 pairing, optionally restricted to ``mask``."""
    prod = u.values * w.values
    if mask is not None:
        prod = prod[mask]
    return float(np.sum(prod) * u.grid.cell_volume)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients on the frequency lattice (FFT ordering)."""

    grid: GridConfig
    coeffs: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))


def _scale(grid: GridConfig) -> float:
    return math.sqrt(grid.cell_volume / grid.size)


def reflect_indices(arr: np.ndarray, axes: Sequence[int] | None = None) -> np.ndarray:
    """Return ``arr[-k]`` (indices mod N) along the given axes."""
    axes = range(arr.ndim) if axes is None else axes
    out = arr
    for ax in axes:
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def hermitian_residue(coeffs: np.ndarray) -> float:
    scale = np.linalg.norm(coeffs)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(coeffs - np.conj(reflect_indices(coeffs))) / scale)


def dft_forward(field: Field) -> SpectralField:
    return SpectralField(field.grid, np.fft.fftn(field.values) * _scale(field.grid))


def dft_inverse(spec: SpectralField, tol: float = 1e-8) -> Field:
    """Inverse transform of Hermitian-symmetric coefficients to a real field."""
    res = hermitian_residue(spec.coeffs)
    if res > tol:
        raise HermitianViolation(f"symmetry residue {res:.3e} exceeds {tol:.1e}")
    values = np.fft.ifftn(spec.coeffs) / _scale(spec.grid)
    return Field(spec.grid, values.real)


def sobolev_weight(grid: GridConfig, a: float) -> np.ndarray:
    return (1.0 + grid.lam_abs) ** a


def sobolev_norm(field: Union[Field, SpectralField], a: float) -> float:
    """Discrete ``H^a`` norm with weight ``(1 + |i rho + |xi|^2|)^a``."""
    if not -2.0 <= a <= 2.0:
        raise ValueError("Sobolev index must lie in [-2, 2]")
    spec = field if isinstance(field, SpectralField) else dft_forward(field)
    w = sobolev_weight(spec.grid, a)
    return float(np.sqrt(np.sum(w * np.abs(spec.coeffs) ** 2)))


def time_window(field: Field, a: float, b: float, s: float = 0.5) -> tuple[Field, float]:
    """Multiply by the indicator of ``a <= t <= b``.

    Returns the windowed field and the ratio of its ``H^s`` norm to the
    ``H^s`` norm of the input (``nan`` for a zero input).
    """
    g = field.grid
    if not (-g.L_t <= a < b <= g.L_t):
        raise ValueError("window must satisfy -L_t <= a < b <= L_t")
    t = g.t
    chi = ((t >= a) & (t <= b)).astype(float).reshape((-1,) + (1,) * g.n_space_dims)
    out = Field(g, field.values * chi)
    denom = sobolev_norm(field, s)
    ratio = sobolev_norm(out, s) / denom if denom > 0 else float("nan")
    return out, ratio


# --- regions ----------------------------------------------------------------


@dataclass(frozen=True)
class Rect:
    """Open axis-aligned box ``lo < x < hi`` (componentwise)."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo, hi = tuple(map(float, np.atleast_1d(self.lo))), tuple(map(float, np.atleast_1d(self.hi)))
        if len(lo) != len(hi) or any(l >= h for l, h in zip(lo, hi)):
            raise GeometryError(f"degenerate rectangle {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, pts: Sequence[np.ndarray]) -> np.ndarray:
        inside = True
        for p, l, h in zip(pts, self.lo, self.hi):
            inside = inside & (p > l) & (p < h)
        return inside

    def measure(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.lo), np.array(self.hi)

    def describe(self) -> str:
        return "rect " + " ".join(f"({l:g},{h:g})" for l, h in zip(self.lo, self.hi))


@dataclass(frozen=True)
class Ball:
    """Open ball ``|x - center| < radius``."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(map(float, np.atleast_1d(self.center))))
        if self.radius <= 0:
            raise GeometryError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, pts: Sequence[np.ndarray]) -> np.ndarray:
        r2 = 0.0
        for p, c in zip(pts, self.center):
            r2 = r2 + (p - c) ** 2
        return r2 < self.radius**2

    def measure(self) -> float:
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius**d

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def describe(self) -> str:
        return f"ball c={self.center} r={self.radius:g}"


Shape = Union[Rect, Ball]


def _closures_intersect(a: Shape, b: Shape) -> bool:
    if isinstance(a, Rect) and isinstance(b, Rect):
        return all(al <= bh and bl <= ah for al, ah, bl, bh in zip(a.lo, a.hi, b.lo, b.hi))
    if isinstance(a, Ball) and isinstance(b, Ball):
        return math.dist(a.center, b.center) <= a.radius + b.radius
    ball, rect = (a, b) if isinstance(a, Ball) else (b, a)
    nearest = np.clip(ball.center, rect.lo, rect.hi)
    return float(np.linalg.norm(nearest - np.array(ball.center))) <= ball.radius


@dataclass(frozen=True)
class Geometry:
    """Interior set, control and measurement windows and the time half-length."""

    omega: Shape = field(default_factory=lambda: Rect((-0.5,), (0.5,)))
    control: Shape = field(default_factory=lambda: Rect((1.0,), (1.5,)))
    measure: Shape = field(default_factory=lambda: Rect((-1.5,), (-1.0,)))
    T: float = 1.0


@dataclass(frozen=True, eq=False)
class RegionMasks:
    """Boolean node sets over the grid (time axis first)."""

    grid: GridConfig
    omega_T: np.ndarray
    control_window: np.ndarray
    measure_window: np.ndarray
    past_buffer: np.ndarray
    future_buffer: np.ndarray
    exterior: np.ndarray
    T_half: float
    omega_descr: str

    def __post_init__(self):
        for name in ("omega_T", "control_window", "measure_window",
                     "past_buffer", "future_buffer", "exterior"):
            getattr(self, name).setflags(write=False)

    @property
    def n_interior(self) -> int:
        return int(self.omega_T.sum())


def make_masks(grid: GridConfig, geometry: Geometry) -> RegionMasks:
    """Classify every node of ``grid`` by the cell-center rule.

    A node belongs to an open set only if it lies strictly inside; nodes on
    a boundary are exterior.
    """
    d = grid.n_space_dims
    shapes = {"omega": geometry.omega, "control": geometry.control, "measure": geometry.measure}
    for name, shp in shapes.items():
        if shp.dim != d:
            raise GeometryError(f"{name} has dimension {shp.dim}, grid has {d}")
        lo, hi = shp.bounds()
        if np.any(lo <= -grid.L_x) or np.any(hi >= grid.L_x):
            raise GeometryError(f"{name} ({shp.describe()}) is not strictly inside the spatial period")
    for name in ("control", "measure"):
        if _closures_intersect(shapes[name], geometry.omega):
            raise GeometryError(f"{name} window intersects the closure of omega")
    T = float(geometry.T)
    if not 0 < T < grid.L_t:
        raise GeometryError("T must satisfy 0 < T < L_t")

    t, *xs = grid.coords()
    full = np.ones(grid.shape, dtype=bool)
    slab = full & (t > -T) & (t < T)
    past = full & (t <= -T)
    future = full & (t >= T)
    in_omega = full & geometry.omega.contains(xs)
    omega_T = slab & in_omega
    exterior = slab & ~in_omega
    control = slab & geometry.control.contains(xs)
    measure = slab & geometry.measure.contains(xs)
    if not past.any() or not future.any():
        raise GeometryError("past or future time buffer is empty")
    if not omega_T.any():
        raise GeometryError("omega_T contains no nodes")
    if not control.any() or not measure.any():
        raise GeometryError("control or measurement window contains no nodes")
    if (control & measure).any():
        raise GeometryError("control and measurement windows share nodes")
    return RegionMasks(grid, omega_T, control, measure, past, future, exterior,
                       T, geometry.omega.describe())


# --- file formats -------------------------------------------------------------


def write_fhf(path: str | Path, field: Field) -> Path:
    """Write a field in the FHF1 format (text header, blank line, LE float64)."""
    g = field.grid
    header = [
        FHF_MAGIC,
        f"dims {g.n_space_dims} {g.N_t} {g.N_x}",
        f"extents {g.L_t!r} {g.L_x!r}",
        f"normalization {NORMALIZATION_TAG}",
        "",
    ]
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    return path


def read_fhf(path: str | Path) -> Field:
    data = Path(path).read_bytes()
    sep = data.find(b"\n\n")
    if sep < 0:
        raise ValueError("FHF1 header not terminated by a blank line")
    lines = data[:sep].decode("ascii").splitlines()
    if not lines or lines[0] != FHF_MAGIC:
        raise ValueError("not an FHF1 file")
    meta = {ln.split()[0]: ln.split()[1:] for ln in lines[1:]}
    n, nt, nx = map(int, meta["dims"])
    lt, lx = map(float, meta["extents"])
    if meta.get("normalization", [None])[0] != NORMALIZATION_TAG:
        raise ValueError("unsupported normalization tag")
    grid = GridConfig(n, lt, lx, nt, nx)
    values = np.frombuffer(data[sep + 2:], dtype="<f8")
    if values.size != grid.size:
        raise ValueError(f"expected {grid.size} samples, found {values.size}")
    return Field(grid, values.reshape(grid.shape))


def write_csv(path: str | Path, field: Field) -> Path:
    """One row per node: ``t, x[, x2], value``."""
    g = field.grid
    axes = [g.t] + [g.x] * g.n_space_dims
    mesh = np.meshgrid(*axes, indexing="ij")
    cols = [m.ravel() for m in mesh] + [field.values.ravel()]
    names = ["t"] + (["x"] if g.n_space_dims == 1 else ["x1", "x2"]) + ["value"]
    path = Path(path)
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names),
               comments="", fmt="%.17g", encoding="utf-8")
    return path
