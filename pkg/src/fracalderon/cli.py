"""Command-line experiment runner.

Usage::

    fracalderon {forward|dnmap|alessandrini|extension|reconstruct|runge|selftest}
                --config PATH [--out DIR] [--threads N] [--seed S]

Exit codes: 0 success, 1 a check failed, 2 configuration or geometry error,
3 solver nonconvergence.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import math
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import dnmap, extension, forward, inverse, operator
from .core import (Ball, Field, Geometry, GridConfig, Rect, dft_forward, make_masks, read_fhf,
                   write_csv, write_fhf)
from .errors import ConfigError, FracalderonError, GeometryError, NonConvergence

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


# --- configuration ----------------------------------------------------------------


@dataclass
class ExperimentConfig:
    grid: GridConfig
    geometry: Geometry
    s: float
    potential: str
    potential2: str
    solver: forward.SolverOptions
    seed: int
    run: dict[str, str]
    text: str
    source: Path | None = None
    _lines: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)

    def line(self, section: str, key: str) -> int | None:
        return self._lines.get((section, key.lower()))

    def get(self, key: str, default=None, cast: Callable = str):
        key = key.lower()
        if key not in self.run:
            return default
        try:
            return cast(self.run[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[run] {key}: {exc}", self.line("run", key)) from exc

    def floats(self, key: str, default) -> list[float]:
        return self.get(key, list(default), lambda v: [float(x) for x in v.replace(",", " ").split()])

    def ints(self, key: str, default) -> list[int]:
        return self.get(key, list(default), lambda v: [int(x) for x in v.replace(",", " ").split()])

    @property
    def digest(self) -> str:
        return hashlib.sha256(f"{self.text}\nseed={self.seed}".encode()).hexdigest()[:16]


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip().lower()
        elif section and "=" in stripped and not stripped.startswith(("#", ";")):
            lines[(section, stripped.split("=", 1)[0].strip().lower())] = no
    return lines


def _parse_shape(spec: str, dims: int):
    parts = spec.split()
    kind, nums = parts[0].lower(), [float(p) for p in parts[1:]]
    if kind == "rect":
        if len(nums) != 2 * dims:
            raise ValueError(f"rect needs {2 * dims} numbers (lo..., hi...)")
        return Rect(tuple(nums[:dims]), tuple(nums[dims:]))
    if kind == "ball":
        if len(nums) != dims + 1:
            raise ValueError(f"ball needs {dims + 1} numbers (center..., radius)")
        return Ball(tuple(nums[:dims]), nums[dims])
    raise ValueError(f"unknown shape '{kind}' (rect or ball)")


_POTENTIAL_RE = re.compile(r"^(zero|constant|bump|file)\b", re.I)


def load_config(path: str | Path | None = None, text: str | None = None,
                seed: int | None = None) -> ExperimentConfig:
    """Parse and validate an experiment configuration.

    Errors carry the offending line number when it can be located.
    """
    if text is None:
        if path is None:
            raise ConfigError("no configuration given")
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigError("malformed line", line) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from exc
    lines = _key_lines(text)

    known = {"grid", "geometry", "model", "solver", "run"}
    for sec in cp.sections():
        if sec.lower() not in known:
            raise ConfigError(f"unknown section [{sec}]")

    def val(section, key, cast, default=None):
        if not cp.has_option(section, key):
            if default is None:
                raise ConfigError(f"[{section}] missing required key '{key}'")
            return default
        raw = cp.get(section, key)
        try:
            return cast(raw)
        except (TypeError, ValueError, FracalderonError) as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}", lines.get((section, key))) from exc

    try:
        dims = val("grid", "dims", int, 1)
        grid = GridConfig(dims, val("grid", "l_t", float, 2.0), val("grid", "l_x", float, 2.0),
                          val("grid", "n_t", int, 128), val("grid", "n_x", int, 128))
    except (ValueError, FracalderonError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[grid] {exc}", lines.get(("grid", "dims"))) from exc
    default_geo = Geometry()
    if dims == 1:
        geometry = Geometry(val("geometry", "omega", lambda v: _parse_shape(v, 1), default_geo.omega),
                            val("geometry", "control", lambda v: _parse_shape(v, 1), default_geo.control),
                            val("geometry", "measure", lambda v: _parse_shape(v, 1), default_geo.measure),
                            val("geometry", "t", float, default_geo.T))
    else:
        geometry = Geometry(val("geometry", "omega", lambda v: _parse_shape(v, dims)),
                            val("geometry", "control", lambda v: _parse_shape(v, dims)),
                            val("geometry", "measure", lambda v: _parse_shape(v, dims)),
                            val("geometry", "t", float, 1.0))

    def potential_spec(v: str) -> str:
        if not _POTENTIAL_RE.match(v.strip()):
            raise ValueError("expected zero | constant c | bump t0 x0.. width amplitude | file PATH")
        return v.strip()

    s = val("model", "s", float, 0.5)
    if not 0 < s < 1:
        raise ConfigError(f"[model] s must lie in (0, 1), got {s}", lines.get(("model", "s")))
    pot = val("model", "potential", potential_spec, "zero")
    pot2 = val("model", "potential2", potential_spec, "zero")
    pre = val("solver", "preconditioner", str, "none").strip().lower()
    if pre not in ("none", "symbol"):
        raise ConfigError("[solver] preconditioner must be none or symbol",
                          lines.get(("solver", "preconditioner")))

    def positive(cast):
        def conv(v):
            x = cast(v)
            if x <= 0:
                raise ValueError("must be positive")
            return x
        return conv

    solver = forward.SolverOptions(tol=val("solver", "tol", positive(float), 1e-10),
                                   max_iters=val("solver", "max_iters", positive(int), 2000),
                                   restart=val("solver", "restart", positive(int), 50),
                                   preconditioner=None if pre == "none" else pre)
    run = dict(cp.items("run")) if cp.has_section("run") else {}
    cfg_seed = val("run", "seed", int, 0) if cp.has_option("run", "seed") else 0
    return ExperimentConfig(grid, geometry, s, pot, pot2, solver,
                            cfg_seed if seed is None else seed, run, text,
                            Path(path) if path else None, lines)


def build_potential(spec: str, masks, cfg: ExperimentConfig, key: str = "potential") -> forward.Potential:
    parts = spec.split()
    kind = parts[0].lower()
    line = cfg.line("model", key)
    try:
        if kind == "zero":
            return forward.Potential.zero(masks)
        if kind == "constant":
            return forward.Potential.constant(masks, float(parts[1]))
        if kind == "bump":
            nums = [float(p) for p in parts[1:]]
            d = masks.grid.n_space_dims + 1
            if len(nums) != d + 2:
                raise ValueError(f"bump needs {d} center coordinates, width and amplitude")
            return forward.Potential.bump(masks, nums[:d], nums[d], nums[d + 1])
        if kind == "file":
            fld = read_fhf(Path(cfg.source).parent / parts[1] if cfg.source else parts[1])
            if fld.grid != masks.grid:
                raise ValueError("potential file grid does not match [grid]")
            return forward.Potential.from_field(masks, fld)
    except (IndexError, ValueError, OSError) as exc:
        raise ConfigError(f"[model] {key}: {exc}", line) from exc
    raise ConfigError(f"[model] {key}: unknown potential '{kind}'", line)


# --- reports -------------------------------------------------------------------------


@dataclass
class RunReport:
    command: str
    config_digest: str
    wall_time: float = 0.0
    scalars: dict[str, float] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def to_text(self) -> str:
        lines = [f"command = {self.command}", f"config_digest = {self.config_digest}",
                 f"wall_time = {self.wall_time:.6f}"]
        lines += [f"{k} = {v!r}" for k, v in self.scalars.items()]
        lines += [f"check.{k} = {'pass' if v else 'fail'}" for k, v in self.checks.items()]
        lines += [f"output = {p}" for p in self.outputs]
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse(text: str) -> dict[str, str]:
        out = {}
        for line in text.splitlines():
            if " = " in line:
                k, v = line.split(" = ", 1)
                out.setdefault(k, v)
        return out


class _Ctx:
    def __init__(self, cfg: ExperimentConfig, out: Path, threads: int):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.rng = np.random.default_rng(cfg.seed)
        self.masks = make_masks(cfg.grid, cfg.geometry)

    def write_field(self, report: RunReport, name: str, fld: Field):
        self.out.mkdir(parents=True, exist_ok=True)
        for p in (write_fhf(self.out / f"{name}.fhf", fld), write_csv(self.out / f"{name}.csv", fld)):
            report.outputs.append(str(p))

    def write_table(self, report: RunReport, name: str, header: list[str], rows):
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / f"{name}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) if not isinstance(v, str) else v for v in row) + "\n")
        report.outputs.append(str(path))

    def random_on(self, mask: np.ndarray) -> Field:
        """Random datum on ``mask``: a random combination of Gaussian bumps."""
        g = self.cfg.grid
        vals = np.zeros(g.shape)
        idx = np.argwhere(mask)
        coords = g.coords()
        axes = [g.t] + [g.x] * g.n_space_dims
        widths = [0.3] + [0.15] * g.n_space_dims
        for _ in range(4):
            centre = idx[self.rng.integers(len(idx))]
            r2 = sum(((c - ax[i]) / w) ** 2 for c, ax, i, w in zip(coords, axes, centre, widths))
            vals += self.rng.standard_normal() * np.exp(-0.5 * r2)
        return Field(g, np.where(mask, vals, 0.0))


def _datum(ctx: _Ctx, mask: np.ndarray) -> Field:
    kind = ctx.cfg.get("datum", "random").strip().lower()
    if kind == "zero":
        return Field.zeros(ctx.cfg.grid)
    if kind == "random":
        return ctx.random_on(mask)
    raise ConfigError("[run] datum must be random or zero", ctx.cfg.line("run", "datum"))


def _cbump(z, r):
    inside = np.abs(z) < r
    zz = np.where(inside, z / r, 0.0)
    return np.where(inside, np.exp(1 - 1 / np.maximum(1 - zz**2, 1e-300)), 0.0)


def manufactured_solution(grid: GridConfig, masks) -> Field:
    """Smooth compactly supported ``u*`` vanishing in the past buffer."""
    t, *xs = grid.coords()
    T = masks.T_half
    vals = _cbump(t - 0.05 * T, 0.85 * T)
    for x in xs:
        vals = vals * _cbump(x - 0.1, 1.6)
    return Field(grid, vals * np.ones(grid.shape))


# --- commands --------------------------------------------------------------------------


def cmd_forward(ctx: _Ctx, report: RunReport):
    cfg, m = ctx.cfg, ctx.masks
    Q = build_potential(cfg.potential, m, cfg)
    if cfg.get("manufactured", False, _as_bool):
        ustar = manufactured_solution(cfg.grid, m)
        F = (operator.apply_ls(ustar, cfg.s) + Q.as_field(cfg.grid) * ustar).masked(m.omega_T)
        f = ustar.masked(~m.omega_T)
        sol = forward.solve_dirichlet(f, F, Q, cfg.s, m, cfg.solver)
        err = (sol.u - ustar).norm() / ustar.norm()
        report.scalars["manufactured_error"] = err
        report.checks["manufactured_error"] = err < cfg.get("error_tol", 1e-8, float)
    else:
        f = _datum(ctx, m.control_window)
        sol = forward.solve_dirichlet(f, None, Q, cfg.s, m, cfg.solver)
        report.scalars["solution_norm"] = sol.u.norm()
    report.scalars["interior_residual"] = sol.interior_residual
    report.scalars["krylov_iters"] = float(sol.krylov_iters)
    report.scalars["krylov_relres"] = sol.krylov_relres
    report.checks["interior_residual"] = sol.interior_residual <= 10 * cfg.solver.tol
    ctx.write_field(report, "u", sol.u)


def _as_bool(v: str) -> bool:
    v = str(v).strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def cmd_dnmap(ctx: _Ctx, report: RunReport):
    cfg, m = ctx.cfg, ctx.masks
    Q = build_potential(cfg.potential, m, cfg)
    f = _datum(ctx, m.control_window)
    gdat = ctx.random_on(m.measure_window)
    rec = dnmap.dn_apply(f, Q, cfg.s, m, cfg.solver)
    adj = dnmap.dn_adjoint_apply(gdat, Q, cfg.s, m, cfg.solver)
    a = dnmap.dn_pairing(rec, gdat)
    b = dnmap.dn_pairing(adj, f)
    pair = abs(a - b) / max(abs(a), abs(b)) if max(abs(a), abs(b)) > 0 else 0.0
    report.scalars["pairing_lhs"] = a
    report.scalars["pairing_rhs"] = b
    report.scalars["pairing_residual"] = pair
    report.checks["pairing_residual"] = pair < cfg.get("pairing_tol", 1e-9, float)
    # linearity spot check
    f2 = ctx.random_on(m.control_window)
    c1, c2 = ctx.rng.standard_normal(2)
    comb = dnmap.dn_apply(f * c1 + f2 * c2, Q, cfg.s, m, cfg.solver).output
    sep = rec.output * c1 + dnmap.dn_apply(f2, Q, cfg.s, m, cfg.solver).output * c2
    lin = (comb - sep).norm() / max(comb.norm(), 1e-300)
    report.scalars["linearity_residual"] = lin
    report.checks["linearity"] = lin < cfg.get("linearity_tol", 1e-9, float)
    report.scalars["output_norm"] = rec.output.norm()
    report.scalars["interior_residual"] = rec.solution.interior_residual
    ctx.write_field(report, "dn_output", rec.output)


def cmd_alessandrini(ctx: _Ctx, report: RunReport):
    cfg, m = ctx.cfg, ctx.masks
    Q1 = build_potential(cfg.potential, m, cfg)
    Q2 = build_potential(cfg.potential2, m, cfg, "potential2")
    pairs = cfg.get("pairs", 3, int)
    worst = 0.0
    rows = []
    for k in range(pairs):
        f1 = ctx.random_on(m.control_window)
        f2 = ctx.random_on(m.measure_window)
        r = dnmap.alessandrini(Q1, Q2, f1, f2, cfg.s, m, cfg.solver)
        row = [k, r.lhs, r.rhs, r.residual]
        if k == 0:
            report.scalars.update(lhs=r.lhs, rhs=r.rhs, residual=r.residual)
        if cfg.grid.size <= 16 * 16 and m.grid.n_space_dims == 1:
            dl, dr = dnmap.alessandrini_dense(Q1, Q2, f1, f2, cfg.s, m)
            scale = max(abs(dl), abs(dr), 1e-300)
            dev = max(abs(dl - r.lhs), abs(dr - r.rhs)) / scale
            report.scalars[f"dense_deviation_{k}"] = dev
            report.checks[f"dense_{k}"] = dev < cfg.get("dense_tol", 1e-8, float)
        worst = max(worst, r.residual)
        rows.append(row)
    report.scalars["max_residual"] = worst
    same = not np.any(Q1.values != Q2.values)
    if same:
        report.checks["equal_potentials_zero"] = all(abs(r[1]) + abs(r[2]) < 1e3 * cfg.solver.tol
                                                    for r in rows)
    else:
        report.checks["residual"] = worst < cfg.get("residual_tol", 1e-7, float)
    ctx.write_table(report, "alessandrini", ["pair", "lhs", "rhs", "residual"], rows)


def _test_field(ctx: _Ctx) -> Field:
    g = ctx.cfg.grid
    kind = ctx.cfg.get("field", "modes").strip().lower()
    if kind == "zero":
        return Field.zeros(g)
    if kind != "modes":
        raise ConfigError("[run] field must be modes or zero", ctx.cfg.line("run", "field"))
    coords = g.coords()
    vals = np.zeros(g.shape)
    periods = [2 * g.L_t] + [2 * g.L_x] * g.n_space_dims
    for _ in range(6):
        phase = 0.0
        for c, P in zip(coords, periods):
            phase = phase + 2 * math.pi * ctx.rng.integers(-3, 4) * c / P
        vals = vals + ctx.rng.standard_normal() * np.cos(phase + ctx.rng.uniform(0, 2 * math.pi))
    return Field(g, vals)


def cmd_extension(ctx: _Ctx, report: RunReport):
    cfg = ctx.cfg
    u = _test_field(ctx)
    heights = np.asarray(cfg.floats("heights", extension.default_heights()))
    ext = extension.extend(u, cfg.s, heights)
    tr = extension.neumann_trace(ext, y_max=cfg.get("y_max", 0.1, float))
    ds = extension.trace_constant(cfg.s)
    report.scalars["d_s"] = ds
    report.scalars["zero_field"] = float(tr.zero_field)
    if not tr.zero_field:
        report.scalars["fitted_constant"] = tr.fitted_constant
        report.scalars["ratio_cv"] = tr.ratio_cv
        report.scalars["extrapolation_residual"] = tr.extrapolation_residual
        dev = abs(abs(tr.fitted_constant) - ds) / ds
        report.scalars["constant_deviation"] = dev
        report.checks["trace_constant"] = dev < cfg.get("constant_tol", 1e-4, float)
        lo, hi = cfg.floats("ladder", (0.2, 1.2))
        n = cfg.get("ladder_points", 161, int)
        r1 = extension.extension_pde_residual(extension.extend(u, cfg.s, np.linspace(lo, hi, n)))
        r2 = extension.extension_pde_residual(extension.extend(u, cfg.s, np.linspace(lo, hi, 2 * n - 1)))
        report.scalars["pde_residual"] = r1
        report.scalars["pde_residual_refined"] = r2
        report.scalars["refinement_factor"] = r1 / r2
        report.checks["refinement_factor"] = 3.5 <= r1 / r2 <= 4.5
        ctx.write_field(report, "weighted_neumann", tr.weighted_neumann)


def _recovery_datum(masks) -> Field:
    g = masks.grid
    t, *xs = g.coords()
    idx = np.nonzero(masks.control_window)
    vals = np.exp(-(t / (0.7 * masks.T_half)) ** 2) * np.ones(g.shape)
    for a, x in enumerate(xs, start=1):
        xv = g.x[idx[a]]
        c, r = 0.5 * (xv.min() + xv.max()), 0.5 * (xv.max() - xv.min())
        vals = vals * np.exp(-((x - c) / (0.6 * max(r, g.dx))) ** 2)
    return Field(g, np.where(masks.control_window, vals, 0.0))


def cmd_reconstruct(ctx: _Ctx, report: RunReport):
    cfg, m = ctx.cfg, ctx.masks
    Q = build_potential(cfg.potential, m, cfg)
    f = _recovery_datum(m)
    rec = dnmap.dn_apply(f, Q, cfg.s, m, cfg.solver)
    measured = rec.output
    noise = cfg.get("noise", 0.0, float)
    if noise > 0:
        amp = noise * np.sqrt(np.mean(measured.values[m.measure_window] ** 2))
        pert = np.where(m.measure_window, amp * ctx.rng.standard_normal(cfg.grid.shape), 0.0)
        measured = measured + Field(cfg.grid, pert)
    alphas = cfg.floats("alphas", inverse.RECOVERY_ALPHAS)
    eps = cfg.get("eps_mask", 1e-2, float)
    res = inverse.recover_potential(f, measured, cfg.s, m, cfg.solver, eps, alphas,
                                    truth_u=rec.solution.u)
    err = res.error(Q) if np.any(Q.values[res.mask_kept]) else float(np.linalg.norm(res.q_hat.values))
    report.scalars["alpha"] = res.alpha
    report.scalars["coverage"] = res.coverage
    report.scalars["q_error"] = err
    path = res.path
    if noise > 0:
        report.scalars["best_alpha"] = float(path.alphas[path.best()])
    else:
        report.checks["q_error"] = err < cfg.get("q_tol", 0.1, float)
    ctx.write_table(report, "tikhonov_path", ["alpha", "data_residual", "solution_error", "gradient"],
                    zip(path.alphas, path.data_residuals, path.solution_errors, path.gradient_norms))
    ctx.write_field(report, "q_hat", res.q_hat.as_field(cfg.grid))
    errmap = np.where(res.mask_kept, res.q_hat.values - Q.values, 0.0)
    ctx.write_field(report, "q_error_map", Field(cfg.grid, errmap))


def cmd_runge(ctx: _Ctx, report: RunReport):
    cfg, m = ctx.cfg, ctx.masks
    Q = build_potential(cfg.potential, m, cfg)
    g = cfg.grid
    kind = cfg.get("target", "bump").strip().lower()
    if kind == "one":
        target = Field(g, m.omega_T.astype(float))
    elif kind == "bump":
        t, *xs = g.coords()
        r2 = (t / (0.3 * m.T_half)) ** 2 + sum((x / 0.15) ** 2 for x in xs)
        target = Field(g, np.where(m.omega_T, np.exp(-0.5 * r2), 0.0))
    else:
        raise ConfigError("[run] target must be bump or one", cfg.line("run", "target"))
    Ks = cfg.ints("K", (4, 16, 64))
    reg = cfg.get("reg", 1e-12, float)
    errors = []
    for K in Ks:
        r = inverse.runge_control(target, K, reg, Q, cfg.s, m, cfg.solver, threads=ctx.threads)
        errors.append(r.approx_error)
        report.scalars[f"error_K{K}"] = r.approx_error
    report.checks["decreasing"] = bool(np.all(np.diff(errors) < 0))
    ctx.write_table(report, "runge", ["K", "approx_error"], zip(map(str, Ks), errors))


def selftest_suite(cfg: ExperimentConfig, rng: np.random.Generator, tol: float | None = None) -> dict[str, tuple[float, float]]:
    """Invariant suite; returns ``{name: (value, threshold)}``."""
    g = cfg.grid
    s = cfg.s
    t_dual = tol if tol is not None else 1e-11
    out = {}

    def rnd():
        return Field(g, rng.standard_normal(g.shape))

    worst = 0.0
    for _ in range(5):
        worst = max(worst, *operator.duality_check(rnd(), rnd(), s))
    out["duality"] = (worst, t_dual)
    lhs, rhs = forward.coercivity_check(rnd(), s)
    out["coercivity"] = ((rhs - lhs) / max(abs(rhs), 1e-300), tol if tol is not None else 1e-10)
    out["mapping_bound"] = (operator.mapping_bound_check(rnd(), s) - 1.0,
                            tol if tol is not None else 1e-10)
    coarse = GridConfig(g.n_space_dims, g.L_t, g.L_x, min(g.N_t, 32), min(g.N_x, 32))
    u = Field(coarse, rng.standard_normal(coarse.shape))
    quad = operator.KernelQuadrature.default(coarse, n_tau=16)
    k0 = operator.apply_kernel(u, s, quad).values
    cut = coarse.N_t // 2
    pert = u.values.copy()
    pert[cut:] += rng.standard_normal(pert[cut:].shape)
    k1 = operator.apply_kernel(Field(coarse, pert), s, quad).values
    out["causality"] = (float(np.max(np.abs(k0[:cut] - k1[:cut]))), 0.0)
    v = rnd()
    c = dft_forward(v)
    pl = abs(c.norm() - v.norm()) / v.norm()
    out["plancherel"] = (pl, tol if tol is not None else 1e-12)
    return out


def cmd_selftest(ctx: _Ctx, report: RunReport):
    tol = ctx.cfg.get("tol", None, float)
    results = selftest_suite(ctx.cfg, ctx.rng, tol)
    for name, (value, thresh) in results.items():
        ok = value <= thresh
        report.scalars[name] = value
        report.checks[name] = bool(ok)
        print(f"{name}: {'PASS' if ok else 'FAIL'} ({value:.3e} <= {thresh:.1e})")


COMMANDS: dict[str, Callable[[_Ctx, RunReport], None]] = {
    "forward": cmd_forward,
    "dnmap": cmd_dnmap,
    "alessandrini": cmd_alessandrini,
    "extension": cmd_extension,
    "reconstruct": cmd_reconstruct,
    "runge": cmd_runge,
    "selftest": cmd_selftest,
}


def run_command(command: str, cfg: ExperimentConfig, out: str | Path = "out",
                threads: int = 1) -> RunReport:
    """Run ``command`` and write ``report.txt``; exceptions propagate."""
    report = RunReport(command, cfg.digest)
    ctx = _Ctx(cfg, Path(out), threads)
    t0 = time.perf_counter()
    COMMANDS[command](ctx, report)
    report.wall_time = time.perf_counter() - t0
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracalderon", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="experiment configuration file")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--threads", type=int, default=1, help="cap on concurrent solves")
    p.add_argument("--seed", type=int, default=None, help="override [run] seed")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, seed=args.seed)
        report = run_command(args.command, cfg, args.out, args.threads)
    except (ConfigError, GeometryError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"error: NonConvergence: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    sys.stdout.write(report.to_text())
    return EXIT_OK if report.ok else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
