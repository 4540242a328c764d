from __future__ import annotations

import numpy as np
import pytest

from fracalderon.core import Field, inner
from fracalderon.dnmap import (alessandrini, alessandrini_dense, dn_adjoint_apply, dn_apply,
                               dn_pairing)
from fracalderon.errors import GeometryError
from fracalderon.forward import Potential, SolverOptions, bilinear_form
from fracalderon.forward import solve_dirichlet
from fracalderon.inverse import runge_basis
from fracalderon.operator import apply_ls, time_reflect

from conftest import random_field, smooth_on


def _subcell(m, amp=0.7):
    """Indicator of a small cell inside omega_T."""
    t, x = m.grid.coords()
    cell = (np.abs(t - 0.1) < 0.3) & (np.abs(x + 0.2) < 0.25) & m.omega_T
    return Potential(np.where(cell, amp, 0.0), m.omega_T)


def test_zero_datum(masks32):
    m = masks32
    Q = Potential.constant(m, 0.4)
    r = dn_apply(Field.zeros(m.grid), Q, 0.5, m)
    assert not np.any(r.output.values)
    ra = dn_adjoint_apply(Field.zeros(m.grid), Q, 0.5, m)
    assert not np.any(ra.output.values)


def test_windows_respected(masks32, rng):
    m = masks32
    f = smooth_on(m.control_window, m.grid, rng)
    r = dn_apply(f, Potential.zero(m), 0.5, m)
    assert not np.any(r.output.values[~m.measure_window])
    assert not np.any(r.input.values[~m.control_window])
    with pytest.raises(GeometryError):
        dn_apply(random_field(m.grid, rng, m.measure_window), Potential.zero(m), 0.5, m)
    with pytest.raises(GeometryError):
        dn_adjoint_apply(f, Potential.zero(m), 0.5, m)


def test_tighter_tolerance_consistent(masks32, rng):
    m = masks32
    f = smooth_on(m.control_window, m.grid, rng)
    loose = dn_apply(f, Potential.zero(m), 0.5, m, SolverOptions(tol=1e-8))
    tight = dn_apply(f, Potential.zero(m), 0.5, m, SolverOptions(tol=1e-12))
    dev = (loose.output - tight.output).norm() / tight.output.norm()
    assert dev < 10 * 1e-8


def test_pairing_equals_bilinear_form(masks32, rng):
    m = masks32
    Q = Potential.bump(m, (0, 0), 0.3, 0.5)
    for _ in range(3):
        f = smooth_on(m.control_window, m.grid, rng)
        g = random_field(m.grid, rng, ~m.omega_T)
        r = dn_apply(f, Q, 0.5, m, SolverOptions(tol=1e-12))
        a = dn_pairing(r, g)
        b = bilinear_form(r.solution.u, g, Q, 0.5, m)
        assert abs(a - b) < 1e-10 * max(abs(a), abs(b))


def test_adjoint_pairing_suite(masks32):
    m = masks32
    rng = np.random.default_rng(7)
    Q = Potential.bump(m, (0, 0), 0.3, 0.5)
    for _ in range(10):
        f = smooth_on(m.control_window, m.grid, rng)
        g = smooth_on(m.measure_window, m.grid, rng)
        lhs = inner(dn_apply(f, Q, 0.5, m).output, g)
        rhs = inner(f, dn_adjoint_apply(g, Q, 0.5, m).output)
        assert abs(lhs - rhs) / (abs(lhs) + abs(rhs)) < 1e-9


def test_time_reflection_symmetry(masks32, rng):
    m = masks32
    g = smooth_on(m.measure_window, m.grid, rng)
    adj = dn_adjoint_apply(g, Potential.zero(m), 0.5, m).exterior_output
    # the default windows are symmetric in t, so the reflected datum is admissible
    u = solve_dirichlet(time_reflect(g), None, Potential.zero(m), 0.5, m).u
    fwd = time_reflect(apply_ls(u, 0.5)).masked(~m.omega_T)
    assert (adj - fwd).norm() / adj.norm() < 1e-9


def test_linearity(masks32, rng):
    m = masks32
    Q = Potential.bump(m, (0, 0), 0.3, 0.5)
    f1 = smooth_on(m.control_window, m.grid, rng)
    f2 = smooth_on(m.control_window, m.grid, rng)
    a, b = 1.7, -0.4
    opts = SolverOptions(tol=1e-12)
    lhs = dn_apply(f1 * a + f2 * b, Q, 0.5, m, opts).output
    rhs = dn_apply(f1, Q, 0.5, m, opts).output * a + dn_apply(f2, Q, 0.5, m, opts).output * b
    assert (lhs - rhs).norm() / lhs.norm() < 1e-10


def test_alessandrini_equal_potentials(masks32, rng):
    m = masks32
    Q = Potential.bump(m, (0, 0), 0.3, 0.5)
    f1 = smooth_on(m.control_window, m.grid, rng)
    f2 = smooth_on(m.measure_window, m.grid, rng)
    res = alessandrini(Q, Q, f1, f2, 0.5, m)
    assert res.lhs == 0.0 and res.rhs == 0.0


def test_alessandrini_dense_oracle(masks16, rng):
    m = masks16
    Q2 = Potential.bump(m, (0, 0), 0.3, 0.5)
    Q1 = Q2 + _subcell(m)
    for _ in range(3):
        f1 = smooth_on(m.control_window, m.grid, rng)
        f2 = smooth_on(m.measure_window, m.grid, rng)
        res = alessandrini(Q1, Q2, f1, f2, 0.5, m, SolverOptions(tol=1e-12))
        lhs, rhs = alessandrini_dense(Q1, Q2, f1, f2, 0.5, m)
        assert abs(lhs - rhs) <= 1e-10 * (abs(lhs) + abs(rhs))
        assert abs(res.lhs - lhs) <= 1e-8 * abs(lhs)
        assert abs(res.rhs - rhs) <= 1e-8 * abs(rhs)


def test_alessandrini_subcell_indicator(masks32, rng):
    m = masks32
    Q2 = Potential.constant(m, 0.2)
    Q1 = Q2 + _subcell(m, 1.3)
    f1 = random_field(m.grid, rng, m.control_window)
    f2 = random_field(m.grid, rng, m.measure_window)
    assert alessandrini(Q1, Q2, f1, f2, 0.5, m).residual < 1e-7


def test_alessandrini_randomized_suite(masks32):
    m = masks32
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(5):
        c = rng.uniform(-0.3, 0.3, 2)
        Q1 = Potential.bump(m, tuple(c), rng.uniform(0.15, 0.4), rng.uniform(-1, 1))
        Q2 = Potential.constant(m, rng.uniform(0, 0.5))
        for _ in range(3):
            f1 = smooth_on(m.control_window, m.grid, rng)
            f2 = smooth_on(m.measure_window, m.grid, rng)
            worst = max(worst, alessandrini(Q1, Q2, f1, f2, 0.5, m).residual)
    assert worst < 1e-7


def test_discrimination(masks32):
    m = masks32
    tol = 1e-10
    Q2 = Potential.zero(m)
    Q1 = _subcell(m, 0.5)
    probes = runge_basis(m.control_window, m, 4)
    gaps = [(dn_apply(f, Q1, 0.5, m, SolverOptions(tol=tol)).output
             - dn_apply(f, Q2, 0.5, m, SolverOptions(tol=tol)).output).norm() / f.norm()
            for f in probes]
    assert max(gaps) >= 100 * tol

