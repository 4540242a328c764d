from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracalderon.core import (Ball, Field, Geometry, GridConfig, Rect, SpectralField, dft_forward,
                              dft_inverse, hermitian_residue, inner, make_masks, read_fhf,
                              sobolev_norm, time_window, write_csv, write_fhf)
from fracalderon.errors import GeometryError, HermitianViolation

from conftest import random_field


def test_grid_spacings_and_frequencies():
    g = GridConfig(1, 2.0, 3.0, 16, 32)
    assert g.dt == pytest.approx(0.25)
    assert g.dx == pytest.approx(6.0 / 32)
    assert g.shape == (16, 32)
    rho = np.sort(g.rho)
    assert rho[0] == pytest.approx(-math.pi * 8 / 2.0)
    assert rho[-1] == pytest.approx(math.pi * 7 / 2.0)
    assert g.t[0] == pytest.approx(-2.0)


@pytest.mark.parametrize("bad", [dict(N_t=7), dict(N_x=6), dict(L_t=0.0), dict(n_space_dims=3)])
def test_grid_validation(bad):
    kw = dict(n_space_dims=1, L_t=2.0, L_x=2.0, N_t=16, N_x=16) | bad
    with pytest.raises(ValueError):
        GridConfig(**kw)


def test_constant_field_has_only_zero_frequency(grid16):
    c = dft_forward(Field(grid16, np.full(grid16.shape, 3.0))).coeffs
    assert abs(c[0, 0]) > 0
    rest = c.copy()
    rest[0, 0] = 0
    assert np.max(np.abs(rest)) < 1e-12 * abs(c[0, 0])


def test_round_trip_and_plancherel(grid16, rng):
    u = random_field(grid16, rng)
    spec = dft_forward(u)
    back = dft_inverse(spec)
    assert np.max(np.abs(back.values - u.values)) < 1e-12
    assert abs(spec.norm() - u.norm()) / u.norm() < 1e-12
    again = dft_forward(back)
    assert np.max(np.abs(again.coeffs - spec.coeffs)) < 1e-12 * spec.norm()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(1, 8, 8), (1, 16, 32), (2, 8, 8)]))
def test_plancherel_and_hermitian_property(seed, dims):
    n, nt, nx = dims
    g = GridConfig(n, 1.5, 2.5, nt, nx)
    u = random_field(g, np.random.default_rng(seed))
    spec = dft_forward(u)
    assert abs(spec.norm() - u.norm()) <= 1e-12 * u.norm()
    assert hermitian_residue(spec.coeffs) < 1e-12
    assert np.max(np.abs(dft_inverse(spec).values - u.values)) < 1e-12 * np.max(np.abs(u.values)) * 10


def test_conjugate_pair_gives_cosine():
    g = GridConfig(1, math.pi, 2.0, 16, 16)
    c = np.zeros(g.shape, dtype=complex)
    c[1, 0] = 0.5 + 0.25j
    c[-1, 0] = np.conj(c[1, 0])
    u = dft_inverse(SpectralField(g, c))
    t = g.t[:, None] - g.t[0]  # FFT phase is measured from the first node
    scale = math.sqrt(g.cell_volume / g.size)
    expected = 2 * (0.5 * np.cos(t) - 0.25 * np.sin(t)) / (g.size * scale)
    assert np.allclose(u.values, np.broadcast_to(expected, g.shape), atol=1e-12)


def test_zero_coefficients_give_zero_field(grid16):
    assert not np.any(dft_inverse(SpectralField(grid16, np.zeros(grid16.shape, complex))).values)


def test_hermitian_violation(grid16):
    c = np.zeros(grid16.shape, dtype=complex)
    c[1, 2] = 1.0
    with pytest.raises(HermitianViolation):
        dft_inverse(SpectralField(grid16, c))


def test_sobolev_norm_zero_index_is_l2(grid16, rng):
    u = random_field(grid16, rng)
    assert sobolev_norm(u, 0.0) == pytest.approx(u.norm(), rel=1e-12)


def test_sobolev_single_mode_value():
    g = GridConfig(1, math.pi, 2.0, 16, 16)  # rho_1 = 1
    c = np.zeros(g.shape, dtype=complex)
    c[1, 0] = 1.0
    assert sobolev_norm(SpectralField(g, c), 1.0) == pytest.approx(math.sqrt(2.0), rel=1e-14)


def test_sobolev_monotone_in_index(grid16, rng):
    for _ in range(5):
        u = random_field(grid16, rng)
        vals = [sobolev_norm(u, a) for a in (-1.0, 0.0, 1.0)]
        assert vals[0] <= vals[1] <= vals[2]


def test_sobolev_norm_axioms(grid16, rng):
    for a in (-1.5, -0.5, 0.5, 2.0):
        for _ in range(5):
            u, v = random_field(grid16, rng), random_field(grid16, rng)
            c = rng.uniform(-3, 3)
            assert sobolev_norm(u * c, a) == pytest.approx(abs(c) * sobolev_norm(u, a), rel=1e-10)
            assert sobolev_norm(u + v, a) <= sobolev_norm(u, a) + sobolev_norm(v, a) + 1e-10


def test_sobolev_index_range(grid16, rng):
    with pytest.raises(ValueError):
        sobolev_norm(random_field(grid16, rng), 2.5)


def test_time_window_support_cases(grid32):
    g = grid32
    inside = Field.from_function(g, lambda t, x: np.where(np.abs(t) < 0.5, np.cos(t) * np.sin(x), 0.0))
    out, _ = time_window(inside, -0.6, 0.6)
    assert np.array_equal(out.values, inside.values)
    outside = Field.from_function(g, lambda t, x: np.where(t > 1.0, 1.0 + 0 * x, 0.0))
    out, _ = time_window(outside, -0.5, 0.5)
    assert not np.any(out.values)


def test_time_window_ratio_stable_under_refinement():
    ratios = []
    for N in (32, 64, 128):
        g = GridConfig(1, 2.0, 2.0, N, N)
        u = Field.from_function(g, lambda t, x: np.exp(-((t + 0.5) ** 2 + x**2) / 0.1))
        _, r = time_window(u, -0.5, 1.5)
        ratios.append(r)
    assert all(np.isfinite(ratios))
    assert max(ratios) / min(ratios) <= 2.0


def test_default_masks_are_disjoint_and_gapped(grid32, masks32):
    m = masks32
    sets = [m.omega_T, m.control_window, m.measure_window]
    for i in range(3):
        for j in range(i + 1, 3):
            assert not np.any(sets[i] & sets[j])
    x = np.broadcast_to(grid32.coords()[1], grid32.shape)
    gap = np.min(np.abs(x[m.control_window][:, None] - x[m.omega_T][None, :]))
    assert gap >= 0.5


def test_mask_partition_is_exhaustive(grid32, masks32):
    m = masks32
    count = (m.omega_T.astype(int) + m.exterior + m.past_buffer + m.future_buffer)
    assert np.all(count == 1)
    assert not np.any((m.control_window | m.measure_window) & ~m.exterior)


def test_overlapping_window_rejected(grid32):
    with pytest.raises(GeometryError):
        make_masks(grid32, Geometry(control=Rect((0.2,), (0.8,))))
    with pytest.raises(GeometryError):
        make_masks(grid32, Geometry(measure=Rect((-1.5,), (-0.5,))))  # touches the closure


def test_empty_buffer_rejected(grid32):
    with pytest.raises(GeometryError):
        make_masks(grid32, Geometry(T=2.0))


def test_omega_node_count(grid32):
    g = grid32
    m = make_masks(g, Geometry())
    expected = round(1.0 * 2 * 1.0 / (g.dx * g.dt))
    # boundary layer: one node row per face of the cylinder
    assert abs(m.n_interior - expected) <= 2 * (g.N_t // 2 + g.N_x // 4)
    t, x = g.coords()
    brute = int(np.sum((np.abs(t) < 1.0) & (np.abs(x) < 0.5)))
    assert m.n_interior == brute


def test_ball_masks_2d():
    g = GridConfig(2, 2.0, 2.0, 16, 16)
    geo = Geometry(Ball((0.0, 0.0), 0.5), Rect((1.0, -0.5), (1.5, 0.5)), Ball((-1.2, 0.0), 0.3), 1.0)
    m = make_masks(g, geo)
    assert m.omega_T.any() and m.control_window.any() and m.measure_window.any()


def test_fhf_and_csv_round_trip(tmp_path, grid16, rng):
    u = random_field(grid16, rng)
    p = write_fhf(tmp_path / "u.fhf", u)
    head = p.read_bytes().split(b"\n\n")[0].decode()
    assert head.splitlines()[0] == "FHF1"
    assert "normalization unitary-riemann" in head
    v = read_fhf(p)
    assert v.grid == u.grid and np.array_equal(v.values, u.values)
    c = write_csv(tmp_path / "u.csv", u)
    rows = c.read_text(encoding="utf-8").splitlines()
    assert rows[0] == "t,x,value"
    assert len(rows) == grid16.size + 1
    data = np.loadtxt(c, delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 2], u.values.ravel())


def test_inner_masked(grid16, rng):
    u, w = random_field(grid16, rng), random_field(grid16, rng)
    mask = rng.random(grid16.shape) < 0.3
    assert inner(u, w, mask) == pytest.approx(np.sum((u.values * w.values)[mask]) * grid16.cell_volume)
