import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from willmore_lab.ambient import FlatChart, SpaceFormChart
from willmore_lab.errors import ConfigError, DegeneracyError, DomainError
from willmore_lab.sphere import lm_index, make_grid, n_coeffs
from willmore_lab.surface import (
    Surface,
    covariant_divergence,
    geometry,
    integrate,
    l2_norm,
    laplace_beltrami,
    simons_residual,
    sup_norm,
)

from conftest import ellipsoid, ellipsoid_mean_curvature

AXES = (0.3, 0.26, 0.22)


def gauss_curvature_integral(fields, grid, kappa=0.0):
    """int (kappa + H^2/4 - |Acirc|^2/2) for a space form of curvature kappa."""
    K = kappa + fields.H**2 / 4 - fields.Acirc_norm2 / 2
    return float(integrate(fields, grid, K))


def test_flat_round_sphere(flat, grid16):
    r = 0.3
    f = geometry(flat, Surface.sphere([0.1, -0.2, 0.05], r, 16), grid16)
    np.testing.assert_allclose(f.H, 2 / r, rtol=1e-12)
    assert sup_norm(f, f.Acirc) < 1e-12
    assert f.area == pytest.approx(4 * math.pi * r**2, rel=1e-13)
    np.testing.assert_allclose(np.einsum("ka,ka->k", f.nu, f.y - [0.1, -0.2, 0.05]), r, rtol=1e-13)


def test_space_form_geodesic_sphere(sphere3, grid16):
    r = 0.2
    f = geometry(sphere3, Surface.sphere(np.zeros(3), r, 16), grid16)
    np.testing.assert_allclose(f.H, 2 / math.tan(r), rtol=1e-12)
    assert f.area == pytest.approx(4 * math.pi * math.sin(r) ** 2, rel=1e-12)
    assert sup_norm(f, f.Acirc) < 1e-10
    np.testing.assert_allclose(f.ric_nn, 2.0, atol=1e-12)
    np.testing.assert_allclose(f.sc, 6.0, atol=1e-12)


def test_ellipsoid_mean_curvature(flat, grid24):
    f = geometry(flat, ellipsoid(grid24, AXES), grid24)
    np.testing.assert_allclose(f.H, ellipsoid_mean_curvature(f.y, AXES), rtol=1e-7)
    # nu is the outward normal: it points along the gradient of the level-set function
    grad = f.y / np.asarray(AXES) ** 2
    grad /= np.linalg.norm(grad, axis=1, keepdims=True)
    np.testing.assert_allclose(f.nu, grad, atol=1e-7)


def test_ellipsoid_spectral_convergence(flat):
    errs = []
    for n in (16, 24):
        grid = make_grid(2 * n, 4 * n, n)
        f = geometry(flat, ellipsoid(grid, AXES), grid)
        errs.append(np.max(np.abs(f.H - ellipsoid_mean_curvature(f.y, AXES))))
    assert errs[1] < errs[0] / 10


@given(st.lists(st.floats(-0.008, 0.008), min_size=n_coeffs(6) - 1, max_size=n_coeffs(6) - 1))
def test_gauss_bonnet_for_star_shaped_surfaces(pert):
    grid = make_grid(32, 64, 10)
    a = np.zeros(n_coeffs(10))
    a[0] = 0.25 * math.sqrt(4 * math.pi)
    a[1 : n_coeffs(6)] = pert
    surf = Surface(np.zeros(3), a)
    assert gauss_curvature_integral(geometry(FlatChart(1.0), surf, grid), grid) == pytest.approx(4 * math.pi, abs=1e-7)
    sf = geometry(SpaceFormChart(2.0, 1.0), surf, grid)
    assert gauss_curvature_integral(sf, grid, 2.0) == pytest.approx(4 * math.pi, abs=1e-7)


def test_laplace_beltrami_on_round_sphere(flat, grid16):
    r = 0.4
    f = geometry(flat, Surface.sphere(np.zeros(3), r, 16), grid16)
    a = np.zeros(n_coeffs(16))
    a[lm_index(3, -2)] = 1.0
    Y = grid16.synthesize(a)["f"]
    np.testing.assert_allclose(laplace_beltrami(f, grid16, Y), -12 / r**2 * Y, atol=1e-9)


def test_divergence_theorem(morse, grid16):
    surf = ellipsoid(grid16, (0.1, 0.09, 0.08), center=(0.3, 0.02, -0.05))
    f = geometry(morse, surf, grid16)
    div = covariant_divergence(f, grid16, f.omega)
    assert abs(float(integrate(f, grid16, div))) < 1e-9 * l2_norm(f, grid16, f.omega) / 0.1


def test_simons_residual_refines(flat):
    """On a fixed ellipsoid the discrete Simons defect drops by at least 4 from L=16 to L=24."""
    res = []
    for n in (16, 24):
        grid = make_grid(2 * n, 4 * n, n)
        res.append(simons_residual(flat, ellipsoid(grid, AXES), grid))
    assert res[1] <= res[0] / 4


def test_simons_identity_curved(morse, grid24):
    surf = ellipsoid(grid24, (0.1, 0.09, 0.08), center=(0.3, 0.02, -0.05))
    f = geometry(morse, surf, grid24)
    assert simons_residual(morse, surf, grid24) < 1e-6 * l2_norm(f, grid24, f.Acirc) / 0.1**2


def test_translation_invariance_in_flat_space(flat, grid16):
    s = ellipsoid(grid16, AXES)
    f0 = geometry(flat, s, grid16)
    f1 = geometry(flat, s.translated([0.2, 0.1, -0.3]), grid16)
    np.testing.assert_allclose(f1.H, f0.H, rtol=1e-12)
    np.testing.assert_allclose(f1.y - f0.y, np.broadcast_to([0.2, 0.1, -0.3], f0.y.shape), atol=1e-15)


def test_recentered_sphere(flat, grid16):
    r, d = 0.3, np.array([0.05, -0.03, 0.02])
    s = Surface.sphere(np.zeros(3), r, 16)
    moved = s.recentered(grid16, d)
    om = grid16.unit_sphere()["f"]
    dw = om @ d
    # |d + t w| = r  =>  t = -d.w + sqrt(r^2 - |d|^2 + (d.w)^2)
    expect = -dw + np.sqrt(r**2 - d @ d + dw**2)
    rho = moved.radial(grid16, ("f",))["f"]
    assert np.max(np.abs(rho - expect)) < 1e-6 * r
    np.testing.assert_allclose(moved.center, d)
    with pytest.raises(DegeneracyError):
        s.recentered(grid16, np.array([0.5, 0.0, 0.0]))


def test_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    s = Surface(rng.normal(size=3), rng.normal(size=n_coeffs(5)))
    t = Surface.from_json(s.to_json())
    np.testing.assert_array_equal(t.coeffs, s.coeffs)
    np.testing.assert_array_equal(t.center, s.center)
    s.save(tmp_path / "s.json")
    np.testing.assert_array_equal(Surface.load(tmp_path / "s.json").coeffs, s.coeffs)
    assert json.loads(s.to_json())["L"] == 5


@pytest.mark.parametrize(
    "text",
    [
        "not json",
        "[]",
        '{"center": [0, 0], "L": 0, "coeffs": [1]}',
        '{"center": [0, 0, 0], "L": 1, "coeffs": [1]}',
        '{"center": [0, 0, 0], "L": -1, "coeffs": []}',
        '{"center": [0, 0, 0], "coeffs": [1]}',
        '{"center": [0, 0, 0], "L": 0, "coeffs": [1], "extra": 1}',
    ],
)
def test_bad_surface_files(text):
    with pytest.raises(ConfigError):
        Surface.from_json(text)


def test_missing_surface_file(tmp_path):
    with pytest.raises(ConfigError):
        Surface.load(tmp_path / "nope.json")


def test_degenerate_surfaces(flat, grid16):
    a = np.zeros(n_coeffs(4))
    a[0] = -1.0
    with pytest.raises(DegeneracyError):
        geometry(flat, Surface(np.zeros(3), a), grid16)
    with pytest.raises(ConfigError):
        geometry(flat, Surface.sphere(np.zeros(3), 0.1, 20), grid16)
    with pytest.raises(DomainError):
        geometry(flat, Surface.sphere(np.zeros(3), 2.5, 4), grid16)
    with pytest.raises(ConfigError):
        Surface(np.zeros(3), np.zeros(5))


def test_resample_and_filter():
    s = Surface(np.zeros(3), np.arange(n_coeffs(4), dtype=float))
    assert s.resampled(6).L == 6
    np.testing.assert_array_equal(s.resampled(6).resampled(4).coeffs, s.coeffs)
    assert np.all(s.filtered(2).coeffs[n_coeffs(2) :] == 0)
    assert s.scaled(2.0).coeffs[3] == 6.0
