import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krflab.geometry import (MetricField, PositivityLoss, TorusGrid, complex_gradient,
                             cosine_metric, curvature, ddbar, eigen_ratio, flat_decomposition,
                             generalized_eigenvalues, herm_det, herm_inv, kahler_defect,
                             laplacian_at, metric_from_potential, potential_hessian,
                             psi_and_s, random_metric, ricci_from_logdet, spectral_derivative,
                             trace)


@pytest.fixture(scope="module")
def grid1():
    return TorusGrid(1, 32)


@pytest.fixture(scope="module")
def grid2():
    return TorusGrid(2, 8)


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(3, 16)
    with pytest.raises(ValueError):
        TorusGrid(1, 7)
    with pytest.raises(ValueError):
        TorusGrid(1, 6)
    g = TorusGrid(2, 8)
    assert g.shape == (8, 8, 8, 8)
    assert g.node_index(g.size - 1) == (7, 7, 7, 7)


@given(kx=st.integers(-15, 15), ky=st.integers(-15, 15), phase=st.floats(0, 6.3))
@settings(max_examples=40, deadline=None)
def test_spectral_derivative_exact_below_nyquist(kx, ky, phase):
    grid = TorusGrid(1, 32)
    x, y = grid.coordinates()
    f = np.sin(kx * x + ky * y + phase)
    df = kx * np.cos(kx * x + ky * y + phase)
    d2f = -kx * ky * np.sin(kx * x + ky * y + phase)
    assert np.max(np.abs(spectral_derivative(f, grid, 0) - df)) <= 1e-12 * max(1, abs(kx))
    mixed = spectral_derivative(spectral_derivative(f, grid, 1), grid, 0)
    assert np.max(np.abs(mixed - d2f)) <= 1e-12 * max(1, abs(kx * ky))


def test_ddbar_quarter_laplacian(grid1):
    x, y = grid1.coordinates()
    f = np.cos(2 * x) * np.sin(3 * y)
    h = ddbar(f, grid1)[..., 0, 0]
    assert np.allclose(h.real, -(4 + 9) / 4 * f, atol=1e-12)
    assert np.max(np.abs(h.imag)) < 1e-12
    assert np.allclose(potential_hessian(f, grid1), ddbar(f, grid1), atol=1e-12)


def test_complex_gradient_components(grid1):
    x, y = grid1.coordinates()
    f = np.sin(x)
    dz, dzb = complex_gradient(f, grid1)
    assert np.allclose(dz[..., 0], 0.5 * np.cos(x), atol=1e-13)
    assert np.allclose(dzb[..., 0], 0.5 * np.cos(x), atol=1e-13)


def test_potential_hessian_hermitian_n2(grid2):
    rng = np.random.default_rng(0)
    x = grid2.coordinates()
    f = sum(rng.normal() * np.cos(x[d] + rng.uniform(0, 6)) for d in range(4))
    h = potential_hessian(f, grid2)
    assert np.array_equal(h, np.conj(np.swapaxes(h, -1, -2)))
    assert np.allclose(h, ddbar(f, grid2), atol=1e-12)


@given(a=st.floats(0.5, 3), b=st.floats(0.5, 3), re=st.floats(-0.4, 0.4), im=st.floats(-0.4, 0.4))
def test_herm_kernels_match_numpy(a, b, re, im):
    g = np.array([[a, re + 1j * im], [re - 1j * im, b]])
    assert np.isclose(herm_det(g), np.linalg.det(g).real, rtol=1e-12)
    assert np.allclose(herm_inv(g), np.linalg.inv(g), atol=1e-12)


def test_metric_positivity_raised(grid1):
    x, _ = grid1.coordinates()
    with pytest.raises(PositivityLoss) as info:
        metric_from_potential(MetricField.flat(grid1), 8.0 * np.cos(x))
    assert info.value.min_eigenvalue < 0
    assert len(info.value.node) == 2


def test_cosine_metric_closed_form(grid1):
    x, _ = grid1.coordinates()
    g = cosine_metric(grid1, 0.3, (1, 0))
    assert np.allclose(g.values[..., 0, 0].real, 1 + 0.3 * np.cos(x), atol=1e-13)
    assert kahler_defect(g) < 1e-12


def test_flat_metric_has_zero_curvature(grid2):
    curv = curvature(MetricField.flat(grid2, 1.7))
    assert curv.sup_rm_norm == 0.0


@pytest.mark.parametrize("c", [2.0, 0.5, 3.7])
def test_curvature_scaling_covariance(grid2, c):
    g = random_metric(grid2, 0.15, 3, seed=5)
    base, scaled = curvature(g), curvature(g.scaled(c))
    scale = np.max(np.abs(base.rm))
    assert np.max(np.abs(scaled.rm - c * base.rm)) <= 1e-14 * c * scale
    assert np.max(np.abs(scaled.ric - base.ric)) <= 1e-14 * np.max(np.abs(base.ric))
    assert np.max(np.abs(scaled.norm * c - base.norm)) <= 1e-14 * np.max(base.norm)


def test_ricci_cross_check_band_limited():
    grid = TorusGrid(1, 64)
    for seed in range(3):
        g = random_metric(grid, 0.2, 2, seed=seed)
        ric = curvature(g).ric
        assert np.max(np.abs(ric - ricci_from_logdet(g))) <= 1e-8


def test_ricci_cross_check_n2(grid2):
    g = random_metric(TorusGrid(2, 16), 0.1, 2, seed=1, max_wavenumber=1)
    assert np.max(np.abs(curvature(g).ric - ricci_from_logdet(g))) <= 1e-8


def test_curvature_symmetries(grid2):
    g = random_metric(grid2, 0.15, 3, seed=2, max_wavenumber=1)
    rm = curvature(g).rm
    # R_{i jbar k lbar} = R_{k jbar i lbar} and conj(R_{i jbar k lbar}) = R_{j ibar l kbar}
    assert np.max(np.abs(rm - np.swapaxes(rm, -4, -2))) < 1e-10
    conj = np.conj(np.transpose(rm, axes=tuple(range(rm.ndim - 4)) + tuple(
        rm.ndim - 4 + np.array([1, 0, 3, 2]))))
    assert np.max(np.abs(rm - conj)) < 1e-10


def test_trace_amgm_and_generalized_eigenvalues(grid1):
    a = cosine_metric(grid1, 0.3, (1, 0))
    b = cosine_metric(grid1, 0.2, (0, 1))
    ev = generalized_eigenvalues(a.values, b.values)
    tr = trace(b, a)
    assert np.allclose(tr, ev.sum(axis=-1), atol=1e-12)
    lo, hi = eigen_ratio(a, b)
    assert lo <= 1 <= hi


@given(c=st.floats(0.2, 5.0))
@settings(max_examples=20, deadline=None)
def test_trace_of_scaled_metric(c):
    grid = TorusGrid(2, 8)
    g = random_metric(grid, 0.1, 2, seed=3)
    assert np.allclose(trace(g, g.scaled(c)), 2 * c, rtol=1e-12)


def test_psi_vanishes_for_equal_metrics(grid1):
    g = cosine_metric(grid1, 0.3, (1, 1))
    assert psi_and_s(g, g).sup_s == 0.0
    assert psi_and_s(g, MetricField.flat(grid1)).sup_s > 0


def test_flat_decomposition_roundtrip(grid2):
    g = random_metric(grid2, 0.12, 3, seed=7, max_wavenumber=1)
    mean, rho, residual = flat_decomposition(g, grid2)
    assert residual < 1e-13
    assert abs(rho.mean()) < 1e-14
    assert np.allclose(mean, np.eye(2), atol=1e-13)


def test_laplacian_nonpositive_at_maximum(grid1):
    x, y = grid1.coordinates()
    f = np.cos(x) + 0.5 * np.cos(y)
    g = cosine_metric(grid1, 0.2, (1, 1))
    node = np.unravel_index(np.argmax(f), f.shape)
    assert laplacian_at(f, g, node) < 0
    lap = laplacian_at(np.zeros_like(f), g, node)
    assert lap == 0.0


def test_random_metric_seeded(grid1):
    a = random_metric(grid1, 0.2, 2, seed=11)
    b = random_metric(grid1, 0.2, 2, seed=11)
    c = random_metric(grid1, 0.2, 2, seed=12)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.eigenvalues.min() > 0.5
    with pytest.raises(ValueError):
        random_metric(grid1, 0.3, 2, seed=0)
