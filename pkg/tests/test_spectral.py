import warnings

import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from klflow import geometry, kernels, spectral
from klflow.spectral import TruncationWarning


def test_floor_truncation_warns():
    dom = geometry.build_domain(1, 1.0, 64)
    with pytest.warns(TruncationWarning):
        b = spectral.solve_nystrom(dom, kernels.gaussian(0.2), 40)
    assert b.truncated and b.requested == 40
    assert np.all(b.eigenvalues > spectral.EIGENVALUE_FLOOR * b.eigenvalues[0])


def test_eigenvalues_descending_and_orthonormal(gauss_1d):
    z = gauss_1d.eigenvalues
    assert np.all(np.diff(z) <= 0)
    assert np.max(np.abs(spectral.gram_matrix(gauss_1d) - np.eye(z.size))) < 1e-10


def test_fredholm_residual_small(gauss_1d):
    assert np.max(spectral.fredholm_residual(gauss_1d)) < 1e-10 * gauss_1d.eigenvalues[0]


def test_symmetry_solver_agrees_with_dense_eigh():
    dom = geometry.build_domain(2, 1.0, 10)
    k = kernels.rational_quadratic(0.3, 2.0)
    a = spectral.solve_nystrom(dom, k, 12)
    b = spectral.solve_nystrom(dom, k, 12, use_symmetry=False)
    assert np.allclose(a.eigenvalues, b.eigenvalues, rtol=1e-10)


def test_signs_fixed(gauss_1d):
    sums = gauss_1d.eigenfunctions.sum(axis=1)
    scale = np.abs(gauss_1d.eigenfunctions).sum(axis=1)
    zero = np.abs(sums) <= 1e-10 * scale
    assert np.all(sums[~zero] > 0)
    for row in gauss_1d.eigenfunctions[zero]:
        assert row[np.flatnonzero(np.abs(row) > 1e-12 * np.abs(row).max())[0]] > 0


def test_eigenfunctions_have_definite_parity(gauss_1d):
    f = gauss_1d.eigenfunctions
    mirror = np.minimum(np.abs(f - f[:, ::-1]), np.abs(f + f[:, ::-1])).max(axis=1)
    assert np.all(mirror < 1e-9)


def _spline_gradient_error(basis, modes):
    dom = basis.domain
    x = dom.nodes[:, 0]
    out = []
    for I in modes:
        ref = CubicSpline(x, basis.eigenfunctions[I])(x, 1)
        got = spectral.eigenfunction_gradient(basis, I)[:, 0]
        out.append(np.sqrt(geometry.integrate(dom, (got - ref) ** 2) / geometry.integrate(dom, ref**2)))
    return np.array(out)


def test_gradients_match_spline_oracle(gauss_1d):
    assert np.all(_spline_gradient_error(gauss_1d, range(4)) < 1e-2)


def test_gradients_converge_at_second_order(gauss_1d):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        fine = spectral.solve_nystrom(geometry.build_domain(1, 1.0, 128), kernels.gaussian(0.2), 40)
    e_fine = _spline_gradient_error(fine, range(8))
    assert np.all(e_fine < 1e-2)
    ratio = _spline_gradient_error(gauss_1d, range(8)) / e_fine
    assert np.all((ratio > 3.0) & (ratio < 5.0))


def test_gradient_index_checked(gauss_1d):
    with pytest.raises(IndexError):
        spectral.eigenfunction_gradient(gauss_1d, gauss_1d.size)


def test_hessians_symmetric(gauss_2d):
    h = gauss_2d.hessians
    assert np.array_equal(h, np.swapaxes(h, -1, -2))


def test_f_grad_f_vanishes(gauss_2d):
    ints = spectral.basis_integrals(gauss_2d)
    assert np.max(np.abs(ints["H_a"])) < 1e-6
    assert np.all(ints["H_grad"] > 0)


def test_dirichlet_eigenvalues_match_closed_form():
    modes, lam = spectral.dirichlet_modes([1.0, 2.0], 12)
    brute = sorted((i * np.pi) ** 2 + (j * np.pi / 2) ** 2 for i in range(1, 12) for j in range(1, 12))
    assert np.allclose(lam, brute[:12])
    assert np.allclose(lam, np.sum((modes * np.pi / np.array([1.0, 2.0])) ** 2, axis=1))


def test_dirichlet_derivatives_match_finite_differences():
    sides = np.array([1.0, 1.5])
    modes, _ = spectral.dirichlet_modes(sides, 6)
    pts = np.array([[0.3, 0.4], [0.71, 1.2]])
    v, g, h = spectral.dirichlet_derivatives(sides, modes, pts)
    eps = 1e-6
    for a in range(2):
        e = np.zeros(2)
        e[a] = eps
        vp, gp, _ = spectral.dirichlet_derivatives(sides, modes, pts + e)
        vm, gm, _ = spectral.dirichlet_derivatives(sides, modes, pts - e)
        assert np.allclose(g[..., a], (vp - vm) / (2 * eps), atol=1e-6)
        assert np.allclose(h[..., a], (gp - gm) / (2 * eps), atol=1e-4)


def test_dirichlet_gradient_energy_equals_eigenvalue():
    b = spectral.dirichlet_basis(geometry.build_domain(2, [1.0, 1.5], 40), 20)
    ints = spectral.basis_integrals(b)
    assert np.allclose(ints["H_grad"], b.eigenvalues, rtol=1e-10)
    assert np.allclose(ints["H"], 1.0, rtol=1e-12)


def test_mercer_error_shrinks_with_truncation():
    dom = geometry.build_domain(1, 1.0, 64)
    errs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        for n in (5, 10, 20, 40):
            errs.append(spectral.mercer_diagnostics(
                spectral.solve_nystrom(dom, kernels.gaussian(0.2), n))["max_pointwise_error"])
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3


def test_mercer_diagnostics_need_kernel(dirichlet_2d):
    with pytest.raises(ValueError):
        spectral.mercer_diagnostics(dirichlet_2d)
    with pytest.raises(ValueError):
        spectral.fredholm_residual(dirichlet_2d)


def test_kernel_trace():
    dom = geometry.build_domain(2, [1.0, 2.0], 8)
    assert spectral.kernel_trace(kernels.gaussian(0.3, norm=2.0), dom) == pytest.approx(4.0)


def test_invalid_truncation():
    dom = geometry.build_domain(1, 1.0, 8)
    with pytest.raises(ValueError):
        spectral.solve_nystrom(dom, kernels.gaussian(0.3), 0)
    with pytest.raises(ValueError):
        spectral.solve_nystrom(dom, kernels.gaussian(0.3), 9)
    with pytest.raises(ValueError):
        spectral.dirichlet_basis(dom, 0)


@pytest.mark.parametrize("fixture", ["gauss_2d", "dirichlet_2d"])
def test_save_load_round_trip(fixture, request, tmp_path):
    b = request.getfixturevalue(fixture)
    path = tmp_path / "basis.bin"
    spectral.save_basis(b, path)
    assert path.exists()
    c = spectral.load_basis(path)
    assert np.array_equal(c.eigenvalues, b.eigenvalues)
    assert np.array_equal(c.eigenfunctions, b.eigenfunctions)
    assert c.domain == b.domain and c.kernel == b.kernel and c.kind == b.kind
    assert np.array_equal(c.gradients, b.gradients)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a basis")
    with pytest.raises((ValueError, OSError)):
        spectral.load_basis(path)


def test_quality_report_is_json_ready(gauss_1d, dirichlet_2d):
    import json
    for b in (gauss_1d, dirichlet_2d):
        json.dumps(spectral.quality_report(b))
