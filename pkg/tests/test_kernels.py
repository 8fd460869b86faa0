import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from klflow import kernels
from klflow.kernels import Kernel, NonIntegrableDensityError

points = st.lists(st.floats(-2, 2), min_size=2, max_size=2).map(np.array)
KERNELS = [kernels.gaussian(0.3), kernels.rational_quadratic(0.4, 1.5)]


@pytest.mark.parametrize("k", KERNELS, ids=["gaussian", "rq"])
@settings(max_examples=30, deadline=None)
@given(x=points, y=points)
def test_symmetric_and_bounded(k, x, y):
    v = kernels.eval(k, x, y)
    assert v == kernels.eval(k, y, x)
    assert 0 < v <= k.norm or v == 0.0


@pytest.mark.parametrize("k", KERNELS, ids=["gaussian", "rq"])
def test_gram_matrix_positive_semidefinite(k):
    xs = np.random.default_rng(1).uniform(0, 1, (40, 2))
    assert np.linalg.eigvalsh(kernels.matrix(k, xs)).min() > -1e-10


def test_closed_forms():
    assert kernels.eval(kernels.gaussian(0.5), [0.0], [0.5]) == pytest.approx(np.exp(-1.0))
    rq = kernels.rational_quadratic(1.0, 2.0)
    assert kernels.eval(rq, [0.0], [1.0]) == pytest.approx((1 + 1 / 4) ** -2)


def test_rq_tends_to_gaussian():
    # (1 + r^2/(2 a l^2))^-a -> exp(-r^2/(2 l^2)); compare against a Gaussian of length l*sqrt(2).
    x, y = np.array([0.1, 0.2]), np.array([0.5, -0.1])
    rq = kernels.rational_quadratic(0.3, 1e7)
    g = kernels.gaussian(0.3 * np.sqrt(2))
    assert kernels.eval(rq, x, y) == pytest.approx(kernels.eval(g, x, y), rel=1e-6)


def _pairs(k, count=100):
    rng = np.random.default_rng(7)
    return rng.uniform(0, 1, (count, 2)), rng.uniform(0, 1, (count, 2)) * 0.5 + 0.2


@pytest.mark.parametrize("k", KERNELS, ids=["gaussian", "rq"])
def test_gradient_matches_finite_differences(k):
    xs, ys = _pairs(k)
    h = 1e-5 * k.lam
    for x, y in zip(xs, ys):
        fd = np.array([(kernels.eval(k, x + e, y) - kernels.eval(k, x - e, y)) / (2 * h)
                       for e in h * np.eye(2)])
        g = kernels.grad_x(k, x, y)
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd) + 1e-12
        assert np.array_equal(kernels.grad_y(k, x, y), -g)


@pytest.mark.parametrize("k", KERNELS, ids=["gaussian", "rq"])
def test_mixed_gradient_matches_finite_differences(k):
    xs, ys = _pairs(k)
    h = 1e-4 * k.lam
    for x, y in zip(xs, ys):
        fd = np.empty((2, 2))
        for b, e in enumerate(h * np.eye(2)):
            fd[:, b] = (kernels.grad_x(k, x, y + e) - kernels.grad_x(k, x, y - e)) / (2 * h)
        m = kernels.mixed_grad(k, x, y)
        assert np.linalg.norm(m - fd) <= 1e-4 * np.linalg.norm(fd) + 1e-10


def test_reference_values():
    k = kernels.gaussian(1.0)
    assert kernels.grad_x(k, [0.5], [0.0])[0] == pytest.approx(-np.exp(-0.25))
    assert kernels.mixed_grad(k, [0.3], [0.3])[0, 0] == pytest.approx(2.0)


def test_mixed_gradient_at_coincident_points():
    lam = 0.3
    assert np.allclose(kernels.mixed_grad(kernels.gaussian(lam), [0.2, 0.2], [0.2, 0.2]),
                       2 / lam**2 * np.eye(2))


def test_broadcasting():
    k = kernels.gaussian(0.3)
    xs = np.random.default_rng(0).uniform(size=(5, 3, 2))
    assert kernels.eval(k, xs, xs[0]).shape == (5, 3)
    assert kernels.grad_x(k, xs, xs[0]).shape == (5, 3, 2)
    assert kernels.mixed_grad(k, xs, xs[0]).shape == (5, 3, 2, 2)


def test_derivatives_refuse_dirichlet():
    k = Kernel("dirichlet", n_terms=3, side_lengths=(1.0,))
    with pytest.raises(ValueError):
        kernels.grad_x(k, [0.1], [0.2])


def test_dirichlet_kernel_is_mercer_sum():
    k = Kernel("dirichlet", n_terms=2, side_lengths=(1.0,))
    x, y = 0.3, 0.6
    expected = sum((n * np.pi) ** 2 * 2 * np.sin(n * np.pi * x) * np.sin(n * np.pi * y) for n in (1, 2))
    assert kernels.eval(k, [x], [y]) == pytest.approx(expected)


@pytest.mark.parametrize("kwargs", [dict(variant="matern"), dict(variant="gaussian", lam=0.0),
                                    dict(variant="rq", alpha=-1.0), dict(variant="dirichlet")])
def test_invalid_kernels(kwargs):
    with pytest.raises(ValueError):
        Kernel(**kwargs)


def test_description_round_trip():
    for k in KERNELS + [Kernel("dirichlet", n_terms=4, side_lengths=(1.0, 2.0))]:
        assert Kernel.from_description(k.describe()) == k


def test_gaussian_density_transform():
    lam = 0.4
    k_hat = kernels.kernel_from_spectral_density(kernels.gaussian_spectral_density(lam), lam)
    r = np.linspace(0, 1.5, 31)
    assert np.allclose(k_hat(r, 0.0), np.exp(-r**2 / lam**2), atol=1e-10)
    assert isinstance(k_hat(0.3, 0.1), float)


def test_band_limited_spike():
    # Flat density on [-c, c] transforms to sin(c r) / (c r).
    c = 5.0
    k_hat = kernels.kernel_from_spectral_density(lambda xi: np.ones_like(xi), cutoff=c)
    r = np.array([0.1, 0.7, 2.0])
    assert np.allclose(k_hat(r, 0.0), np.sin(c * r) / (c * r), atol=1e-12)


def test_non_integrable_density_rejected():
    with pytest.raises(NonIntegrableDensityError):
        kernels.kernel_from_spectral_density(lambda xi: 1.0 / (1.0 + np.abs(xi)) ** 0.5, 1.0)
    with pytest.raises(NonIntegrableDensityError):
        kernels.kernel_from_spectral_density(lambda xi: np.full_like(xi, np.inf), cutoff=1.0)
