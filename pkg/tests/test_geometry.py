import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from klflow.geometry import BoxDomain, build_domain, integrate


@pytest.mark.parametrize("rule", ["gauss-legendre", "trapezoid"])
def test_weights_sum_to_volume(rule):
    dom = build_domain(3, [1.0, 2.0, 0.5], 7, rule)
    assert np.isclose(dom.weights.sum(), 1.0)
    assert np.isclose(dom.volume, 1.0)


def test_gauss_legendre_exact_for_polynomials():
    # n nodes integrate degree 2n - 1 exactly; oracle is the closed-form integral.
    dom = build_domain(2, [2.0, 3.0], 5)
    x, y = dom.nodes.T
    val = integrate(dom, x**9 * y**4)
    assert np.isclose(val, 2.0**10 / 10 * 3.0**5 / 5, rtol=1e-13)


def test_trapezoid_second_order():
    errs = []
    for n in (17, 33):
        dom = build_domain(1, np.pi, n, "trapezoid")
        errs.append(abs(integrate(dom, np.sin(dom.nodes[:, 0])) - 2.0))
    assert 3.5 < errs[0] / errs[1] < 4.5


@pytest.mark.parametrize("n", [6, 7, 64])
@pytest.mark.parametrize("rule", ["gauss-legendre", "trapezoid"])
def test_axes_are_mirror_symmetric(n, rule):
    dom = build_domain(1, 2.5, n, rule)
    x, w = dom.axes[0], dom.axis_weights[0]
    half = n // 2
    assert np.array_equal(x[n - half:], 2.5 - x[:half][::-1])
    assert np.allclose(x, 2.5 - x[::-1], rtol=0, atol=1e-15)
    assert np.array_equal(w, w[::-1])


def test_node_order_is_c_order_of_ij_mesh():
    dom = build_domain(2, [1.0, 2.0], 4)
    assert np.array_equal(dom.nodes[1], [dom.axes[0][0], dom.axes[1][1]])
    assert np.array_equal(dom.nodes[4], [dom.axes[0][1], dom.axes[1][0]])
    assert dom.to_grid(np.arange(16)).shape == (4, 4)


def test_arrays_read_only():
    dom = build_domain(1, 1.0, 4)
    with pytest.raises(ValueError):
        dom.nodes[0, 0] = 3.0


@settings(max_examples=50, deadline=None)
@given(dim=st.integers(1, 3), n=st.integers(2, 6), data=st.data())
def test_index_round_trip(dim, n, data):
    dom = build_domain(dim, 1.0, n)
    idx = data.draw(st.integers(0, dom.node_count - 1))
    assert dom.flat_index(dom.multi_index(idx)) == idx
    p = dom.point(idx)
    assert np.array_equal(p.coords, dom.nodes[idx]) and p.weight == dom.weights[idx]


def test_offset_node():
    dom = build_domain(2, 1.0, 5)
    i = dom.flat_index((2, 2))
    assert dom.multi_index(dom.offset_node(i, (1, -2))) == (3, 0)
    with pytest.raises(ValueError, match="leaves the domain"):
        dom.offset_node(i, (3, 0))
    with pytest.raises(ValueError):
        dom.offset_node(i, (1,))


def test_boundary_distance():
    dom = build_domain(1, 1.0, 5, "trapezoid")
    assert np.allclose(dom.boundary_distance, [0, 0.25, 0.5, 0.25, 0])


@pytest.mark.parametrize("kwargs", [
    dict(dim=4, side_lengths=1.0, nodes_per_axis=4),
    dict(dim=2, side_lengths=[1.0, -1.0], nodes_per_axis=4),
    dict(dim=2, side_lengths=[1.0, 2.0, 3.0], nodes_per_axis=4),
    dict(dim=1, side_lengths=1.0, nodes_per_axis=1),
    dict(dim=1, side_lengths=1.0, nodes_per_axis=4, rule="simpson"),
    dict(dim=1, side_lengths=np.inf, nodes_per_axis=4),
])
def test_invalid_domains(kwargs):
    with pytest.raises(ValueError):
        BoxDomain(**kwargs)


def test_integrate_length_mismatch():
    with pytest.raises(ValueError):
        integrate(build_domain(1, 1.0, 4), np.ones(5))


def test_equality_and_hash():
    a, b = build_domain(2, 1.0, 4), build_domain(2, [1.0, 1.0], 4)
    assert a == b and hash(a) == hash(b)
    assert a != build_domain(2, 1.0, 4, "trapezoid")
    assert a.length_scale == 1.0
