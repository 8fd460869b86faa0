import warnings

import pytest

from klflow import flow, geometry, kernels, spectral


@pytest.fixture(scope="session")
def gauss_1d():
    dom = geometry.build_domain(1, 1.0, 64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spectral.TruncationWarning)
        return spectral.solve_nystrom(dom, kernels.gaussian(0.2), 40)


@pytest.fixture(scope="session")
def gauss_2d():
    dom = geometry.build_domain(2, 1.0, 16)
    return spectral.solve_nystrom(dom, kernels.gaussian(0.3), 60)


@pytest.fixture(scope="session")
def dirichlet_2d():
    dom = geometry.build_domain(2, 1.0, 32)
    return spectral.dirichlet_basis(dom, 20)


@pytest.fixture(scope="session")
def dirichlet_1d():
    return spectral.dirichlet_basis(geometry.build_domain(1, 1.0, 48), 8)


@pytest.fixture
def turbulent_2d(gauss_2d):
    return flow.FlowConfig.for_basis(gauss_2d, (0.6, 0.8), 1e-4)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
