import numpy as np
import pytest

from nsmm.grid import build_grid, build_kernel
from nsmm.model import MixtureState, bin_dataset


def random_state(rng, m, kernels, total=None):
    """Positive product-form state with unit-mass marginals."""
    r = len(kernels)
    G = kernels[0].G
    lam = rng.uniform(0.2, 1.0, size=m)
    if total is not None:
        lam = lam / lam.sum() * total
    marginals = rng.uniform(0.0, 1.0, size=(m, r, G)) + 1e-3
    for k, kernel in enumerate(kernels):
        marginals[:, k, :] /= marginals[:, k, :].sum(axis=1, keepdims=True) * kernel.delta
    return MixtureState(lam, marginals)


def small_problem(seed, r=2, G=8, n=20, h=0.3, family="gaussian"):
    """Random data on per-coordinate domains, binned, with matching kernels."""
    rng = np.random.default_rng(seed)
    lows = rng.uniform(-1.0, 0.0, size=r)
    widths = rng.uniform(1.0, 2.0, size=r)
    grids = [build_grid(lo, lo + wd, G) for lo, wd in zip(lows, widths)]
    kernels = [build_kernel(g, h * wd, family) for g, wd in zip(grids, widths)]
    raw = lows + widths * rng.uniform(0.0, 1.0, size=(n, r))
    return rng, bin_dataset(raw, grids), kernels


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def unit_grid8():
    return build_grid(0.0, 1.0, 8)


@pytest.fixture(scope="session")
def gauss32():
    return build_kernel(build_grid(0.0, 1.0, 32), 0.2, "gaussian")


_ACCEPTANCE = []


def record_acceptance(line):
    _ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
