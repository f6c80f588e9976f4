import numpy as np
import pytest

from sps_kg.grid import GridSpec


@pytest.fixture
def grid200():
    return GridSpec.uniform(200, 1.0 / 200)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def brute_stencil(f, grid, axis, offsets, weights, scale):
    """Loop-based periodic stencil sum_j w_j f[k + o_j] * scale along one axis."""
    out = np.zeros_like(f)
    n = grid.counts[axis]
    for idx in np.ndindex(*f.shape):
        acc = 0.0
        for o, w in zip(offsets, weights):
            j = list(idx)
            j[axis] = (j[axis] + o) % n
            acc += w * f[tuple(j)]
        out[idx] = acc * scale
    return out


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
