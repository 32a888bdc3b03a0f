import numpy as np
import pytest

from neognn.graph import build_graph


def er_graph(n, p, seed, weighted=False):
    rng = np.random.default_rng(seed)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges.append((i, j, float(rng.integers(1, 4))) if weighted else (i, j))
    return build_graph(edges, num_nodes=n)


def geometric_graph(n, radius, seed):
    """Random geometric graph in the unit square (strong triadic closure)."""
    pts = np.random.default_rng(seed).random((n, 2))
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    iu, iv = np.triu_indices(n, 1)
    close = d[iu, iv] <= radius
    return build_graph(list(zip(iu[close].tolist(), iv[close].tolist())), num_nodes=n)


def neighbor_sets(g):
    dense = g.adjacency.to_dense()
    return [set(np.nonzero(dense[i])[0].tolist()) for i in range(g.num_nodes)]


@pytest.fixture
def path3():
    return build_graph([(0, 1), (1, 2)])


@pytest.fixture
def triangle():
    return build_graph([(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def k4():
    return build_graph([(i, j) for i in range(4) for j in range(i + 1, 4)])


@pytest.fixture
def star4():
    return build_graph([(0, k) for k in range(1, 5)])


def fd_max_rel_error(params, objective, grads, step=1e-4, floor=1e-6):
    """Largest relative error between ``grads`` and central differences of ``objective``.

    Walks every scalar of every tensor.  The denominator is floored so that
    gradients that are zero up to round-off do not blow up the ratio.
    """
    worst, where = 0.0, None
    for name, arr in params.tensors.items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = objective()
            flat[i] = keep - step
            down = objective()
            flat[i] = keep
            num = (up - down) / (2 * step)
            err = abs(num - g[i]) / max(abs(num), abs(g[i]), floor)
            if err > worst:
                worst, where = err, (name, i, g[i], num)
    return worst, where


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one status line per acceptance criterion; printed in the terminal summary."""

    def record(number, status, detail):
        line = f"criterion {number}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
