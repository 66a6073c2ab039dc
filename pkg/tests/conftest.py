import numpy as np
import pytest
from hypothesis import settings

from netred import NetworkSystem, Topology, benchmarks
from netred.network import forbidden_entry_mask

settings.register_profile("ci", derandomize=True, max_examples=25, deadline=None)
settings.load_profile("ci")


def make_hurwitz(n, seed, margin=1.0, scale=1.0):
    """Random dense Hurwitz matrix with a controlled stability margin."""
    rng = np.random.default_rng(seed)
    a = scale * rng.standard_normal((n, n)) / np.sqrt(n)
    top = np.max(np.linalg.eigvals(a).real)
    return a - (top + margin) * np.eye(n)


def make_structured_system(sizes, neighbors, m=1, p=1, seed=0, margin=1.0):
    """Random stable network system honoring the given neighbor sets."""
    top = Topology(tuple(sizes), tuple(frozenset(s) for s in neighbors), m, p)
    rng = np.random.default_rng(seed)
    n = top.n
    a = rng.standard_normal((n, n)) * 0.4
    for i, j in top.forbidden_pairs():
        a[top.state_slice(i), top.state_slice(j)] = 0.0
    a -= (np.max(np.linalg.eigvals(a).real) + margin) * np.eye(n)
    b = rng.standard_normal((n, m))
    c = rng.standard_normal((p, n))
    return NetworkSystem(a=a, b=b, c=c, topology=top)


def random_feasible_pair(sys, orders, l, seed, margin=0.8):
    """Structured stable (S, G) for the given directions."""
    rng = np.random.default_rng(seed)
    nu = orders.nu
    mask = forbidden_entry_mask(sys.topology, orders)
    f = rng.standard_normal((nu, nu))
    f[mask] = 0.0
    f -= (np.max(np.linalg.eigvals(f).real) + margin) * np.eye(nu)
    g = 0.5 * rng.standard_normal((nu, sys.m))
    s = f + g @ l
    return s, g


@pytest.fixture(scope="session")
def paper_fixture():
    return benchmarks.fixture_positive_network()


@pytest.fixture()
def scalar_system():
    top = Topology((1,), (frozenset({1}),), 1, 1)
    return NetworkSystem(
        a=np.array([[-1.0]]), b=np.array([[1.0]]), c=np.array([[1.0]]), topology=top
    )
