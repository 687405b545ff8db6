import numpy as np
import pytest

from hgdetect import hetgraph


@pytest.fixture
def tiny_graph():
    nodes = [
        ("u1", "user", "acid seller #lsd"),
        ("u2", "user", "coffee lover"),
        ("u3", "user", "plants and hiking"),
        ("t1", "tweet", "dm for menu #lsd"),
        ("t2", "tweet", "nice weather today"),
        ("k1", "keyword", "lsd"),
        ("k2", "keyword", "weather"),
    ]
    edges = [
        ("u1", "t1", "R2"),
        ("u2", "t1", "R3"),
        ("u2", "t2", "R2"),
        ("u3", "t2", "R3"),
        ("u1", "k1", "R4"),
        ("u3", "k1", "R4"),
        ("t1", "k1", "R5"),
        ("t2", "k2", "R6"),
        ("u1", "u2", "R1"),
    ]
    labels = {"u1": "participant", "u2": "benign", "u3": "benign"}
    return hetgraph.build_graph(nodes, edges, labels)


def finite_difference(f, arrays, eps=1e-5):
    """Central finite-difference gradients of scalar f(list of arrays)."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = a[ix]
            a[ix] = orig + eps
            up = f(arrays)
            a[ix] = orig - eps
            down = f(arrays)
            a[ix] = orig
            g[ix] = (up - down) / (2 * eps)
            it.iternext()
        grads.append(g)
    return grads


def assert_grad_close(analytic, numeric, tol=1e-4, floor=1e-8):
    """Max relative error below tol, excluding near-zero coordinates."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    mask = np.abs(analytic) >= floor
    if not mask.any():
        return
    rel = np.abs(analytic - numeric)[mask] / np.maximum(np.abs(analytic[mask]), floor)
    assert rel.max() < tol, f"max relative gradient error {rel.max():.3e}"
