import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopreg.netgraph import Digraph, GraphError, check_rooted, laplacian, spectrum_L33

FIG1_EDGES = [(0, 1, 1), (0, 2, 1), (1, 3, 1), (4, 3, 1), (2, 4, 1), (3, 4, 1)]


def fig1():
    return Digraph(5, 2, FIG1_EDGES)


def test_single_node():
    b = laplacian(Digraph(1, 0, []))
    assert np.array_equal(b.L, np.zeros((1, 1)))


def test_two_nodes():
    b = laplacian(Digraph(2, 1, [(0, 1, 2.5)]))
    assert np.array_equal(b.L, np.array([[0.0, 0.0], [-2.5, 2.5]]))


def test_fig1_laplacian_and_spectrum():
    b = laplacian(fig1())
    expect = np.array([[0, 0, 0, 0, 0],
                       [-1, 1, 0, 0, 0],
                       [-1, 0, 1, 0, 0],
                       [0, -1, 0, 2, -1],
                       [0, 0, -1, -1, 2]], float)
    assert np.array_equal(b.L, expect)
    # independent route: characteristic polynomial of the 5x5 matrix
    roots = np.sort(np.roots(np.poly(expect)).real)
    assert np.allclose(roots, [0, 1, 1, 1, 3], atol=1e-6)
    assert np.allclose(b.L22, np.eye(2))
    assert np.allclose(b.L21.ravel(), [-1, -1])


def test_fig1_L33():
    ev, nu_max = spectrum_L33(laplacian(fig1()))
    assert np.allclose(laplacian(fig1()).L33, [[2, -1], [-1, 2]])
    # 2x2 characteristic polynomial s^2 - 4 s + 3
    assert np.allclose(np.sort(ev.real), [1, 3])
    assert nu_max == pytest.approx(1.0)


def test_single_uninformed():
    ev, nu_max = spectrum_L33(laplacian(Digraph(3, 1, [(0, 1, 1), (1, 2, 1)])))
    assert np.allclose(ev, [1.0]) and nu_max == 1.0


def test_disconnected_uninformed_rejected():
    g = Digraph(3, 1, [(0, 1, 1)])
    with pytest.raises(GraphError):
        spectrum_L33(laplacian(g))
    assert not check_rooted(g)


def test_rooted_examples():
    assert check_rooted(fig1())
    N = 5
    chain = Digraph(N + 1, 1, [(k, k + 1, 1.0) for k in range(N)])
    assert check_rooted(chain)
    assert not check_rooted(Digraph(4, 1, [(0, 1, 1), (1, 2, 1)]))


@pytest.mark.parametrize("edges,informed", [
    ([(1, 0, 1.0), (0, 1, 1.0)], 1),       # edge into the leader
    ([(0, 1, 1.0), (0, 2, 1.0)], 1),       # leader feeds an uninformed agent
    ([(0, 1, -1.0)], 1),                   # nonpositive weight
    ([(0, 1, 1.0), (1, 1, 1.0)], 1),       # self-loop
])
def test_structure_violations(edges, informed):
    with pytest.raises(GraphError):
        laplacian(Digraph(3, informed, edges))


def _reachable_by_powers(g):
    """Reachability from node 0 by boolean powers of (I + A^T)."""
    n = g.node_count
    R = np.eye(n, dtype=bool)
    step = (np.eye(n) + (g.adjacency().T > 0)) > 0    # step[i, j]: i -> j
    for _ in range(n):
        R = (R.astype(int) @ step.astype(int)) > 0
    return bool(R[0].all())


@st.composite
def digraphs(draw):
    N = draw(st.integers(1, 6))
    n = draw(st.integers(1, N))
    edges = [(0, i, draw(st.floats(0.1, 3.0))) for i in range(1, n + 1)]
    for dst in range(n + 1, N + 1):
        for src in range(1, N + 1):
            if src != dst and draw(st.booleans()):
                edges.append((src, dst, draw(st.floats(0.1, 3.0))))
    return Digraph(N + 1, n, edges)


@settings(max_examples=50, deadline=None)
@given(digraphs())
def test_random_digraph_properties(g):
    b = laplacian(g)
    assert np.abs(b.L.sum(axis=1)).max() <= 1e-12
    if b.L33.size:
        assert np.abs(b.L33.sum(axis=1) + b.L32.sum(axis=1)).max() <= 1e-12
    ev, nu = spectrum_L33(b, strict=False)
    spectral = bool(nu > 1e-10)
    assert check_rooted(g) == spectral == _reachable_by_powers(g)
