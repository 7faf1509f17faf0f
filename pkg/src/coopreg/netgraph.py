"""Communication digraph, Laplacian partition and rootedness."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Digraph:
    """Leader node 0 plus agents ``1..N``; agents ``1..n`` are informed.

    ``edges`` holds ``(src, dst, weight)``: agent ``dst`` receives the output
    of node ``src`` with weight ``a_{dst,src}``.
    """

    node_count: int
    informed_count: int
    edges: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(i), int(j), float(w)) for i, j, w in self.edges))

    @property
    def N(self):
        return self.node_count - 1

    def adjacency(self):
        A = np.zeros((self.node_count, self.node_count))
        for src, dst, w in self.edges:
            A[dst, src] += w
        return A

    def validate(self):
        n, N = self.informed_count, self.N
        if self.node_count < 1:
            raise GraphError("graph needs at least the leader node")
        if not 0 <= n <= N:
            raise GraphError(f"informed_count {n} outside [0, {N}]")
        for src, dst, w in self.edges:
            if not (0 <= src < self.node_count and 0 <= dst < self.node_count):
                raise GraphError(f"edge ({src},{dst}) references a missing node")
            if w <= 0:
                raise GraphError(f"edge ({src},{dst}) has nonpositive weight {w}")
            if src == dst:
                raise GraphError(f"self-loop at node {src}")
            if dst == 0:
                raise GraphError(f"edge ({src},0) points into the leader")
            if src == 0 and dst > n:
                raise GraphError(f"leader edge into uninformed agent {dst}")
        informed_fed = {dst for src, dst, _ in self.edges if src == 0}
        missing = [i for i in range(1, n + 1) if i not in informed_fed]
        if missing:
            raise GraphError(f"informed agents {missing} have no leader edge")
        # informed agents only listen to the leader
        for src, dst, _ in self.edges:
            if 1 <= dst <= n and src != 0:
                raise GraphError(f"informed agent {dst} receives from agent {src}")


@dataclass
class LaplacianBlocks:
    L: np.ndarray
    n: int

    @property
    def N(self):
        return self.L.shape[0] - 1

    @property
    def L21(self):
        return self.L[1:self.n + 1, :1]

    @property
    def L22(self):
        return self.L[1:self.n + 1, 1:self.n + 1]

    @property
    def L32(self):
        return self.L[self.n + 1:, 1:self.n + 1]

    @property
    def L33(self):
        return self.L[self.n + 1:, self.n + 1:]


def laplacian(g: Digraph) -> LaplacianBlocks:
    """``L = D - A`` with the leader/informed/uninformed partition."""
    g.validate()
    A = g.adjacency()
    L = np.diag(A.sum(axis=1)) - A
    return LaplacianBlocks(L, g.informed_count)


def check_rooted(g: Digraph) -> bool:
    """True iff every node is reachable from node 0 along directed edges."""
    out = {i: [] for i in range(g.node_count)}
    for src, dst, _ in g.edges:
        out[src].append(dst)
    seen = {0}
    todo = deque([0])
    while todo:
        v = todo.popleft()
        for w in out[v]:
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return len(seen) == g.node_count


def spectrum_L33(blocks: LaplacianBlocks, strict=True, tol=1e-10):
    """Eigenvalues of ``L33`` and ``nu_max = min Re``.

    With ``strict`` a nonpositive real part raises :class:`GraphError`.
    An empty ``L33`` (no uninformed agents) gives ``nu_max = inf``.
    """
    L33 = blocks.L33
    if L33.size == 0:
        return np.zeros(0, complex), np.inf
    ev = np.linalg.eigvals(L33)
    nu_max = float(np.min(ev.real))
    if strict and nu_max <= tol:
        raise GraphError(f"L33 has an eigenvalue with Re = {nu_max:.3e}; graph is not rooted at the leader")
    return ev, nu_max
