"""Local and cooperative reference observers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from .netgraph import LaplacianBlocks


class DesignError(RuntimeError):
    pass


def ackermann(A, c, poles):
    """Gain ``l`` with ``eig(A - l c^T) = poles`` (single-output observer form).

    Parameters
    ----------
    A : (n, n) array
    c : (n,) array
        Output row.
    poles : sequence of complex
        Target spectrum, closed under conjugation.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    c = np.asarray(c, dtype=float).ravel()
    n = A.shape[0]
    poles = np.asarray(poles, dtype=complex)
    if poles.size != n:
        raise DesignError(f"need {n} target eigenvalues, got {poles.size}")
    coef = np.poly(poles)
    if np.max(np.abs(coef.imag)) > 1e-9 * max(1.0, np.max(np.abs(coef))):
        raise DesignError("target eigenvalues are not closed under conjugation")
    coef = coef.real
    rows = [c]
    for _ in range(n - 1):
        rows.append(rows[-1] @ A)
    O = np.vstack(rows)
    if np.linalg.matrix_rank(O) < n:
        raise DesignError("pair (c^T, A) is not observable")
    alpha = np.zeros_like(A)
    Ak = np.eye(n)
    for ck in coef[::-1]:
        alpha += ck * Ak
        Ak = Ak @ A
    en = np.zeros(n)
    en[-1] = 1.0
    return alpha @ np.linalg.solve(O, en)


def design_local_gain(S, p, a_i0, desired_eigs):
    """Gain ``l_i`` with ``eig(S - l_i a_i0 p^T) = desired_eigs``."""
    if a_i0 <= 0:
        raise DesignError("leader weight must be positive")
    return ackermann(S, a_i0 * np.asarray(p, dtype=float), desired_eigs)


def riccati_residual(S, p, nu, a, Q):
    p = np.asarray(p, dtype=float).reshape(-1, 1)
    return S @ Q + Q @ S.T - 2.0 * nu * Q @ p @ p.T @ Q + a * np.eye(S.shape[0])


def solve_riccati(S, p, nu, a, tol=1e-10, maxiter=100, Q0=None):
    """Newton-Kleinman iteration for ``S Q + Q S^T - 2 nu Q p p^T Q + a I = 0``.

    The filter-type equation is solved as the dual control problem with
    ``A = S^T``, ``B = p``, ``R = 1/(2 nu)``.  The iteration is started from a
    pole-placement gain unless ``Q0`` supplies a stabilizing iterate.

    Returns
    -------
    Q : (n, n) array
        Symmetric positive definite stabilizing solution.
    info : dict
        ``iterations`` and final ``residual`` (Frobenius norm).
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    p = np.asarray(p, dtype=float).ravel()
    n = S.shape[0]
    if nu <= 0 or a <= 0:
        raise DesignError("Riccati parameters nu and a must be positive")
    A = S.T
    B = p.reshape(-1, 1)
    if Q0 is None:
        shift = 1.0 + np.max(np.abs(np.linalg.eigvals(S)))
        poles = -shift - np.arange(n)
        K = ackermann(S, p, poles).reshape(1, -1)  # A - B K stable
    else:
        K = (2.0 * nu * B.T @ Q0)
    if np.max(np.linalg.eigvals(A - B @ K).real) >= 0:
        raise DesignError("initial Newton-Kleinman gain is not stabilizing")
    res = np.inf
    for it in range(1, maxiter + 1):
        Acl = A - B @ K
        rhs = -(a * np.eye(n) + K.T @ K / (2.0 * nu))
        Q = solve_continuous_lyapunov(Acl.T, rhs)
        Q = 0.5 * (Q + Q.T)
        K = 2.0 * nu * B.T @ Q
        res = np.linalg.norm(riccati_residual(S, p, nu, a, Q))
        if res <= tol * max(1.0, np.linalg.norm(Q)):
            break
    else:
        raise DesignError(f"Newton-Kleinman did not converge, residual {res:.3e}")
    if np.min(np.linalg.eigvalsh(Q)) <= 0:
        raise DesignError("Riccati solution is not positive definite")
    return Q, {"iterations": it, "residual": float(res)}


@dataclass
class ReferenceObserverDesign:
    S: np.ndarray
    p: np.ndarray
    blocks: LaplacianBlocks
    local_gains: list
    l_w: np.ndarray
    Q: np.ndarray | None
    nu: float
    a: float
    report: dict = field(default_factory=dict)

    def error_matrix(self):
        """Generator of the stacked observer errors ``e_i = w - w_i``."""
        S, p, B = self.S, self.p, self.blocks
        nw, N, n = S.shape[0], B.N, B.n
        M = np.zeros((N * nw, N * nw))
        a0 = -B.L21.ravel()
        for i in range(n):
            M[i * nw:(i + 1) * nw, i * nw:(i + 1) * nw] = S - a0[i] * np.outer(self.local_gains[i], p)
        if N > n:
            lp = np.outer(self.l_w, p)
            M[n * nw:, n * nw:] = np.kron(np.eye(N - n), S) - np.kron(B.L33, lp)
            M[n * nw:, :n * nw] = -np.kron(B.L32, lp)
        return M

    def Fg(self):
        B = self.blocks
        if B.N == B.n:
            return np.zeros((0, 0))
        return np.kron(np.eye(B.N - B.n), self.S) - np.kron(B.L33, np.outer(self.l_w, self.p))


def design_reference_observers(S, p, blocks: LaplacianBlocks, local_eigs, nu, a):
    """Local gains by pole placement and the common gain ``l_w = Q p``."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    p = np.asarray(p, dtype=float).ravel()
    a0 = -blocks.L21.ravel()
    if len(local_eigs) != blocks.n:
        raise DesignError(f"need {blocks.n} local eigenvalue sets, got {len(local_eigs)}")
    gains = [design_local_gain(S, p, a0[i], local_eigs[i]) for i in range(blocks.n)]
    report = {"local_spectra": [np.linalg.eigvals(S - a0[i] * np.outer(gains[i], p)).tolist()
                                for i in range(blocks.n)]}
    if blocks.N > blocks.n:
        Q, info = solve_riccati(S, p, nu, a)
        l_w = Q @ p
        report.update(riccati=info)
    else:
        Q, l_w = None, np.zeros_like(p)
    des = ReferenceObserverDesign(S, p, blocks, gains, l_w, Q, nu, a, report)
    Fg = des.Fg()
    if Fg.size:
        ev = np.linalg.eigvals(Fg)
        report["Fg_max_real"] = float(ev.real.max())
        if ev.real.max() >= 0:
            raise DesignError(f"F^g is not Hurwitz (max Re = {ev.real.max():.3e})")
    return des


def network_matrix(design: ReferenceObserverDesign):
    """Generator of the joint state ``[w, w_1, ..., w_N]``."""
    S, p, B = design.S, design.p, design.blocks
    nw, N, n = S.shape[0], B.N, B.n
    A = B.L
    M = np.zeros(((N + 1) * nw, (N + 1) * nw))
    M[:nw, :nw] = S
    for i in range(1, N + 1):
        r = slice(i * nw, (i + 1) * nw)
        M[r, r] = S
        gain = design.local_gains[i - 1] if i <= n else design.l_w
        for j in range(N + 1):
            aij = -A[i, j] if j != i else 0.0
            if aij == 0.0:
                continue
            lp = aij * np.outer(gain, p)
            M[r, j * nw:(j + 1) * nw] += lp
            M[r, r] -= lp
    return M


@dataclass
class ReferenceTrace:
    t: np.ndarray
    w: np.ndarray       # (nt, nw)
    w_hat: np.ndarray   # (nt, N, nw)
    r: np.ndarray
    r_hat: np.ndarray   # (nt, N)

    @property
    def e_w(self):
        return self.w[:, None, :] - self.w_hat


def simulate_reference_network(design: ReferenceObserverDesign, w0, w_hat0, tgrid):
    """Leader and all reference observers, propagated exactly by ``expm``."""
    tgrid = np.asarray(tgrid, dtype=float)
    nw = design.S.shape[0]
    N = design.blocks.N
    M = network_matrix(design)
    X = np.empty((tgrid.size, (N + 1) * nw))
    X[0] = np.concatenate([np.asarray(w0, float).ravel(), np.asarray(w_hat0, float).ravel()])
    dts = np.diff(tgrid)
    uniform = dts.size and np.allclose(dts, dts[0], rtol=1e-12, atol=0)
    Phi = expm(M * dts[0]) if uniform else None
    for k in range(1, tgrid.size):
        P = Phi if uniform else expm(M * dts[k - 1])
        X[k] = P @ X[k - 1]
    w = X[:, :nw]
    w_hat = X[:, nw:].reshape(tgrid.size, N, nw)
    return ReferenceTrace(tgrid, w, w_hat, w @ design.p, w_hat @ design.p)
