"""Regulator equations and the state feedback law.

The reference regulator ``pi`` has a closed form through a block matrix
exponential.  The disturbance regulator ``varphi`` is a power series in the
time derivatives of the boundary data and of ``h1``; its coefficient matrices
``Phi_j(z)`` follow from the recursion

    Phi_0(z) = exp(A0 z),   Phi_j(z) = int_0^z exp(A0 (z - s)) A1 Phi_{j-1}(s) ds.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.linalg import expm

from .kernels import KernelSolution


def block_generator(S, lam, mu):
    n = S.shape[0]
    A0 = np.zeros((2 * n, 2 * n))
    A0[:n, n:] = np.eye(n)
    A0[n:, :n] = (mu * np.eye(n) + S.T) / lam
    A1 = np.zeros((2 * n, 2 * n))
    A1[n:, :n] = np.eye(n) / lam
    return A0, A1


def solve_reference_regulator(S, p, lam, mu, c, z):
    """``pi(z)`` and ``pi_z(z)``, each of shape ``(nz, nw)``."""
    S = np.atleast_2d(np.asarray(S, float))
    n = S.shape[0]
    if lam <= 0 or c == 0:
        raise ValueError("need lam > 0 and c != 0")
    A0, _ = block_generator(S, lam, mu)
    x0 = np.concatenate([np.asarray(p, float).ravel() / c, np.zeros(n)])
    X = np.array([expm(A0 * zk) @ x0 for zk in np.asarray(z, float)])
    return X[:, :n], X[:, n:]


def quad_weights(k, h):
    """Weights for ``int_0^{k h}`` on ``k+1`` equispaced nodes.

    Composite Simpson for even ``k``; Simpson plus a closing 3/8 panel for odd
    ``k >= 3``; trapezoid for ``k = 1``.
    """
    w = np.zeros(k + 1)
    if k == 0:
        return w
    if k == 1:
        w[:] = 0.5 * h
        return w
    m = k if k % 2 == 0 else k - 3
    if m:
        w[0:m + 1:2] += 2.0
        w[1:m:2] += 4.0
        w[0] -= 1.0
        w[m] -= 1.0
        w[:m + 1] *= h / 3.0
    if k % 2:
        w[m:m + 4] += np.array([1.0, 3.0, 3.0, 1.0]) * 3.0 * h / 8.0
    return w


def phi_matrices(S, lam, mu, J, z, refine=4):
    """``Phi_j`` on the grid ``z`` for ``j = 0..J``; shape ``(J+1, nz, 2n, 2n)``.

    The convolutions are evaluated with composite Simpson weights on a grid
    ``refine`` times finer than ``z``.
    """
    S = np.atleast_2d(np.asarray(S, float))
    A0, A1 = block_generator(S, lam, mu)
    nz = z.size
    nf = (nz - 1) * refine + 1
    hf = (z[-1] - z[0]) / (nf - 1)
    zf = np.linspace(z[0], z[-1], nf)
    E = np.array([expm(A0 * (s - zf[0])) for s in zf])   # E[d] = exp(A0 d hf)
    Phi = np.empty((J + 1, nf) + A0.shape)
    Phi[0] = E
    for j in range(1, J + 1):
        src = np.einsum("ab,kbc->kac", A1, Phi[j - 1])
        Phi[j, 0] = 0.0
        for k in range(1, nf):
            w = quad_weights(k, hf)
            # int_0^{z_k} E(z_k - s) src(s) ds, E index k - m
            Phi[j, k] = np.matmul(E[k::-1], w[:, None, None] * src[:k + 1]).sum(axis=0)
    return Phi[:, ::refine]


@dataclass
class SeriesData:
    """Derivatives ``d_t^j`` of the regulator data on the design time grid."""

    B0: np.ndarray   # (J+1, nt, 2n): col(-g4/c, g2)
    h1: np.ndarray   # (J+1, nt, nz, n)


@dataclass
class RegulatorSolution:
    z: np.ndarray
    t: np.ndarray
    pi: np.ndarray
    pi_z: np.ndarray
    psi: np.ndarray           # (nt, nz, 2n): col(varphi, varphi_z)
    terms_norm: np.ndarray    # sup norm of each series order
    J: int
    k_w: np.ndarray
    k_v: np.ndarray           # (nt, n)
    k_1: np.ndarray           # (nt,)
    k_x: np.ndarray           # (nt, nz)
    info: dict = field(default_factory=dict)

    @property
    def varphi(self):
        n = self.psi.shape[-1] // 2
        return self.psi[..., :n]

    @property
    def varphi_z(self):
        n = self.psi.shape[-1] // 2
        return self.psi[..., n:]


def series_terms(Phi, data: SeriesData, lam, z):
    """Order-by-order contributions to ``col(varphi, varphi_z)``.

    Returns an array ``(J+1, nt, nz, 2n)`` whose cumulative sum over the first
    axis gives the partial sums of the series.
    """
    J = Phi.shape[0] - 1
    nz = z.size
    h = z[1] - z[0]
    n = Phi.shape[-1] // 2
    nt = data.B0.shape[1]
    out = np.zeros((J + 1, nt, nz, 2 * n))
    W = [quad_weights(k, h) for k in range(nz)]
    for j in range(J + 1):
        out[j] = np.einsum("kab,tb->tka", Phi[j], data.B0[j])
        if not np.any(data.h1[j]):
            continue
        Pb = Phi[j][:, :, n:]                  # (nz, 2n, n)
        hj = data.h1[j]                        # (nt, nz, n)
        for k in range(1, nz):
            # int_0^{z_k} Phi_j(s) [0 I]^T h1(z_k - s) ds
            conv = np.einsum("mab,tmb->ta", W[k][:, None, None] * Pb[:k + 1], hj[:, k::-1])
            out[j, :, k] -= conv / lam
    return out


def solve_disturbance_regulator(S, lam, mu, c, data: SeriesData, z, t, Phi=None):
    """Truncated series solution; order ``J`` is fixed by ``data``.

    Returns ``psi = col(varphi, varphi_z)`` of shape ``(nt, nz, 2n)``, the
    per-order sup norms and the truncation indicator
    ``|term_J| / |partial sum|``.
    """
    J = data.B0.shape[0] - 1
    if Phi is None:
        Phi = phi_matrices(S, lam, mu, J, z)
    terms = series_terms(Phi, data, lam, z)
    psi = terms.sum(axis=0)
    norms = np.abs(terms).reshape(J + 1, -1).max(axis=1)
    total = np.abs(psi).max()
    indicator = norms[-1] / total if total > 0 else 0.0
    if J >= 2 and norms[-1] > 0 and norms[-1] >= norms[-2]:
        warnings.warn(f"disturbance regulator series terms not decreasing at order {J}", RuntimeWarning)
    return psi, norms, float(indicator), terms


def compute_h1(kernel: KernelSolution, g1, g2, lam, J, kernel_order=5):
    """Time derivatives of ``h1 = k(z,0,t) lam g2 + T_c[g1]``.

    Parameters
    ----------
    g1 : array (J+1, nt, nz, n)
        ``d_t^j g1`` on the kernel grid.
    g2 : array (J+1, nt, n)
    kernel_order : int
        Highest kernel time derivative taken from the spline; higher orders are
        dropped.

    Returns
    -------
    array (J+1, nt, nz, n)
    """
    W = kernel.weights()
    h1 = np.array(g1, dtype=float, copy=True)
    for m in range(min(J, kernel_order) + 1):
        Km = kernel.values if m == 0 else kernel.interp_values(kernel.t, m)
        KW = Km * W[None]
        k0 = Km[:, :, 0]
        for j in range(m, J + 1):
            cj = comb(j, m)
            h1[j] += cj * lam * k0[:, :, None] * g2[j - m][:, None, :]
            h1[j] -= cj * np.einsum("tij,tjn->tin", KW, g1[j - m])
    return h1


def compute_feedback_gains(kernel: KernelSolution, pi_z1, varphi_z1, g3, ql):
    """``k_1 = -k(1,1,t) + ql``, ``k_x = -k_z(1,zeta,t)``, ``k_w = -pi_z(1)``,
    ``k_v = g3 - varphi_z(1,t)``.

    The Robin term enters ``k_1`` with a plus sign: the plant boundary
    condition ``x_z(1) = ql x(1) + b u`` must become ``k(1,1) x(1) + int k_z x``
    for the transformed state to satisfy a homogeneous Neumann condition.
    """
    k_1 = -kernel.traces["k11"] + ql
    k_x = -kernel.traces["kz1"]
    k_w = -np.asarray(pi_z1, float)
    k_v = np.asarray(g3, float) - np.asarray(varphi_z1, float)
    return k_w, k_v, k_1, k_x


def trap_weights(nz, h):
    w = np.full(nz, h)
    w[0] = w[-1] = 0.5 * h
    return w


def state_feedback(k_w, k_v, k_1, k_x, w, v, x, b):
    """``u = (-k_w.w - k_v.v - k_1 x(1) - int k_x x) / b`` on a uniform grid."""
    x = np.asarray(x, float)
    h = 1.0 / (x.size - 1)
    integral = float(np.dot(trap_weights(x.size, h) * k_x, x))
    return (-float(np.dot(k_w, w)) - float(np.dot(k_v, v)) - k_1 * x[-1] - integral) / b
