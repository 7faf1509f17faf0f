"""Local disturbance observer design.

The decoupling field ``gamma(z, t)`` (one column per disturbance state)
solves

    gamma_t = lam gamma_zz - mu_bar gamma - S^T gamma + hbar
    gamma_z(0, t) = g2(t),   gamma_z(1, t) = g3(t)

and its boundary trace ``gamma(1, t)`` defines the time-varying output row of
the ``e_v`` subsystem.  The observer gains are scheduled by pole placement at
knots ``t_k = k T`` and interpolated linearly in between.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sps
from scipy.interpolate import CubicSpline, make_interp_spline
from scipy.sparse.linalg import splu

from .kernels import KernelSolution, apply_transform
from .refnet import ackermann


class ObservabilityError(RuntimeError):
    pass


def alpha_shift(z):
    """Shift functions ``alpha = z - z^2/2`` and ``beta = z^2/2``."""
    z = np.asarray(z, float)
    return z - 0.5 * z ** 2, 0.5 * z ** 2


def compute_hbar(obs_inverse: KernelSolution, p_z1, g1, g3, lam):
    """``hbar = T_o[g1] + T_o[p(., 1, t)] lam g3``.

    Parameters
    ----------
    obs_inverse : KernelSolution
        Kernel of ``T_o`` (the inverse of the observer-kernel transform).
    p_z1 : array (nt, nz)
        Observer kernel trace ``p(z, 1, t)``.
    g1 : array (nt, nz, n)
    g3 : array (nt, n)
    """
    Tg1 = apply_transform(obs_inverse, g1)
    Tp = apply_transform(obs_inverse, p_z1)
    return Tg1 + lam * Tp[:, :, None] * g3[:, None, :]


def _neumann_laplacian(nz):
    h = 1.0 / (nz - 1)
    main = np.full(nz, -2.0)
    up = np.ones(nz - 1)
    lo = np.ones(nz - 1)
    up[0] = 2.0
    lo[-1] = 2.0
    return sps.diags([lo, main, up], [-1, 0, 1]) / h ** 2


@dataclass
class DecouplingSolution:
    t: np.ndarray           # design grid
    z: np.ndarray
    gamma: np.ndarray       # (nt, nz, n)
    t_fine: np.ndarray
    trace: np.ndarray       # gamma(1, t) on t_fine, (nf, n)
    hbar: np.ndarray
    meta: dict = field(default_factory=dict)

    def bc_residual(self, g2, g3):
        """Max one-sided second-order residual of both Neumann conditions."""
        h = self.z[1] - self.z[0]
        G = np.moveaxis(self.gamma, 1, 0)
        return _neumann_residual(G, h, g2, g3)


def _neumann_residual(G, h, d0, d1):
    r0 = (-3 * G[0] + 4 * G[1] - G[2]) / (2 * h) - d0
    r1 = (3 * G[-1] - 4 * G[-2] + G[-3]) / (2 * h) - d1
    return float(max(np.abs(r0).max(), np.abs(r1).max()))


def solve_decoupling_ibvp(lam, mu_bar, S, g2, g3, hbar, gamma0, t, substeps=6, warm=None, be_steps=4,
                          ic_tol=None):
    """Crank-Nicolson for the homogenized decoupling problem.

    Parameters
    ----------
    g2, g3 : callable
        ``g(t, order)`` returning ``(n,)`` arrays (value and first derivative).
    hbar : array (nt, nz, n)
        Forcing on the design grid ``t``; interpolated cubically in between.
    gamma0 : array (nz, n)
        Initial field at ``t[0]``; with ``warm`` given it is first integrated
        for ``warm`` time units with the data frozen at ``t[0]``.  Without a
        warm start it must satisfy the boundary conditions at ``t[0]`` to
        within ``ic_tol`` (default ``10 h^2 (1 + max |gamma0|)``).
    """
    S = np.atleast_2d(np.asarray(S, float))
    n = S.shape[0]
    t = np.asarray(t, float)
    nt = t.size
    nz = hbar.shape[1]
    z = np.linspace(0.0, 1.0, nz)
    al, be = alpha_shift(z)
    Lap = _neumann_laplacian(nz)
    In = sps.identity(n)
    Iz = sps.identity(nz)
    # unknown ordering: node-major, gamma[z, j]
    A = lam * sps.kron(Lap, In) - sps.kron(Iz, mu_bar * np.eye(n) + S.T)
    A = sps.csc_matrix(A)
    N = nz * n
    I = sps.identity(N, format="csc")
    hspl = CubicSpline(t, hbar, axis=0) if nt > 1 else None

    def hb(tt):
        return hspl(tt) if hspl is not None else hbar[0]

    def forcing(tt, frozen=None):
        ts = tt if frozen is None else frozen
        G2, G3 = g2(ts, 0), g3(ts, 0)
        if frozen is None:
            dG2, dG3 = g2(ts, 1), g3(ts, 1)
        else:
            dG2 = dG3 = np.zeros(n)
        lin = np.outer(al, G2) + np.outer(be, G3)
        F = hb(ts) + lam * (-np.outer(np.ones(nz), G2) + np.outer(np.ones(nz), G3))
        F -= lin @ (mu_bar * np.eye(n) + S.T).T
        F -= np.outer(al, dG2) + np.outer(be, dG3)
        return F.ravel()

    def shift(tt, frozen=None):
        ts = tt if frozen is None else frozen
        return (np.outer(al, g2(ts, 0)) + np.outer(be, g3(ts, 0))).ravel()

    dt_d = (t[1] - t[0]) if nt > 1 else 1.0
    dt = dt_d / substeps
    cn = splu(sps.csc_matrix(I - 0.5 * dt * A))
    cn_rhs = sps.csr_matrix(I + 0.5 * dt * A)
    bel = splu(sps.csc_matrix(I - dt * A))

    if not warm:
        G0 = np.asarray(gamma0, float).reshape(nz, n)
        h = z[1] - z[0]
        tol = 10 * h ** 2 * (1 + np.abs(G0).max()) if ic_tol is None else ic_tol
        res = _neumann_residual(G0, h, g2(t[0], 0), g3(t[0], 0))
        if res > tol:
            raise ValueError(f"initial field violates the boundary conditions at t = {t[0]:g} "
                             f"(residual {res:.3g} > {tol:.3g}); pass warm= to start from it anyway")
    gbar = np.asarray(gamma0, float).ravel() - shift(t[0])
    meta = {"substeps": substeps}
    if warm:
        nwarm = int(round(warm / dt))
        F0 = forcing(t[0], frozen=t[0])
        for k in range(nwarm):
            if k < be_steps:
                gbar = bel.solve(gbar + dt * F0)
            else:
                gbar = cn.solve(cn_rhs @ gbar + dt * F0)
        meta["warm_time"] = nwarm * dt
        start_be = 0
    else:
        start_be = be_steps

    nf = (nt - 1) * substeps + 1
    t_fine = t[0] + dt * np.arange(nf)
    gamma = np.empty((nt, nz, n))
    trace = np.empty((nf, n))
    gcur = gbar + shift(t[0])
    gamma[0] = gcur.reshape(nz, n)
    trace[0] = gamma[0, -1]
    Fprev = forcing(t[0])
    for k in range(1, nf):
        tk = t_fine[k]
        Fk = forcing(tk)
        if k <= start_be:
            gbar = bel.solve(gbar + dt * Fk)
        else:
            gbar = cn.solve(cn_rhs @ gbar + 0.5 * dt * (Fprev + Fk))
        Fprev = Fk
        g = (gbar + shift(tk)).reshape(nz, n)
        trace[k] = g[-1]
        if k % substeps == 0:
            gamma[k // substeps] = g
    return DecouplingSolution(t, z, gamma, t_fine, trace, hbar, meta)


def observability_matrix(trace, S, t):
    """Rows ``sum_i binom(k,i) gamma^(i)(1,t)^T S^(k-i)``, ``k = 0..n-1``.

    Returns ``Q_o`` with shape ``(nt, n, n)`` and ``det Q_o`` with shape ``(nt,)``.
    """
    S = np.atleast_2d(np.asarray(S, float))
    n = S.shape[0]
    trace = np.asarray(trace, float).reshape(len(t), n)
    kspl = min(5, len(t) - 1)
    if kspl % 2 == 0:
        kspl -= 1
    spl = make_interp_spline(t, trace, k=max(kspl, 1), axis=0) if n > 1 else None
    ders = [trace] + [spl(t, nu=i) if i <= kspl else np.zeros_like(trace) for i in range(1, n)]
    Spow = [np.linalg.matrix_power(S, k) for k in range(n)]
    Q = np.zeros((len(t), n, n))
    for k in range(n):
        for i in range(k + 1):
            Q[:, k, :] += comb(k, i) * ders[i] @ Spow[k - i]
    return Q, np.linalg.det(Q)


@dataclass
class LvSchedule:
    knots: np.ndarray
    gains: np.ndarray        # (nk, n)
    spectra: np.ndarray      # placed spectrum at each knot
    coef_error: float

    def __call__(self, t):
        t = np.asarray(t, float)
        return np.stack([np.interp(t, self.knots, self.gains[:, j]) for j in range(self.gains.shape[1])],
                        axis=-1)


def design_lv(t_trace, trace, S, cm, targets, T, t_end=None):
    """Ackermann placement for ``(S, cm gamma(1,t_k)^T)`` at knots ``t_k = k T``."""
    S = np.atleast_2d(np.asarray(S, float))
    n = S.shape[0]
    t0 = t_trace[0]
    t_end = t_trace[-1] if t_end is None else t_end
    nk = int(np.floor((t_end - t0) / T + 1e-9)) + 1
    knots = t0 + T * np.arange(nk)
    if knots[-1] < t_end - 1e-12:
        knots = np.append(knots, knots[-1] + T)
    k = min(5, len(t_trace) - 1)
    spl = make_interp_spline(t_trace, trace, k=k if k % 2 else k - 1, axis=0)
    # knots beyond the trace window reuse the last sample
    ck = cm * spl(np.clip(knots, t_trace[0], t_trace[-1]))
    target_poly = np.real(np.poly(np.asarray(targets, complex)))
    gains = np.empty((knots.size, n))
    spectra = np.empty((knots.size, n), complex)
    err = 0.0
    for i, c in enumerate(ck):
        try:
            gains[i] = ackermann(S, c, targets)
        except Exception as exc:
            raise ObservabilityError(f"pole placement failed at t_k = {knots[i]:.6g}: {exc}") from exc
        Acl = S - np.outer(gains[i], c)
        spectra[i] = np.linalg.eigvals(Acl)
        err = max(err, float(np.max(np.abs(np.poly(Acl) - target_poly) / np.maximum(1.0, np.abs(target_poly)))))
    return LvSchedule(knots, gains, spectra, err)


@dataclass
class ObserverGainSet:
    t: np.ndarray
    z: np.ndarray
    Gamma: np.ndarray        # T_o^{-1}[gamma], (nt, nz, n)
    pzeta1: np.ndarray       # p_zeta(z, 1, t), (nt, nz)
    l_1: np.ndarray          # (nt,)
    lv: LvSchedule
    lam: float
    cm: float

    def l_x(self, t_index=None):
        """``l_x(z, t)`` on the design grid."""
        lv = self.lv(self.t)
        lx = np.einsum("tzn,tn->tz", self.Gamma, lv) - self.pzeta1 * self.lam / self.cm
        return lx if t_index is None else lx[t_index]


def compute_observer_gains(obs_kernel: KernelSolution, gamma: DecouplingSolution, lv: LvSchedule, lam, cm):
    """``l_1 = -p(1,1,t)/cm`` and ``l_x = T_o^{-1}[gamma^T l_v] - p_zeta(z,1,t) lam/cm``."""
    Gamma = apply_transform(obs_kernel, gamma.gamma)
    return ObserverGainSet(obs_kernel.t, obs_kernel.z, Gamma, obs_kernel.traces["pzeta1"],
                           -obs_kernel.traces["p11"] / cm, lv, lam, cm)


def observer_matrices(model, a, q, ql, cm, b, S, g1, g2, g3, l_x, l_1, l_v):
    """Linear observer ``X' = A X + B [eta, u]`` for ``X = [x_hat, v_hat]``.

    All coefficients are frozen at one time instant.  ``model`` is the
    normalized finite-difference model.
    """
    nz = model.z.size
    n = S.shape[0]
    A = np.zeros((nz + n, nz + n))
    Bm = np.zeros((nz + n, 2))
    A[:nz, :nz] = model.matrix(a, q, 0.0)
    A[nz - 1, nz - 1] -= model.eN * l_1 * cm
    A[:nz, nz - 1] -= l_x * cm
    if n:
        A[:nz, nz:] = g1
        A[0, nz:] += model.e0 * g2
        A[nz - 1, nz:] += model.eN * g3
        A[nz:, nz:] = S
        A[nz:, nz - 1] -= l_v * cm
        Bm[nz:, 0] = l_v
    Bm[:nz, 0] = l_x
    Bm[nz - 1, 0] += model.eN * (ql / cm + l_1)
    Bm[nz - 1, 1] = model.eN * b
    return A, Bm


def step_disturbance_observer(mats_now, mats_next, state, inputs_now, inputs_next, dt):
    """One Crank-Nicolson step of the observer given frozen matrices at both ends."""
    (A0, B0), (A1, B1) = mats_now, mats_next
    I = np.eye(A0.shape[0])
    rhs = (I + 0.5 * dt * A0) @ state + 0.5 * dt * (B0 @ inputs_now + B1 @ inputs_next)
    return np.linalg.solve(I - 0.5 * dt * A1, rhs)
