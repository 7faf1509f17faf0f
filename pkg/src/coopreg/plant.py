"""Parabolic agents: model description, normalization and finite differences.

An agent on ``[0, ell]`` reads

    x_t = lam(z) x_zz + phi(z) x_z + a(z,t) x + g1(z,t)^T d
    x_z(0) = q(t) x(0) + g2(t)^T d
    x_z(ell) = ql(t) x(ell) + b u + g3(t)^T d
    y = c x(0) + g4(t)^T d,   eta = cm x(ell)

The normalizing map is ``zt = s(z)/s(ell)`` with ``s(z) = int_0^z lam^(-1/2)``
together with the state scaling ``x = psi(z) xt(zt)``,
``psi = (lam/lam(0))^(1/4) exp(-int_0^z phi/(2 lam))``.  With
``rho = psi'/psi = lam'/(4 lam) - phi/(2 lam)`` the normalized agent has the
constant diffusion ``1/s(ell)^2``, no convection and the reaction
``a + lam (rho' + rho^2) + phi rho``.  Inputs and outputs (``u``, ``y``,
``eta``, ``d``) are coordinate free.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from scipy.interpolate import CubicSpline

from .exosys import Exosystem, Signal, Z, as_signal

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


@dataclass
class AgentSpec:
    """One parabolic agent in original coordinates.

    ``g1..g4`` are lists with one signal per disturbance channel; channel
    ``r`` multiplies ``d_r = (P v)_r``.  ``g2`` and ``g4`` are read at
    ``z = 0`` and ``g3`` at ``z = ell`` if they are written with ``z``.
    """

    ell: float
    lam: Signal
    phi: Signal
    a: Signal
    q: Signal
    ql: Signal
    b: float = 1.0
    c: float = 1.0
    cm: float = 1.0
    g1: list = field(default_factory=list)
    g2: list = field(default_factory=list)
    g3: list = field(default_factory=list)
    g4: list = field(default_factory=list)
    dist: Exosystem | None = None

    def __post_init__(self):
        for name in ("lam", "phi", "a", "q", "ql"):
            setattr(self, name, as_signal(getattr(self, name)))
        m = self.dist.C.shape[0] if self.dist is not None else 0
        for name in ("g1", "g2", "g3", "g4"):
            sig = [as_signal(s) for s in getattr(self, name)] or [Signal(0.0)] * m
            if len(sig) != m:
                raise ValueError(f"{name} needs {m} channels, got {len(sig)}")
            setattr(self, name, sig)

    @property
    def nv(self):
        return self.dist.dim if self.dist is not None else 0

    def validate(self, nz=201):
        problems = []
        if self.ell <= 0:
            problems.append("domain length must be positive")
        z = np.linspace(0.0, self.ell, nz)
        lam = self.lam(z, 0.0)
        if np.min(lam) <= 0:
            problems.append(f"lam not positive on the domain (min {np.min(lam):.3e})")
        for k in ("b", "c", "cm"):
            if getattr(self, k) == 0:
                problems.append(f"{k} must be nonzero")
        if self.lam.depends_on_t or self.phi.depends_on_t:
            problems.append("lam and phi must not depend on time")
        return problems

    # disturbance coupling rows g_k^T P as functions of time
    def coupling(self, k, z, t, order=0):
        """``g_k(z,t)^T P`` with shape ``broadcast(z,t).shape + (nv,)``."""
        sig = getattr(self, f"g{k}")
        if not sig:
            return np.zeros(np.broadcast(z, t).shape + (0,))
        vals = np.stack([s(z, t, order) for s in sig], axis=-1)
        return vals @ self.dist.C


@dataclass
class CoordinateMap:
    """Spatial map ``z -> zt`` on ``[0, ell]`` and the state scaling ``psi``."""

    ell: float
    s_ell: float
    zd: np.ndarray        # dense original grid
    ztd: np.ndarray       # mapped dense grid
    psid: np.ndarray
    extra_d: np.ndarray   # lam (rho' + rho^2) + phi rho
    rho0: float
    rhol: float
    dzt0: float           # dzt/dz at 0 and ell
    dztl: float

    def __post_init__(self):
        self._fwd = CubicSpline(self.zd, self.ztd)
        self._inv = CubicSpline(self.ztd, self.zd)
        self._psi = CubicSpline(self.zd, self.psid)
        self._extra = CubicSpline(self.ztd, self.extra_d)

    def to_normalized(self, z):
        return self._fwd(z)

    def to_original(self, zt):
        return self._inv(zt)

    def psi(self, z):
        return self._psi(z)

    def extra(self, zt):
        return self._extra(zt)

    @property
    def psi0(self):
        return float(self.psid[0])

    @property
    def psil(self):
        return float(self.psid[-1])

    def state_to_normalized(self, x_of_z, zt):
        """``xt(zt) = x(z(zt)) / psi(z(zt))`` for a callable ``x``."""
        z = self.to_original(zt)
        return x_of_z(z) / self.psi(z)

    def state_to_original(self, xt_of_zt, z):
        return self.psi(z) * xt_of_zt(self.to_normalized(z))


def _cum_gauss(fn, z):
    """Cumulative integral of ``fn`` on the nodes ``z`` (Gauss-Legendre per cell)."""
    lo, hi = z[:-1], z[1:]
    s = 0.5 * (hi - lo)[:, None] * _GL_X[None] + 0.5 * (hi + lo)[:, None]
    cell = (fn(s) * _GL_W[None]).sum(axis=1) * 0.5 * (hi - lo)
    return np.concatenate([[0.0], np.cumsum(cell)])


def build_coordinate_map(spec: AgentSpec, n_dense=2001) -> CoordinateMap:
    ell = float(spec.ell)
    lam_e, phi_e = spec.lam.expr, spec.phi.expr
    d = {}
    for name, e in {
        "lam": lam_e, "dlam": sp.diff(lam_e, Z), "ddlam": sp.diff(lam_e, Z, 2),
        "phi": phi_e, "dphi": sp.diff(phi_e, Z),
    }.items():
        f = sp.lambdify(Z, e, "numpy")
        d[name] = (lambda f: lambda z: np.broadcast_to(np.asarray(f(z), float), np.shape(z)) * 1.0)(f)
    zd = np.linspace(0.0, ell, n_dense)
    lam = d["lam"](zd)
    if np.min(lam) <= 0:
        raise ValueError("lam must stay positive on the domain")
    s = _cum_gauss(lambda z: d["lam"](z) ** -0.5, zd)
    s_ell = s[-1]
    ztd = s / s_ell
    ztd[-1] = 1.0
    conv = _cum_gauss(lambda z: d["phi"](z) / (2.0 * d["lam"](z)), zd)
    psid = (lam / lam[0]) ** 0.25 * np.exp(-conv)
    dl, ddl, ph, dph = d["dlam"](zd), d["ddlam"](zd), d["phi"](zd), d["dphi"](zd)
    rho = dl / (4 * lam) - ph / (2 * lam)
    drho = (ddl * lam - dl ** 2) / (4 * lam ** 2) - (dph * lam - ph * dl) / (2 * lam ** 2)
    extra = lam * (drho + rho ** 2) + ph * rho
    dzt = lam ** -0.5 / s_ell
    return CoordinateMap(ell, s_ell, zd, ztd, psid, extra, rho[0], rho[-1], dzt[0], dzt[-1])


@dataclass
class NormalizedAgent:
    """Agent on ``[0, 1]`` with constant diffusion and no convection."""

    spec: AgentSpec
    cmap: CoordinateMap
    lam: float
    b: float
    c: float
    cm: float

    @property
    def nv(self):
        return self.spec.nv

    @property
    def S(self):
        return self.spec.dist.S if self.spec.dist is not None else np.zeros((0, 0))

    def a(self, zt, t):
        zt = np.asarray(zt, float)
        return self.spec.a(self.cmap.to_original(zt), t) + self.cmap.extra(zt)

    def q(self, t, order=0):
        val = self.spec.q.at(t, order)
        if order == 0:
            val = val - self.cmap.rho0
        return val / self.cmap.dzt0

    def ql(self, t, order=0):
        val = self.spec.ql(self.spec.ell, t, order)
        if order == 0:
            val = val - self.cmap.rhol
        return val / self.cmap.dztl

    def g1(self, zt, t, order=0):
        z = self.cmap.to_original(np.asarray(zt, float))
        return self.spec.coupling(1, z, t, order) / self.cmap.psi(z)[..., None]

    def g2(self, t, order=0):
        return self.spec.coupling(2, 0.0, t, order) / (self.cmap.psi0 * self.cmap.dzt0)

    def g3(self, t, order=0):
        return self.spec.coupling(3, self.spec.ell, t, order) / (self.cmap.psil * self.cmap.dztl)

    def g4(self, t, order=0):
        return self.spec.coupling(4, 0.0, t, order)


def normalize_agent(spec: AgentSpec, n_dense=2001):
    """Normalized agent and the coordinate map."""
    problems = spec.validate()
    if problems:
        raise ValueError("; ".join(problems))
    cmap = build_coordinate_map(spec, n_dense)
    lam = 1.0 / cmap.s_ell ** 2
    na = NormalizedAgent(spec, cmap, lam,
                         b=spec.b / (cmap.psil * cmap.dztl),
                         c=spec.c * cmap.psi0,
                         cm=spec.cm * cmap.psil)
    return na, cmap


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

@dataclass
class FDModel:
    """Method-of-lines model ``x' = A(t) x + e0 beta0 + eN betaN + src``.

    ``lam`` and ``phi`` are node values; ``beta0``/``betaN`` are the Neumann
    data after removing the Robin parts, which are folded into ``A``.
    """

    z: np.ndarray
    lam: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        z, lam, phi = self.z, self.lam, self.phi
        n = z.size
        h = z[1] - z[0]
        self.h = h
        D = np.zeros((n, n))
        i = np.arange(1, n - 1)
        D[i, i - 1] = lam[i] / h ** 2 - phi[i] / (2 * h)
        D[i, i] = -2 * lam[i] / h ** 2
        D[i, i + 1] = lam[i] / h ** 2 + phi[i] / (2 * h)
        D[0, 0], D[0, 1] = -2 * lam[0] / h ** 2, 2 * lam[0] / h ** 2
        D[-1, -1], D[-1, -2] = -2 * lam[-1] / h ** 2, 2 * lam[-1] / h ** 2
        self.D = D
        self.e0 = -2 * lam[0] / h + phi[0]
        self.eN = 2 * lam[-1] / h + phi[-1]

    def matrix(self, a, q, ql):
        """``A`` for reaction node values ``a`` and Robin coefficients."""
        A = self.D + np.diag(a)
        A[0, 0] += self.e0 * q
        A[-1, -1] += self.eN * ql
        return A

    def weights(self):
        w = np.full(self.z.size, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w


def plant_model(spec: AgentSpec, nz=101):
    z = np.linspace(0.0, spec.ell, nz)
    return FDModel(z, spec.lam(z, 0.0), spec.phi(z, 0.0))


def normalized_model(na: NormalizedAgent, nz=101):
    z = np.linspace(0.0, 1.0, nz)
    return FDModel(z, np.full(nz, na.lam), np.zeros(nz))


def step_agent(spec: AgentSpec, model: FDModel, x, u, d, t, dt, theta=0.5, u_next=None, d_next=None):
    """One theta-step (Crank-Nicolson by default) of an original-coordinate agent.

    ``u``/``d`` are the inputs at ``t``; ``u_next``/``d_next`` at ``t + dt``
    default to the same values.
    """
    u_next = u if u_next is None else u_next
    d = np.atleast_1d(np.asarray(d, float)) if spec.nv else np.zeros(0)
    d_next = d if d_next is None else np.atleast_1d(np.asarray(d_next, float))

    def parts(tt, uu, dd):
        z = model.z
        A = model.matrix(spec.a(z, tt), float(spec.q.at(tt)), float(spec.ql(spec.ell, tt)))
        src = np.zeros(z.size)
        if dd.size:
            g1 = np.stack([s(z, tt) for s in spec.g1], axis=-1) @ dd
            g2 = np.array([s(0.0, tt) for s in spec.g2]) @ dd
            g3 = np.array([s(spec.ell, tt) for s in spec.g3]) @ dd
            src += g1
            src[0] += model.e0 * g2
            src[-1] += model.eN * g3
        src[-1] += model.eN * spec.b * uu
        return A, src

    A0, s0 = parts(t, u, d)
    A1, s1 = parts(t + dt, u_next, d_next)
    I = np.eye(model.z.size)
    lhs = I - theta * dt * A1
    rhs = (I + (1 - theta) * dt * A0) @ x + dt * ((1 - theta) * s0 + theta * s1)
    return np.linalg.solve(lhs, rhs)


def read_outputs(spec: AgentSpec, x, d, t=0.0):
    """Controlled output ``y`` (with disturbance) and measurement ``eta``."""
    d = np.atleast_1d(np.asarray(d, float)) if spec.nv else np.zeros(0)
    g4 = np.array([s(0.0, t) for s in spec.g4]) if d.size else np.zeros(0)
    y = spec.c * x[0] + float(g4 @ d) if d.size else spec.c * x[0]
    return float(y), float(spec.cm * x[-1])


def step_normalized(na: NormalizedAgent, model: FDModel, x, u, v, t, dt, theta=0.5, u_next=None, v_next=None):
    """One theta-step of the normalized agent driven by the disturbance state ``v``."""
    u_next = u if u_next is None else u_next
    v = np.atleast_1d(np.asarray(v, float)) if na.nv else np.zeros(0)
    v_next = v if v_next is None else np.atleast_1d(np.asarray(v_next, float))

    def parts(tt, uu, vv):
        z = model.z
        A = model.matrix(na.a(z, tt), float(na.q(tt)), float(na.ql(tt)))
        src = np.zeros(z.size)
        if vv.size:
            src += na.g1(z, tt) @ vv
            src[0] += model.e0 * float(na.g2(tt) @ vv)
            src[-1] += model.eN * float(na.g3(tt) @ vv)
        src[-1] += model.eN * na.b * uu
        return A, src

    A0, s0 = parts(t, u, v)
    A1, s1 = parts(t + dt, u_next, v_next)
    I = np.eye(model.z.size)
    lhs = I - theta * dt * A1
    rhs = (I + (1 - theta) * dt * A0) @ x + dt * ((1 - theta) * s0 + theta * s1)
    return np.linalg.solve(lhs, rhs)
