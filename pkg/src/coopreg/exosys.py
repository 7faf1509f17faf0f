"""Signal generators and a small differentiable signal algebra.

Coefficients of the agents are written as strings in ``z`` and ``t``, for
example ``"0.5*sin(2*pi*(1.11*z+4*t))-28"`` or ``"step(1.3,t)+2*z+2"``.
They are parsed by sympy, differentiated symbolically in ``t`` and evaluated
through numpy.  The bump ``bump(w,t)`` and step ``step(w,t)`` primitives
carry exact derivatives computed by a recurrence.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
import sympy as sp
from scipy.linalg import expm

J_MAX = 20

_EXP_FLOOR = -745.0


# ---------------------------------------------------------------------------
# bump / step primitives
# ---------------------------------------------------------------------------

def bump(t, omega, order=0):
    """Normalized bump ``exp(-(t(1-t))**-omega) / exp(-4**omega)`` and derivatives.

    Parameters
    ----------
    t : array_like
        Evaluation times.  The bump vanishes (with all derivatives) outside
        ``(0, 1)``.
    omega : float
        Shape parameter, ``omega > 0``.
    order : int
        Derivative order, ``0 <= order <= J_MAX``.

    Notes
    -----
    With ``u = t(1-t)`` and ``h = u**-omega`` the derivatives of ``h`` obey
    ``u h^(n+1) = -(n+omega) u' h^(n) - (n(n-1)/2 + omega n) u'' h^(n-1)``
    and the bump ``theta = C exp(-h)`` obeys
    ``theta^(n+1) = -sum_k binom(n,k) h^(k+1) theta^(n-k)``.
    """
    if order < 0 or order > J_MAX:
        raise ValueError(f"derivative order {order} outside [0, {J_MAX}]")
    t = np.asarray(t, dtype=float)
    out = np.zeros((order + 1,) + t.shape)
    inside = (t > 0.0) & (t < 1.0)
    if not inside.any():
        return out[order]
    ti = t[inside]
    u = ti * (1.0 - ti)
    expo = 4.0 ** omega - u ** (-omega)
    alive = expo > _EXP_FLOOR
    ti, u, expo = ti[alive], u[alive], expo[alive]
    du = 1.0 - 2.0 * ti
    # h^(n), n = 0..order
    h = np.zeros((order + 2,) + ti.shape)
    h[0] = u ** (-omega)
    h[1] = -omega * du * h[0] / u
    for n in range(1, order + 1):
        h[n + 1] = (-(n + omega) * du * h[n] + 2.0 * (comb(n, 2) + omega * n) * h[n - 1]) / u
    th = np.zeros((order + 1,) + ti.shape)
    th[0] = np.exp(expo)
    for n in range(order):
        acc = np.zeros_like(ti)
        for k in range(n + 1):
            acc -= comb(n, k) * h[k + 1] * th[n - k]
        th[n + 1] = acc
    sub = np.zeros((order + 1, inside.sum()))
    sub[:, alive] = th
    th = sub
    out[:, inside] = th
    return out[order]


_GL_X, _GL_W = np.polynomial.legendre.leggauss(40)
_GL_PANELS = 16


def _bump_integral(t, omega):
    """int_0^t bump(s) ds for t in [0, 1] by composite Gauss-Legendre."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    edges = np.linspace(0.0, 1.0, _GL_PANELS + 1)
    out = np.empty_like(t)
    for idx, tk in np.ndenumerate(t):
        e = edges[edges < tk]
        e = np.append(e, tk)
        a, b = e[:-1, None], e[1:, None]
        x = 0.5 * (b - a) * _GL_X[None, :] + 0.5 * (a + b)
        out[idx] = np.sum(0.5 * (b - a) * _GL_W[None, :] * bump(x, omega))
    return out


@lru_cache(maxsize=None)
def bump_mass(omega):
    """Total integral of the normalized bump over ``[0, 1]``."""
    return float(_bump_integral(np.array([1.0]), omega)[0])


def step(t, omega, order=0):
    """Smooth step ``int_0^t bump / int_0^1 bump`` and its derivatives."""
    if order < 0 or order > J_MAX:
        raise ValueError(f"derivative order {order} outside [0, {J_MAX}]")
    t = np.asarray(t, dtype=float)
    if order > 0:
        return bump(t, omega, order - 1) / bump_mass(omega)
    out = np.where(t >= 1.0, 1.0, 0.0)
    mid = (t > 0.0) & (t < 1.0)
    if mid.any():
        out = out.astype(float)
        out[mid] = _bump_integral(t[mid], omega) / bump_mass(omega)
    return out


class Bump(sp.Function):
    """Symbolic ``d^order/dt^order bump(omega, t)``."""

    nargs = 3

    def fdiff(self, argindex=3):
        if argindex != 3:
            raise sp.ArgumentIndexError(self, argindex)
        w, n, t = self.args
        return Bump(w, n + 1, t)


class Step(sp.Function):
    """Symbolic smooth step ``step(omega, t)``."""

    nargs = 2

    def fdiff(self, argindex=2):
        if argindex != 2:
            raise sp.ArgumentIndexError(self, argindex)
        w, t = self.args
        return Bump(w, 0, t) / sp.Float(bump_mass(float(w)))


def _np_bump(w, n, t):
    return bump(t, float(w), int(n))


def _np_step(w, t):
    return step(t, float(w))


# ---------------------------------------------------------------------------
# Signal expression
# ---------------------------------------------------------------------------

Z, T = sp.symbols("z t", real=True)

_PARSE_NS = {
    "z": Z, "t": T, "pi": sp.pi, "E": sp.E,
    "sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "sqrt": sp.sqrt,
    "sinh": sp.sinh, "cosh": sp.cosh, "tanh": sp.tanh, "log": sp.log,
    "bump": lambda w, t: Bump(sp.Float(w), 0, t),
    "step": lambda w, t: Step(sp.Float(w), t),
}

_MODULES = [{"Bump": _np_bump, "Step": _np_step}, "numpy"]


class Signal:
    """Scalar coefficient ``f(z, t)`` with exact time derivatives.

    ``Signal("1-sin(t)")`` depends on time only; ``Signal("z**2")`` on space
    only.  Evaluation broadcasts ``z`` against ``t``.
    """

    def __init__(self, expr):
        if isinstance(expr, Signal):
            expr = expr.expr
        if isinstance(expr, (int, float)):
            expr = sp.Float(expr)
        if isinstance(expr, str):
            self.text = expr
            expr = sp.sympify(expr, locals=_PARSE_NS)
        else:
            self.text = str(expr)
        extra = expr.free_symbols - {Z, T}
        if extra:
            raise ValueError(f"unknown symbols {sorted(map(str, extra))} in {self.text!r}")
        self.expr = sp.sympify(expr)
        self._cache = {}

    @property
    def depends_on_z(self):
        return Z in self.expr.free_symbols

    @property
    def depends_on_t(self):
        return T in self.expr.free_symbols

    def derivative_expr(self, order=0, var="t"):
        s = T if var == "t" else Z
        return sp.diff(self.expr, s, order) if order else self.expr

    def _fn(self, order, zorder=0):
        key = (order, zorder)
        if key not in self._cache:
            if order > J_MAX:
                raise ValueError(f"derivative order {order} exceeds J_MAX={J_MAX}")
            e = self.expr
            if zorder:
                e = sp.diff(e, Z, zorder)
            if order:
                e = sp.diff(e, T, order)
            self._cache[key] = sp.lambdify((Z, T), e, modules=_MODULES)
        return self._cache[key]

    def __call__(self, z=0.0, t=0.0, order=0, zorder=0):
        z = np.asarray(z, dtype=float)
        t = np.asarray(t, dtype=float)
        val = self._fn(order, zorder)(z, t)
        return np.broadcast_to(np.asarray(val, dtype=float), np.broadcast(z, t).shape).copy()

    def __getstate__(self):
        # lambdified callables do not pickle; they are rebuilt on demand
        state = dict(self.__dict__)
        state["_cache"] = {}
        return state

    def at(self, t, order=0):
        """Evaluate a time-only signal (``z = 0``)."""
        return self(0.0, t, order)

    def __repr__(self):
        return f"Signal({self.text!r})"


def as_signal(x):
    return x if isinstance(x, Signal) else Signal(x)


def eval_signal(f, t, j=0, z=0.0):
    """``d^j f / dt^j`` at ``(z, t)``."""
    if j > J_MAX:
        raise ValueError(f"derivative order {j} exceeds J_MAX={J_MAX}")
    return as_signal(f)(z, t, j)


# ---------------------------------------------------------------------------
# Exosystems
# ---------------------------------------------------------------------------

@dataclass
class Exosystem:
    """Linear signal model ``w' = S w``, output ``C w``."""

    S: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if self.S.shape[0] != self.S.shape[1]:
            raise ValueError("S must be square")
        if self.C.shape[1] != self.S.shape[0]:
            raise ValueError("output matrix does not match state dimension")

    @property
    def dim(self):
        return self.S.shape[0]


@dataclass
class ExoDiagnostics:
    eig_real_max: float
    obs_rank: int
    diagonalizable: bool
    problems: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.problems


def simulate_exosystem(x: Exosystem, x0, tgrid):
    """State trajectory ``exp(S (t - t0)) x0`` on ``tgrid``; rows are times."""
    tgrid = np.asarray(tgrid, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (x.dim,):
        raise ValueError(f"initial state must have shape ({x.dim},)")
    out = np.empty((tgrid.size, x.dim))
    out[0] = x0
    dts = np.diff(tgrid)
    if dts.size and np.allclose(dts, dts[0], rtol=1e-12, atol=0):
        Phi = expm(x.S * dts[0])
        for k in range(1, tgrid.size):
            out[k] = Phi @ out[k - 1]
    else:
        for k in range(1, tgrid.size):
            out[k] = expm(x.S * (tgrid[k] - tgrid[0])) @ x0
    return out


def observability_rank(S, C, tol=1e-9):
    S = np.atleast_2d(S)
    C = np.atleast_2d(C)
    blocks = [C]
    for _ in range(S.shape[0] - 1):
        blocks.append(blocks[-1] @ S)
    O = np.vstack(blocks)
    sv = np.linalg.svd(O, compute_uv=False)
    return int(np.sum(sv > tol * max(1.0, sv[0] if sv.size else 1.0)))


def validate_exosystem(x: Exosystem, disturbance=False, tol=1e-9):
    """Spectrum on the imaginary axis, observability and diagonalizability."""
    ev, V = np.linalg.eig(x.S)
    scale = max(1.0, np.max(np.abs(ev)))
    re_max = float(np.max(np.abs(ev.real))) if ev.size else 0.0
    rank = observability_rank(x.S, x.C)
    diag = bool(np.linalg.matrix_rank(V, tol=1e-8) == x.dim)
    problems = []
    if re_max > tol * scale:
        problems.append(f"eigenvalues off the imaginary axis (max |Re| = {re_max:.3e})")
    if rank < x.dim:
        problems.append(f"unobservable: observability rank {rank} < {x.dim}")
    if disturbance and not diag:
        problems.append("S is not diagonalizable")
    return ExoDiagnostics(re_max, rank, diag, problems)
