"""Design pipeline, closed-loop co-simulation and run metrics."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import distobs, kernels, netgraph, refnet, regulator
from .config import RunConfig, initial_profile
from .exosys import simulate_exosystem, validate_exosystem
from .plant import normalize_agent, normalized_model, plant_model


class StageError(RuntimeError):
    """Design or simulation failure tagged with the stage that raised it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class SimulationError(StageError):
    pass


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


# ---------------------------------------------------------------------------
# design
# ---------------------------------------------------------------------------

@dataclass
class AgentDesign:
    index: int
    spec: object
    na: object
    cmap: object
    z: np.ndarray
    t: np.ndarray
    K: kernels.KernelSolution
    P: kernels.KernelSolution
    Pinv: kernels.KernelSolution
    reg: regulator.RegulatorSolution
    gamma: distobs.DecouplingSolution
    Qo_det: np.ndarray          # on gamma.t_fine
    lv: distobs.LvSchedule
    obs: distobs.ObserverGainSet
    targets: np.ndarray
    mu: float
    mu_bar: float
    mu_v_bar: float
    series: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)


@dataclass
class DesignBundle:
    cfg: RunConfig
    graph: netgraph.Digraph
    blocks: netgraph.LaplacianBlocks
    leader: object
    ref: refnet.ReferenceObserverDesign
    agents: list
    report: dict


def _derivs(fn, t, J):
    return np.array([fn(t, j) for j in range(J + 1)])


def _decoupling(i, na, acfg, dcfg, P, Pinv, t, z):
    """Decoupling field and ``det Q_o`` on its fine time grid."""
    n = na.nv
    g1 = na.g1(z[None, :], t[:, None])
    g3 = np.stack([na.g3(tk) for tk in t])
    hbar = distobs.compute_hbar(Pinv, P.traces["pz1"], g1, g3, na.lam)
    gam = _stage(f"agent {i}: decoupling IBVP", distobs.solve_decoupling_ibvp,
                 na.lam, acfg.mu_bar, na.S, na.g2, na.g3, hbar, np.ones((z.size, n)), t,
                 substeps=dcfg.gamma_substeps, warm=dcfg.warm_time)
    _, det = distobs.observability_matrix(gam.trace, na.S, gam.t_fine)
    return gam, det


def _grids(dcfg):
    return np.linspace(0.0, 1.0, dcfg.nz), np.linspace(0.0, dcfg.t_design, dcfg.nt)


def design_agent(i, acfg, dcfg, S_w, p):
    """Kernels, regulator and disturbance observer for one agent."""
    spec = _stage(f"agent {i}: spec", acfg.build)
    if spec.dist is not None:
        diag = validate_exosystem(spec.dist, disturbance=True)
        if not diag.ok:
            raise StageError(f"agent {i}: exosystem", "; ".join(diag.problems))
    na, cmap = _stage(f"agent {i}: normalize", normalize_agent, spec)
    nz, M = dcfg.nz, dcfg.nz - 1
    z, t = _grids(dcfg)
    J = dcfg.J
    S = na.S
    n = S.shape[0]
    lam = na.lam
    q = np.asarray(na.q(t), float) * np.ones_like(t)
    timing = {}

    t0 = time.perf_counter()
    K = _stage(f"agent {i}: controller kernel", kernels.solve_controller_kernel, na.a, q, lam, acfg.mu, t,
               M=M, tol=dcfg.kernel_tol, maxiter=dcfg.kernel_maxiter)
    P = _stage(f"agent {i}: observer kernel", kernels.solve_observer_kernel, na.a, q, lam, acfg.mu_bar, t,
               M=M, tol=dcfg.kernel_tol, maxiter=dcfg.kernel_maxiter)
    timing["kernels"] = time.perf_counter() - t0
    for name, ker in (("controller", K), ("observer", P)):
        if ker.meta["rel_change"] > dcfg.kernel_tol:
            raise StageError(f"agent {i}: {name} kernel",
                             f"relative change {ker.meta['rel_change']:.3e} above {dcfg.kernel_tol:g}")

    t0 = time.perf_counter()
    pi, pi_z = _stage(f"agent {i}: reference regulator", regulator.solve_reference_regulator,
                      S_w, p, lam, acfg.mu, na.c, z)
    ql = np.asarray(na.ql(t), float) * np.ones_like(t)
    if n:
        g1d = np.array([na.g1(z[None, :], t[:, None], j) for j in range(J + 1)])
        g2d = _derivs(lambda tt, j: np.stack([na.g2(tk, j) for tk in tt]), t, J)
        g4d = _derivs(lambda tt, j: np.stack([na.g4(tk, j) for tk in tt]), t, J)
        g3 = np.stack([na.g3(tk) for tk in t])
        B0 = np.concatenate([-g4d / na.c, g2d], axis=-1)
        h1 = regulator.compute_h1(K, g1d, g2d, lam, J)
        Phi = regulator.phi_matrices(S, lam, acfg.mu, J, z)
        psi, norms, indicator, terms = _stage(
            f"agent {i}: disturbance regulator", regulator.solve_disturbance_regulator,
            S, lam, acfg.mu, na.c, regulator.SeriesData(B0, h1), z, t, Phi)
        series = {"last_term": float(norms[-1]), "indicator": indicator, "norms": norms.tolist(),
                  "bc0": float(np.abs(psi[:, 0, n:] - g2d[0]).max()),
                  "bc_c": float(np.abs(na.c * psi[:, 0, :n] + g4d[0]).max())}
        varphi_z1 = psi[:, -1, n:]
    else:
        psi = np.zeros((t.size, nz, 0))
        norms, series = np.zeros(J + 1), {}
        g3 = np.zeros((t.size, 0))
        varphi_z1 = g3
    k_w, k_v, k_1, k_x = regulator.compute_feedback_gains(K, pi_z[-1], varphi_z1, g3, ql)
    reg = regulator.RegulatorSolution(z, t, pi, pi_z, psi, norms, J, k_w, k_v, k_1, k_x)
    timing["regulator"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    Pinv = kernels.solve_inverse_kernel(P)
    targets = acfg.targets
    if n:
        gam, det = _decoupling(i, na, acfg, dcfg, P, Pinv, t, z)
        margin = float(np.min(np.abs(det)))
        if margin <= dcfg.det_threshold:
            k = int(np.argmin(np.abs(det)))
            raise StageError(f"agent {i}: observability",
                             f"|det Q_o| = {margin:.3e} at t = {gam.t_fine[k]:.4g} below threshold")
        lv = _stage(f"agent {i}: l_v placement", distobs.design_lv, gam.t_fine, gam.trace, S, na.cm,
                    targets, dcfg.T, t_end=dcfg.t_design)
        if lv.coef_error > 1e-6:
            raise StageError(f"agent {i}: l_v placement", f"knot polynomial mismatch {lv.coef_error:.3e}")
        obs = distobs.compute_observer_gains(P, gam, lv, lam, na.cm)
        gamma_bc = gam.bc_residual(np.stack([na.g2(tk) for tk in t]), g3)
    else:
        gam, det, margin, gamma_bc = None, np.ones(1), np.inf, 0.0
        lv = distobs.LvSchedule(t[[0, -1]], np.zeros((2, 0)), np.zeros((2, 0)), 0.0)
        obs = distobs.ObserverGainSet(t, z, np.zeros((t.size, nz, 0)), P.traces["pzeta1"],
                                      -P.traces["p11"] / na.cm, lv, lam, na.cm)
    timing["observer"] = time.perf_counter() - t0

    report = {
        "lam": lam, "b": na.b, "c": na.c, "cm": na.cm,
        "kernel_iterations": {"controller": K.meta["iterations"], "observer": P.meta["iterations"]},
        "kernel_rel_change": {"controller": K.meta["rel_change"], "observer": P.meta["rel_change"]},
        "series": series,
        "det_Qo_min": margin,
        "gamma_bc_residual": gamma_bc,
        "lv_coef_error": lv.coef_error,
        "timing": timing,
    }
    return AgentDesign(i, spec, na, cmap, z, t, K, P, Pinv, reg, gam, det, lv, obs, targets,
                       acfg.mu, acfg.mu_bar, acfg.mu_v_bar, series, report)


def design_all(cfg: RunConfig, agents=None):
    """Run graph, reference observer and per-agent designs.

    ``agents`` optionally restricts the per-agent stage to a list of indices
    (1-based); the network stages always run.
    """
    cfg.validate()
    g = cfg.graph.build()
    blocks = _stage("graph", netgraph.laplacian, g)
    if not netgraph.check_rooted(g):
        raise StageError("graph", "some agents are not reachable from the leader")
    ev, nu_max = _stage("graph", netgraph.spectrum_L33, blocks)
    d = cfg.design
    if blocks.N > blocks.n and d.nu > nu_max + 1e-12:
        raise StageError("graph", f"nu = {d.nu} exceeds min Re sigma(L33) = {nu_max:.4g}")
    leader = cfg.leader.build()
    diag = validate_exosystem(leader)
    if not diag.ok:
        raise StageError("leader", "; ".join(diag.problems))
    S_w, p = leader.S, leader.C[0]
    local = [np.array([complex(re, im) for re, im in s]) for s in d.local_eigs]
    ref = _stage("reference observers", refnet.design_reference_observers, S_w, p, blocks, local, d.nu, d.a)
    chosen = range(1, blocks.N + 1) if agents is None else agents
    designs = [design_agent(i, cfg.agents[i - 1], d, S_w, p) for i in chosen]
    report = {
        "graph": {"L33_spectrum": [[z.real, z.imag] for z in ev], "nu_max": nu_max,
                  "laplacian_spectrum": sorted(np.round(np.linalg.eigvals(blocks.L).real, 12).tolist())},
        "reference": {"l_w": ref.l_w.tolist(), "local_gains": [l.tolist() for l in ref.local_gains],
                      "Fg_max_real": ref.report.get("Fg_max_real"),
                      "riccati": ref.report.get("riccati")},
        "agents": {str(a.index): a.report for a in designs},
    }
    return DesignBundle(cfg, g, blocks, leader, ref, designs, report)


def observability_margins(cfg: RunConfig):
    """Validate ``cfg`` and report ``min |det Q_o|`` per agent.

    Only the stages the margin depends on run: normalization, observer kernel
    and its inverse, and the decoupling field.
    """
    cfg.validate()
    g = cfg.graph.build()
    if not netgraph.check_rooted(g):
        raise StageError("graph", "some agents are not reachable from the leader")
    d = cfg.design
    z, t = _grids(d)
    out = {}
    for i, acfg in enumerate(cfg.agents, start=1):
        spec = _stage(f"agent {i}: spec", acfg.build)
        na, _ = _stage(f"agent {i}: normalize", normalize_agent, spec)
        if not na.nv:
            out[str(i)] = {"det_Qo_min": None, "t_min": None}
            continue
        q = np.asarray(na.q(t), float) * np.ones_like(t)
        P = _stage(f"agent {i}: observer kernel", kernels.solve_observer_kernel, na.a, q, na.lam,
                   acfg.mu_bar, t, M=d.nz - 1, tol=d.kernel_tol, maxiter=d.kernel_maxiter)
        Pinv = kernels.solve_inverse_kernel(P)
        gam, det = _decoupling(i, na, acfg, d, P, Pinv, t, z)
        k = int(np.argmin(np.abs(det)))
        out[str(i)] = {"det_Qo_min": float(abs(det[k])), "t_min": float(gam.t_fine[k]),
                       "ok": bool(abs(det[k]) > d.det_threshold)}
    return out


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass
class ClosedLoopTrace:
    t: np.ndarray
    r: np.ndarray
    r_hat: np.ndarray       # (nt, N)
    y: np.ndarray
    e_y: np.ndarray
    e_w: np.ndarray         # norms (nt, N)
    e_v: np.ndarray
    e_x: np.ndarray
    u: np.ndarray
    metrics: dict = field(default_factory=dict)

    def columns(self):
        N = self.y.shape[1]
        cols = {"t": self.t, "r": self.r}
        cols.update({f"r_hat_{i + 1}": self.r_hat[:, i] for i in range(N)})
        cols.update({f"y_{i + 1}": self.y[:, i] for i in range(N)})
        cols.update({f"e_y_{i + 1}": self.e_y[:, i] for i in range(N)})
        return cols

    def norm_columns(self):
        N = self.y.shape[1]
        cols = {"t": self.t}
        for name in ("e_w", "e_v", "e_x"):
            arr = getattr(self, name)
            cols.update({f"{name}_{i + 1}": arr[:, i] for i in range(N)})
        return cols


def _interp_matrix(src, dst):
    """Linear interpolation matrix from nodes ``src`` to points ``dst``."""
    R = np.zeros((dst.size, src.size))
    idx = np.clip(np.searchsorted(src, dst) - 1, 0, src.size - 2)
    w = (dst - src[idx]) / (src[idx + 1] - src[idx])
    R[np.arange(dst.size), idx] = 1 - w
    R[np.arange(dst.size), idx + 1] = w
    return R


class _AgentLoop:
    """Per-agent monolithic linear system ``X' = M(t) X + f(t)``.

    ``X = [x (original grid), x_hat (normalized grid), v_hat]``.
    """

    def __init__(self, ad: AgentDesign, acfg, tgrid, w_hat, v, nz, feedback="observer"):
        spec, na = ad.spec, ad.na
        self.ad, self.spec, self.na = ad, spec, na
        # the plant runs on its own grid; the observer lives on the design grid
        self.nz = nz
        self.no = no = ad.z.size
        self.n = n = na.nv
        self.pm = plant_model(spec, nz)
        self.om = normalized_model(na, no)
        zp, zn = self.pm.z, self.om.z
        if not np.allclose(zn, ad.z):
            raise SimulationError("simulate", "observer grid must match the design grid")
        t = tgrid
        self.t = t
        ones = np.ones((t.size, 1))
        self.a_p = spec.a(zp[None, :], t[:, None]) * ones
        self.q_p = np.asarray(spec.q.at(t), float) * np.ones(t.size)
        self.ql_p = np.asarray(spec.ql(spec.ell, t), float) * np.ones(t.size)
        self.a_n = na.a(zn[None, :], t[:, None]) * ones
        self.q_n = np.asarray(na.q(t), float) * np.ones(t.size)
        self.ql_n = np.asarray(na.ql(t), float) * np.ones(t.size)
        if n:
            d = v @ spec.dist.C.T                     # (nt, m)
            g1p = np.stack([s(zp[None, :], t[:, None]) * ones for s in spec.g1], axis=-1)
            self.src_p = np.einsum("tzm,tm->tz", g1p, d)
            g2p = np.stack([s(0.0, t) * np.ones(t.size) for s in spec.g2], axis=-1)
            g3p = np.stack([s(spec.ell, t) * np.ones(t.size) for s in spec.g3], axis=-1)
            g4p = np.stack([s(0.0, t) * np.ones(t.size) for s in spec.g4], axis=-1)
            self.src_p[:, 0] += self.pm.e0 * np.sum(g2p * d, axis=1)
            self.src_p[:, -1] += self.pm.eN * np.sum(g3p * d, axis=1)
            self.y_dist = np.sum(g4p * d, axis=1)
            self.g1_n = na.g1(zn[None, :], t[:, None])
            self.g2_n = np.stack([na.g2(tk) for tk in t])
            self.g3_n = np.stack([na.g3(tk) for tk in t])
        else:
            self.src_p = np.zeros((t.size, nz))
            self.y_dist = np.zeros(t.size)
        reg, obs = ad.reg, ad.obs
        sp = lambda arr: CubicSpline(ad.t, arr, axis=0)(t)
        self.k_w = reg.k_w
        self.k_v = sp(reg.k_v) if n else np.zeros((t.size, 0))
        self.k_1 = sp(reg.k_1)
        self.k_x = sp(reg.k_x)
        self.l_1 = sp(obs.l_1)
        lv = obs.lv(t) if n else np.zeros((t.size, 0))
        self.l_v = lv
        pz = sp(obs.pzeta1)
        self.l_x = (np.einsum("tzn,tn->tz", sp(obs.Gamma), lv) if n else 0.0) - pz * obs.lam / obs.cm
        self.w_hat = w_hat
        self.wq = self.om.weights()
        self.feedback = feedback
        # original state -> normalized samples x(z(zt)) / psi(z(zt))
        zo = ad.cmap.to_original(zn)
        self.R = _interp_matrix(zp, np.clip(zo, 0.0, spec.ell)) / ad.cmap.psi(zo)[:, None]
        self.dim = nz + no + n

    @property
    def obs_slice(self):
        return slice(self.nz, self.nz + self.no)

    def u_parts(self, k):
        """``u = Krow . X + u_ff`` at step ``k``."""
        nz, b = self.nz, self.na.b
        Krow = np.zeros(self.dim)
        kx = self.k_x[k] * self.wq
        if self.feedback == "observer":
            end = nz + self.no
            Krow[nz:end] = -kx / b
            Krow[end - 1] -= self.k_1[k] / b
            Krow[end:] = -self.k_v[k] / b
        else:
            # true state mapped to normalized coordinates
            Krow[:nz] = -(kx @ self.R) / b - self.k_1[k] * self.R[-1] / b
        u_ff = -float(self.k_w @ self.w_hat[k]) / b
        return Krow, u_ff

    def system(self, k, v_true=None):
        nz, n = self.nz, self.n
        Mx = np.zeros((self.dim, self.dim))
        f = np.zeros(self.dim)
        pm, om = self.pm, self.om
        Mx[:nz, :nz] = pm.matrix(self.a_p[k], self.q_p[k], self.ql_p[k])
        f[:nz] = self.src_p[k]
        A_o, B_o = distobs.observer_matrices(
            om, self.a_n[k], self.q_n[k], self.ql_n[k], self.na.cm, self.na.b,
            self.na.S, self.g1_n[k] if n else None, self.g2_n[k] if n else None,
            self.g3_n[k] if n else None, self.l_x[k], self.l_1[k], self.l_v[k])
        Mx[nz:, nz:] = A_o
        # eta = cm x(ell) from the original plant
        Mx[nz:, nz - 1] += B_o[:, 0] * self.spec.cm
        Krow, u_ff = self.u_parts(k)
        if self.feedback != "observer" and n:
            u_ff -= float(self.k_v[k] @ v_true) / self.na.b
        Mx[nz - 1] += pm.eN * self.spec.b * Krow
        f[nz - 1] += pm.eN * self.spec.b * u_ff
        Mx[nz:] += np.outer(B_o[:, 1], Krow)
        f[nz:] += B_o[:, 1] * u_ff
        return Mx, f, Krow, u_ff


def fit_slope(t, y, window=None):
    """Least-squares slope of ``log y`` over ``window``; ``nan`` if undefined."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    m = np.ones(t.size, bool) if window is None else (t >= window[0]) & (t <= window[1])
    m &= y > 0
    if m.sum() < 3:
        return float("nan")
    return float(np.polyfit(t[m], np.log(y[m]), 1)[0])


def settle_time(t, err, threshold):
    """First time after which ``|err| <= threshold`` holds for the rest of the trace."""
    bad = np.abs(err) > threshold
    if bad.ndim > 1:
        bad = bad.any(axis=1)
    if not bad.any():
        return float(t[0])
    k = int(np.nonzero(bad)[0][-1])
    return float(t[k + 1]) if k + 1 < t.size else float("inf")


def simulate(cfg: RunConfig, bundle: DesignBundle, feedback="observer", be_steps=4):
    """Co-simulate leader, reference observers, agents and local observers.

    ``feedback="state"`` feeds the true (mapped) agent state and disturbance
    state to the control law instead of the observer estimates.
    """
    sim = cfg.simulation
    nsteps = int(round(sim.t_final / sim.dt))
    tgrid = sim.dt * np.arange(nsteps + 1)
    N = bundle.blocks.N
    nw = bundle.leader.dim
    w_hat0 = np.array([a.what0 or np.zeros(nw) for a in cfg.agents], float)
    rt = refnet.simulate_reference_network(bundle.ref, cfg.leader.w0, w_hat0, tgrid)
    rec = np.arange(0, nsteps + 1, sim.record_every)
    if rec[-1] != nsteps:
        rec = np.append(rec, nsteps)
    out = {k: np.zeros((rec.size, N)) for k in ("y", "e_v", "e_x", "u")}
    r = rt.r[rec]
    for ad in bundle.agents:
        i = ad.index
        acfg = cfg.agents[i - 1]
        n = ad.na.nv
        v = simulate_exosystem(ad.spec.dist, np.asarray(acfg.v0 or np.zeros(n), float), tgrid) if n \
            else np.zeros((tgrid.size, 0))
        loop = _AgentLoop(ad, acfg, tgrid, rt.w_hat[:, i - 1], v, sim.nz, feedback)
        nz = sim.nz
        X = np.concatenate([initial_profile(acfg.x0, loop.pm.z), initial_profile(acfg.xhat0, loop.om.z),
                            np.asarray(acfg.vhat0 or np.zeros(n), float)])
        I = np.eye(loop.dim)
        M0, f0, K0, u0 = loop.system(0, v[0])
        ri = 0

        def record(k, X, Krow, u_ff):
            xo = X[:nz]
            y = ad.spec.c * xo[0] + loop.y_dist[k]
            out["y"][ri, i - 1] = y
            out["u"][ri, i - 1] = Krow @ X + u_ff
            out["e_v"][ri, i - 1] = np.linalg.norm(v[k] - X[nz + loop.no:]) if n else 0.0
            ex = loop.R @ xo - X[loop.obs_slice]
            out["e_x"][ri, i - 1] = np.sqrt(np.dot(loop.wq, ex ** 2))

        record(0, X, K0, u0)
        ri = 1
        for k in range(1, nsteps + 1):
            M1, f1, K1, u1 = loop.system(k, v[k])
            if k <= be_steps:
                X = np.linalg.solve(I - sim.dt * M1, X + sim.dt * f1)
            else:
                X = np.linalg.solve(I - 0.5 * sim.dt * M1, X + 0.5 * sim.dt * (M0 @ X + f0 + f1))
            M0, f0 = M1, f1
            if not np.all(np.isfinite(X)) or np.abs(X).max() > sim.blowup:
                raise SimulationError("simulate", f"agent {i}: state norm exceeded {sim.blowup:g} "
                                      f"at t = {tgrid[k]:.5g}")
            if ri < rec.size and k == rec[ri]:
                record(k, X, K1, u1)
                ri += 1
    ty = tgrid[rec]
    e_y = out["y"] - r[:, None]
    e_w = np.linalg.norm(rt.e_w[rec], axis=2)
    trace = ClosedLoopTrace(ty, r, rt.r_hat[rec], out["y"], e_y, e_w, out["e_v"], out["e_x"], out["u"])
    trace.metrics = metrics(trace, sim)
    return trace


def metrics(trace: ClosedLoopTrace, sim=None):
    """Sync times, post-transient error bounds and fitted decay slopes."""
    ref_thr = 0.02 if sim is None else sim.ref_threshold
    sync_thr = 0.05 if sim is None else sim.sync_threshold
    t_tr = 1.0 if sim is None else sim.transient
    amp = float(np.max(np.abs(trace.r))) if trace.r.size else 0.0
    if amp == 0.0:
        return {"amplitude": 0.0, "ref_sync_time": 0.0, "sync_time": 0.0,
                "max_post_transient_error": float(np.max(np.abs(trace.e_y))) if trace.e_y.size else 0.0,
                "slopes": None, "slopes_defined": False}
    t = trace.t
    post = t >= t_tr
    window = (t[0] + 0.1 * (t[-1] - t[0]), t_tr)
    slopes = {name: [fit_slope(t, getattr(trace, name)[:, i], window) for i in range(trace.y.shape[1])]
              for name in ("e_w", "e_v", "e_x")}
    return {
        "amplitude": amp,
        "ref_sync_time": settle_time(t, trace.r_hat - trace.r[:, None], ref_thr * amp),
        "sync_time": settle_time(t, trace.e_y, sync_thr * amp),
        "max_post_transient_error": float(np.max(np.abs(trace.e_y[post]))) if post.any() else float("nan"),
        "max_post_transient_error_per_agent": np.max(np.abs(trace.e_y[post]), axis=0).tolist()
        if post.any() else [],
        "slopes": slopes,
        "slopes_defined": True,
    }
