"""Run configuration: JSON schema, validation and model construction.

Layout (unknown keys are rejected at every level)::

    {
      "graph":      {"nodes": 5, "informed": 2, "edges": [[0, 1, 1.0], ...]},
      "leader":     {"S": [[..]], "p": [..], "w0": [..]},
      "agents":     [{"ell": .., "lam": "..", ..., "disturbance": {"S": .., "P": ..}}, ...],
      "design":     {"local_eigs": [[[re, im], ...], ...], "a": 500, "nu": 1, ...},
      "simulation": {"t_final": 2.0, "dt": 2.5e-4, ...}
    }

Complex eigenvalues are written as ``[re, im]`` pairs.  Signals are strings in
``z`` and ``t`` (see :mod:`coopreg.exosys`).
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .exosys import Exosystem, Signal
from .netgraph import Digraph
from .plant import AgentSpec


class ConfigError(ValueError):
    pass


def _check_keys(d, allowed, where):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")


def _from_dict(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    _check_keys(d, names, where)
    try:
        return cls(**copy.deepcopy(d))
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _eigs(pairs):
    return np.array([complex(re, im) for re, im in pairs])


@dataclass
class GraphConfig:
    nodes: int          # leader included
    informed: int
    edges: list

    def build(self):
        return Digraph(self.nodes, self.informed, tuple((int(s), int(d), float(w)) for s, d, w in self.edges))


@dataclass
class LeaderConfig:
    S: list
    p: list
    w0: list

    def build(self):
        return Exosystem(np.array(self.S, float), np.array(self.p, float).reshape(1, -1))


@dataclass
class DisturbanceConfig:
    S: list
    P: list


@dataclass
class AgentConfig:
    ell: float
    lam: str
    phi: str
    a: str
    q: str
    ql: str
    mu: float
    mu_bar: float
    mu_v_bar: float
    observer_eigs: list
    b: float = 1.0
    c: float = 1.0
    cm: float = 1.0
    g1: list = field(default_factory=list)
    g2: list = field(default_factory=list)
    g3: list = field(default_factory=list)
    g4: list = field(default_factory=list)
    disturbance: dict | None = None
    x0: str = "0"
    xhat0: str = "0"
    v0: list = field(default_factory=list)
    vhat0: list = field(default_factory=list)
    what0: list = field(default_factory=list)

    def dist(self):
        if self.disturbance is None:
            return None
        d = _from_dict(DisturbanceConfig, self.disturbance, "agent.disturbance")
        return Exosystem(np.array(d.S, float), np.array(d.P, float))

    def build(self):
        return AgentSpec(self.ell, self.lam, self.phi, self.a, self.q, self.ql, self.b, self.c, self.cm,
                         list(self.g1), list(self.g2), list(self.g3), list(self.g4), self.dist())

    @property
    def targets(self):
        return _eigs(self.observer_eigs)


@dataclass
class DesignConfig:
    local_eigs: list
    a: float = 500.0
    nu: float = 1.0
    J: int = 15
    T: float = 1.0 / 150.0
    nz: int = 101
    t_design: float = 2.0
    nt: int = 401
    kernel_M: int = 100
    kernel_tol: float = 1e-8
    kernel_maxiter: int = 200
    warm_time: float = 1.0
    gamma_substeps: int = 6
    det_threshold: float = 1e-8


@dataclass
class SimulationConfig:
    t_final: float = 2.0
    dt: float = 2.5e-4
    nz: int = 101
    sync_threshold: float = 0.05
    ref_threshold: float = 0.02
    transient: float = 1.0
    record_every: int = 4
    blowup: float = 1e12


@dataclass
class RunConfig:
    graph: GraphConfig
    leader: LeaderConfig
    agents: list
    design: DesignConfig
    simulation: SimulationConfig = field(default_factory=SimulationConfig)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config: expected an object")
        _check_keys(d, {"graph", "leader", "agents", "design", "simulation"}, "config")
        for key in ("graph", "leader", "agents", "design"):
            if key not in d:
                raise ConfigError(f"config: missing section '{key}'")
        agents = [_from_dict(AgentConfig, a, f"agents[{i}]") for i, a in enumerate(d["agents"])]
        cfg = cls(_from_dict(GraphConfig, d["graph"], "graph"),
                  _from_dict(LeaderConfig, d["leader"], "leader"),
                  agents,
                  _from_dict(DesignConfig, d["design"], "design"),
                  _from_dict(SimulationConfig, d.get("simulation", {}), "simulation"))
        cfg.validate()
        return cfg

    def to_dict(self):
        return {"graph": asdict(self.graph), "leader": asdict(self.leader),
                "agents": [asdict(a) for a in self.agents], "design": asdict(self.design),
                "simulation": asdict(self.simulation)}

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def replace(self, **sim):
        """Copy with simulation fields overridden."""
        d = self.to_dict()
        d["simulation"].update({k: v for k, v in sim.items() if v is not None})
        return RunConfig.from_dict(d)

    # -- validation -----------------------------------------------------
    def validate(self):
        problems = []
        g = self.graph
        if len(self.agents) != g.nodes - 1:
            problems.append(f"graph has {g.nodes - 1} agents but {len(self.agents)} agent sections")
        if len(self.design.local_eigs) != g.informed:
            problems.append("design.local_eigs needs one set per informed agent")
        nw = np.array(self.leader.S).shape[0]
        for i, a in enumerate(self.agents, start=1):
            tag = f"agent {i}"
            if a.mu <= 0 or a.mu_bar <= 0 or a.mu_v_bar <= 0:
                problems.append(f"{tag}: mu, mu_bar and mu_v_bar must be positive")
            if a.mu_bar == a.mu_v_bar:
                problems.append(f"{tag}: mu_bar must differ from mu_v_bar")
            tg = a.targets if a.observer_eigs else np.zeros(0)
            if tg.size:
                rate = -tg.real.max()
                repeated = len(np.unique(np.round(tg, 9))) < tg.size
                if a.mu_v_bar > rate or (repeated and a.mu_v_bar >= rate):
                    problems.append(f"{tag}: mu_v_bar = {a.mu_v_bar} exceeds the decay rate of the "
                                    f"observer eigenvalues ({rate:g}{', repeated' if repeated else ''})")
            try:
                dist = a.dist()
            except (ConfigError, ValueError) as exc:
                problems.append(f"{tag}: {exc}")
                continue
            nv = dist.dim if dist is not None else 0
            if tg.size != nv:
                problems.append(f"{tag}: needs {nv} observer eigenvalues")
            for key, n in (("v0", nv), ("vhat0", nv), ("what0", nw)):
                if len(getattr(a, key)) not in (0, n):
                    problems.append(f"{tag}: {key} must have length {n}")
        d = self.design
        if d.J < 0 or d.nz < 5 or d.nt < 6 or d.T <= 0:
            problems.append("design: need J >= 0, nz >= 5, nt >= 6 and T > 0")
        s = self.simulation
        if s.dt <= 0 or s.t_final <= 0:
            problems.append("simulation: dt and t_final must be positive")
        if s.t_final > d.t_design + 1e-12:
            problems.append("simulation horizon exceeds the design window")
        if problems:
            raise ConfigError("; ".join(problems))


def golden_config():
    """The bundled four-agent example configuration."""
    text = resources.files("coopreg").joinpath("data/golden.json").read_text()
    return RunConfig.from_dict(json.loads(text))


def initial_profile(expr, z):
    """Initial profile from a signal string in ``z``."""
    return np.asarray(Signal(expr)(z, 0.0), float) * np.ones_like(z)
