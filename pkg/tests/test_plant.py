import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopreg.exosys import simulate_exosystem
from coopreg.plant import (AgentSpec, normalize_agent, normalized_model, plant_model, read_outputs, step_agent,
                           step_normalized)


def simple(ell=1.0, lam="1", phi="0", a="0", q="0", ql="0", **kw):
    return AgentSpec(ell, lam, phi, a, q, ql, **kw)


def test_identity_map():
    na, cmap = normalize_agent(simple(lam="0.7"))
    z = np.linspace(0, 1, 11)
    assert np.allclose(cmap.to_normalized(z), z, atol=1e-12)
    assert np.allclose(cmap.psi(z), 1.0)
    assert na.lam == pytest.approx(0.7)
    assert na.b == pytest.approx(1.0) and na.c == 1.0 and na.cm == 1.0


def test_scaled_domain():
    na, cmap = normalize_agent(simple(ell=2.0, lam="1.2"))
    z = np.linspace(0, 2, 9)
    assert np.allclose(cmap.to_normalized(z), z / 2, atol=1e-12)
    assert na.lam == pytest.approx(1.2 / 4)


def test_nonpositive_diffusion_rejected():
    with pytest.raises(ValueError):
        normalize_agent(simple(lam="z - 0.5"))


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.0, 0.9), st.floats(-1.0, 1.0))
def test_map_is_increasing_bijection(ell, amp, conv):
    spec = simple(ell=ell, lam=f"1 + {amp}*sin(3*z)", phi=f"{conv}*z")
    _, cmap = normalize_agent(spec)
    z = np.linspace(0, ell, 301)
    zt = cmap.to_normalized(z)
    assert zt[0] == pytest.approx(0, abs=1e-12) and zt[-1] == pytest.approx(1, abs=1e-12)
    assert np.all(np.diff(zt) > 0)
    assert np.allclose(cmap.to_original(zt), z, atol=1e-6)


def test_zero_trajectory():
    spec = simple(a="-2 + sin(t)", q="1", ql="2")
    m = plant_model(spec, 41)
    x = np.zeros(41)
    for k in range(50):
        x = step_agent(spec, m, x, 0.0, [], k * 0.01, 0.01)
    assert np.all(x == 0)


def test_read_outputs_examples():
    from coopreg.exosys import Exosystem
    spec = simple(c=2.0, cm=3.0, g4=["1"], dist=Exosystem([[0.0]], [[1.0]]))
    x = np.ones(11)
    y, eta = read_outputs(spec, x, [3.0])
    assert (y, eta) == (5.0, 3.0)
    assert read_outputs(spec, x, [-7.0])[1] == eta
    assert read_outputs(spec, np.zeros(11), [0.0]) == (0.0, 0.0)


def test_lowest_mode_decay():
    mu = 3.0
    spec = simple(lam="0.5", a=f"-{mu}")
    m = plant_model(spec, 51)
    x = np.cos(np.pi * m.z) + 2.0
    dt = 1e-3
    norms = []
    for k in range(1000):
        x = step_agent(spec, m, x, 0.0, [], k * dt, dt)
        norms.append(np.sqrt(m.weights() @ x ** 2))
    t = dt * np.arange(1, 1001)
    slope = np.polyfit(t[500:], np.log(norms[500:]), 1)[0]
    # the discrete Neumann operator has the constant mode with eigenvalue exactly -mu
    assert np.max(np.linalg.eigvals(m.matrix(np.full(51, -mu), 0, 0)).real) == pytest.approx(-mu, abs=1e-9)
    assert slope == pytest.approx(-mu, abs=1e-3)


def test_mass_conservation():
    spec = simple(lam="0.8")
    m = plant_model(spec, 81)
    x = np.exp(-20 * (m.z - 0.4) ** 2)
    w = m.weights()
    m0 = w @ x
    for k in range(200):
        x = step_agent(spec, m, x, 0.0, [], k * 0.005, 0.005)
    assert abs(w @ x - m0) <= 1e-8


def _manufactured(nz, dt, T=0.5):
    """x* = cos(pi z) e^-t with source on lam=1, Neumann data zero."""
    from coopreg.exosys import Exosystem
    # source f = (pi^2 - 1) cos(pi z) e^-t enters through a one-channel disturbance d = e^-t
    spec = simple(g1=[f"({np.pi**2} - 1)*cos(pi*z)"], g2=["0"], g3=["0"], g4=["0"],
                  dist=Exosystem([[-1.0]], [[1.0]]))
    m = plant_model(spec, nz)
    x = np.cos(np.pi * m.z)
    n = int(round(T / dt))
    for k in range(n):
        t = k * dt
        x = step_agent(spec, m, x, 0.0, [np.exp(-t)], t, dt, d_next=[np.exp(-t - dt)])
    return np.abs(x - np.cos(np.pi * m.z) * np.exp(-T)).max()


def test_manufactured_solution_second_order():
    e = [_manufactured(nz, dt) for nz, dt in ((21, 0.02), (41, 0.01), (81, 0.005))]
    assert 3.2 < e[0] / e[1] < 4.8 and 3.2 < e[1] / e[2] < 4.8


def test_normalized_agent_4_small_grid(golden):
    from oracles import normalization_check
    dev, tol = normalization_check(golden.agents[3].build(), grids=(41, 81), T=0.5, dt=2e-3)
    assert np.all(dev <= 10 * tol), (dev, tol)
