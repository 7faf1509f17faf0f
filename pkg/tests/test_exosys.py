import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from coopreg.exosys import (J_MAX, Exosystem, Signal, bump, eval_signal, simulate_exosystem, step,
                            validate_exosystem)

LEADER_S = np.array([[0.0, -50.0], [50.0, 0.0]])


def test_leader_example():
    x = Exosystem(LEADER_S, [[1.0, 0.0]])
    t = np.linspace(0, 2, 801)
    w = simulate_exosystem(x, [5.0, -5.0], t)
    assert w[0] @ x.C[0] == 5.0
    # closed form: rotation at 50 rad/s
    r = 5 * np.cos(50 * t) + 5 * np.sin(50 * t)
    assert np.max(np.abs(w @ x.C[0] - r)) < 1e-10


def test_matches_ode_integrator(rng):
    S = rng.normal(size=(3, 3))
    S = S - S.T
    x0 = rng.normal(size=3)
    t = np.linspace(0, 1, 51)
    ref = solve_ivp(lambda _, w: S @ w, (0, 1), x0, t_eval=t, rtol=1e-12, atol=1e-13).y.T
    w = simulate_exosystem(Exosystem(S, np.eye(3)[:1]), x0, t)
    assert np.max(np.abs(w - ref)) < 1e-9


def test_nonuniform_grid(rng):
    t = np.sort(rng.uniform(0, 1, 20))
    w = simulate_exosystem(Exosystem(LEADER_S, [[1, 0]]), [1.0, 0.0], t)
    assert np.allclose(w[:, 0], np.cos(50 * (t - t[0])), atol=1e-10)


def test_zero_generator_constant():
    w = simulate_exosystem(Exosystem(np.zeros((2, 2)), [[1, 0]]), [3.0, -1.0], np.linspace(0, 5, 11))
    assert np.all(w == np.array([3.0, -1.0]))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_skew_generator_conserves_norm(upper, x0):
    S = np.zeros((3, 3))
    S[np.triu_indices(3, 1)] = upper
    S = S - S.T
    w = simulate_exosystem(Exosystem(S, np.eye(3)[:1]), x0, np.linspace(0, 3, 61))
    assert np.allclose(np.linalg.norm(w, axis=1), np.linalg.norm(x0), atol=1e-10)


def test_ode_residual_spectral():
    # periodic dense output over one period: FFT derivative is spectrally exact
    n = 256
    t = np.arange(n) * (2 * np.pi / 50) / n
    w = simulate_exosystem(Exosystem(LEADER_S, [[1, 0]]), [5.0, -5.0], t)
    k = np.fft.fftfreq(n, d=t[1] - t[0]) * 2 * np.pi
    dw = np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(w, axis=0), axis=0))
    assert np.max(np.abs(dw - w @ LEADER_S.T)) < 1e-8


def test_validate_exosystem():
    ok = validate_exosystem(Exosystem(LEADER_S, [[1.0, 0.0]]))
    assert ok.ok and ok.obs_rank == 2
    bad = validate_exosystem(Exosystem(np.diag([1.0, -1.0]), [[1.0, 1.0]]))
    assert not bad.ok and "imaginary" in bad.problems[0]
    unobs = validate_exosystem(Exosystem(LEADER_S, [[0.0, 0.0]]))
    assert not unobs.ok and unobs.obs_rank == 0
    jordan = validate_exosystem(Exosystem([[0.0, 1.0], [0.0, 0.0]], [[1.0, 0.0]]), disturbance=True)
    assert not jordan.diagonalizable


@pytest.mark.parametrize("omega", [1.1, 1.3, 2.0])
def test_bump_and_step_values(omega):
    assert bump(0.5, omega) == pytest.approx(1.0, abs=1e-15)
    assert bump(0.0, omega) == 0.0 and bump(1.0, omega) == 0.0
    assert step(0.0, omega) == 0.0
    assert np.all(step(np.array([1.0, 1.5, 7.0]), omega) == 1.0)
    t = np.linspace(0.01, 0.99, 99)
    assert np.max(np.abs(bump(t, omega) - bump(1 - t, omega))) <= 1e-12


def test_sin_derivative_at_zero():
    assert eval_signal("sin(3*t)", 0.0, 1) == pytest.approx(3.0)


def test_order_cap():
    with pytest.raises(ValueError):
        eval_signal("sin(t)", 0.0, J_MAX + 1)
    with pytest.raises(ValueError):
        bump(0.5, 1.1, J_MAX + 1)


def _mp_bump(omega):
    w = mp.mpf(omega)
    c = mp.e ** (mp.mpf(4) ** w)
    return lambda t: c * mp.e ** (-(t * (1 - t)) ** (-w))


@pytest.mark.parametrize("omega,t", [(1.1, 0.3), (1.3, 0.55), (1.5, 0.8), (1.2, 0.12)])
@pytest.mark.parametrize("j", [1, 3, 6, 10])
def test_bump_derivatives_against_mpmath(omega, t, j):
    mp.mp.dps = 50
    ref = float(mp.diff(_mp_bump(omega), mp.mpf(t), j))
    got = float(bump(t, omega, j))
    assert got == pytest.approx(ref, rel=1e-8, abs=1e-10 * max(1.0, abs(ref)))


def test_step_derivative_is_scaled_bump():
    t = np.linspace(0.05, 0.95, 19)
    h = 1e-5
    fd = (step(t + h, 1.3) - step(t - h, 1.3)) / (2 * h)
    assert np.allclose(step(t, 1.3, 1), fd, rtol=1e-6, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 5), st.floats(-2, 2), st.floats(0.1, 3), st.floats(0.0, 1.0))
def test_analytic_signal_fd_derivative(w, phase, amp, t):
    f = Signal(f"{amp}*sin({w}*t + {phase}) + {amp}*t**2 - cos(2*t)")
    h = 1e-3
    s = np.array([-2, -1, 1, 2]) * h
    fd = (f.at(t + s[0]) - 8 * f.at(t + s[1]) + 8 * f.at(t + s[2]) - f.at(t + s[3])) / (12 * h)
    assert float(fd) == pytest.approx(float(f.at(t, 1)), abs=1e-6)


def test_signal_space_time():
    f = Signal("0.5*sin(2*pi*(1.11*z + 4*t)) - 28")
    assert f.depends_on_z and f.depends_on_t
    z = np.linspace(0, 1, 5)
    got = f(z[:, None], np.array([0.0, 0.1])[None, :])
    want = 0.5 * np.sin(2 * np.pi * (1.11 * z[:, None] + 4 * np.array([0.0, 0.1]))) - 28
    assert np.allclose(got, want)
    assert float(f(0.2, 0.3, order=1)) == pytest.approx(0.5 * 8 * np.pi * np.cos(2 * np.pi * (0.222 + 1.2)))
    with pytest.raises(ValueError):
        Signal("x + t")
