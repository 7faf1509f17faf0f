import time

import numpy as np
import pytest

from coopreg.config import golden_config


@pytest.fixture(scope="session")
def golden():
    return golden_config()


@pytest.fixture(scope="session")
def golden_timing():
    """Wall-clock seconds spent in the golden design and simulation."""
    return {}


@pytest.fixture(scope="session")
def golden_bundle(golden, golden_timing):
    from coopreg.runner import design_all
    t0 = time.perf_counter()
    bundle = design_all(golden)
    golden_timing["design"] = time.perf_counter() - t0
    return bundle


@pytest.fixture(scope="session")
def golden_trace(golden, golden_bundle, golden_timing):
    from coopreg.runner import simulate
    t0 = time.perf_counter()
    trace = simulate(golden, golden_bundle)
    golden_timing["simulate"] = time.perf_counter() - t0
    return trace


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_dict():
    """One agent with a disturbance, coarse grids and a short horizon."""
    d = golden_config().to_dict()
    d["graph"] = {"nodes": 2, "informed": 1, "edges": [[0, 1, 1.0]]}
    d["agents"] = [d["agents"][3]]
    d["leader"]["S"] = [[0.0, -5.0], [5.0, 0.0]]
    d["design"].update(local_eigs=[[[-10.0, 5.0], [-10.0, -5.0]]], nz=21, nt=41, t_design=0.5, J=6, T=0.05)
    d["simulation"].update(t_final=0.5, dt=1e-3, nz=21, transient=0.3)
    return d


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=str):
        terminalreporter.write_line(RESULTS[key])
