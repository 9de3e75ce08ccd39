import os
import subprocess
import sys

import numpy as np
import pytest

from pdrci import _kernels_py, kernels, verify
from pdrci.model import demo_double_integrator


def _backend(env_value):
    env = dict(os.environ, PDRCI_PURE_PYTHON=env_value)
    proc = subprocess.run([sys.executable, "-c", "from pdrci import kernels; print(kernels.BACKEND)"],
                          capture_output=True, text=True, env=env, check=True)
    return proc.stdout.strip()


def test_environment_forces_fallback():
    assert _backend("1") == "python"


def test_default_backend_is_compiled_when_built():
    expected = "cython" if "cython" in kernels.implementations() else "python"
    assert _backend("") == expected


def test_fallback_always_available():
    assert kernels.implementations()["python"] is _kernels_py


def test_empty_input():
    for impl in kernels.implementations().values():
        assert impl.max_violation(np.eye(2), np.ones(2), np.empty((0, 2))).shape == (0,)
        assert impl.count_inside(np.eye(2), np.ones(2), np.empty((0, 2)), 0.0) == 0


@pytest.mark.parametrize("name", sorted(kernels.implementations()))
def test_rollout_matches_step_simulation(name):
    impl = kernels.implementations()[name]
    problem = demo_double_integrator()
    sys_ = problem.system
    rng = np.random.default_rng(0)
    K = [np.array([[-0.2, -0.8]]), np.array([[-0.15, -0.55]])]
    xi = verify.sample_simplex(rng, 3 * 25, 2).reshape(3, 25, 2)
    w = rng.uniform(-0.25, 0.25, (3, 25, 1))
    x0 = rng.uniform(-1, 1, (3, 2))
    stack = [np.stack(m) for m in (sys_.A, sys_.B, sys_.E, sys_.C, sys_.D)]
    X, cost = impl.rollout_lpv(*stack, np.stack(K), x0, xi, w)
    for r in range(3):
        tr = verify.simulate_closed_loop(problem, K, x0[r], xi[r], w=w[r])
        assert np.allclose(X[r], tr.x, atol=1e-12)
        assert cost[r, -1] == pytest.approx(tr.cost(), rel=1e-12)
        assert cost[r, 0] == 0.0
