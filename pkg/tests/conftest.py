import numpy as np
import pytest

from pdrci import geometry
from pdrci.synthesis import SynthesisOptions, SynthesisResult

# Reference double-integrator set and gains, rounded to 4 significant digits.
REFERENCE_P = (
    np.array([[-0.4111, -0.1354], [0.0303, -0.5151], [0.4867, -0.2474], [0.4884, -0.0504]]),
    np.array([[-0.3257, -0.0854], [0.0404, -0.3823], [0.4867, -0.2474], [0.4883, -0.0506]]),
)
REFERENCE_W = np.array([[2.4373, -0.6691], [-0.7327, 0.8379]])
REFERENCE_K = [np.array([[-0.2246, -0.7898]]), np.array([[-0.1506, -0.5601]])]


def make_result(P, W, K, options=None):
    pp = geometry.ParamPolytope(tuple(np.asarray(p, float) for p in P), np.asarray(W, float))
    return SynthesisResult(pp, [np.asarray(k, float) for k in K], False, [], None,
                           options or SynthesisOptions())


@pytest.fixture
def reference_result():
    return make_result(REFERENCE_P, REFERENCE_W, REFERENCE_K)


_RUNS = {}


def cached_synthesis(preset, **options):
    """Synthesize once per (preset, options) for the whole session; returns (result, problem, wall)."""
    import time

    from pdrci import load_problem, synthesize

    key = (preset, tuple(sorted(options.items())))
    if key not in _RUNS:
        problem = load_problem(preset)
        start = time.perf_counter()
        result = synthesize(problem, SynthesisOptions(**options))
        _RUNS[key] = (result, result.problem or problem, time.perf_counter() - start)
    return _RUNS[key]


def half_width_1d(result):
    """Half-width of the symmetric robust interval of a scalar result."""
    poly = result.robust_set()
    return float(np.min(poly.g / np.abs(poly.F[:, 0])))
